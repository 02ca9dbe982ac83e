use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use snaflow::experiment::{resolve_out_dir, run, write_artifacts, Command, ExperimentConfig};
use snaflow::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sub {
    /// Trajectory with variational channels
    Simulate,
    /// Attractor and repeller graphs with gap statistics
    Graphs,
    /// Bisection for the critical parameter
    Bifurcate,
    /// Smooth or non-smooth verdict near the critical parameter
    Classify,
    /// Lyapunov exponents of both graphs
    Lyapunov,
    /// Box-counting ladder of a graph
    Boxdim,
    /// Hypothesis audit and gate report
    Audit,
    /// Lifted graphs and fixed-theta1 slices on the two-torus
    Figure1,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Simulate => Command::Simulate,
            Sub::Graphs => Command::Graphs,
            Sub::Bifurcate => Command::Bifurcate,
            Sub::Classify => Command::Classify,
            Sub::Lyapunov => Command::Lyapunov,
            Sub::Boxdim => Command::Boxdim,
            Sub::Audit => Command::Audit,
            Sub::Figure1 => Command::Figure1,
        }
    }
}

/// Experiments on quasiperiodically forced scalar flows.
#[derive(Debug, Parser)]
#[command(name = "snaflow", version)]
struct Cli {
    #[arg(value_enum)]
    subcommand: Sub,
    /// TOML experiment config
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir` in the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 lets the runtime choose
    #[arg(long, env = "SNAFLOW_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("snaflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: &Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config { path: "--threads".into(), message: e.to_string() })?;
    }
    let (cfg, bytes) = ExperimentConfig::from_file(&cli.config)?;
    let out = run(cli.subcommand.into(), &cfg, &bytes)?;
    let dir = resolve_out_dir(cli.out.as_deref(), &cfg);
    let paths = write_artifacts(&dir, &out.artifacts)?;
    print!("{}", out.summary);
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}
