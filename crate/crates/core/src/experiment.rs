//! Config-driven experiment runs and their on-disk artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{report_table, run_audit, AuditConfig};
use crate::bifurcation::{
    classify, locate_beta_c, BisectionConfig, BisectionTrace, ClassifyConfig, OrbitLyapunovConfig,
};
use crate::error::{Error, Result};
use crate::field::ForcedFieldFamily;
use crate::flow::{trajectory_csv, IntegratorConfig, Method, SkewFlow};
use crate::fractal::{box_count, default_epsilons, graph_point_cloud, ladder_csv, lifted_point_cloud, CloudConfig, FibreScale};
use crate::graphs::{
    gap_stats, lift_graph, lifted_csv, lyapunov_along_orbit, lyapunov_of_graph, lyapunov_relation_check, pair_csv,
    pullback_attractor, pushforward_repeller, GraphConfig, GraphPair, GraphSample, PullbackOutcome, Role,
};
use crate::return_map::SectionMap;
use crate::torus::{RotationVector, TorusPoint};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Graphs,
    Bifurcate,
    Classify,
    Lyapunov,
    Boxdim,
    Audit,
    Figure1,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Simulate,
        Command::Graphs,
        Command::Bifurcate,
        Command::Classify,
        Command::Lyapunov,
        Command::Boxdim,
        Command::Audit,
        Command::Figure1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Graphs => "graphs",
            Command::Bifurcate => "bifurcate",
            Command::Classify => "classify",
            Command::Lyapunov => "lyapunov",
            Command::Boxdim => "boxdim",
            Command::Audit => "audit",
            Command::Figure1 => "figure1",
        }
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::param("subcommand", format!("unknown subcommand `{s}`")))
    }
}

/// `"golden_pi"` or an explicit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSpec {
    Named(String),
    Vector(Vec<f64>),
}

impl Default for RhoSpec {
    fn default() -> Self {
        RhoSpec::Named("golden_pi".into())
    }
}

impl RhoSpec {
    pub fn resolve(&self) -> Result<RotationVector> {
        match self {
            RhoSpec::Named(n) if n == "golden_pi" => Ok(RotationVector::golden_pi()),
            RhoSpec::Named(n) => Err(Error::param("rho", format!("unknown named rotation vector `{n}`"))),
            RhoSpec::Vector(v) => RotationVector::new(v.clone()),
        }
    }
}

/// Fields left out keep the family's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorOverrides {
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub max_step: Option<f64>,
    pub escape_low: Option<f64>,
    pub escape_high: Option<f64>,
    pub method: Option<Method>,
}

impl IntegratorOverrides {
    pub fn apply(&self, mut cfg: IntegratorConfig) -> IntegratorConfig {
        if let Some(v) = self.rel_tol {
            cfg.rel_tol = v;
        }
        if let Some(v) = self.abs_tol {
            cfg.abs_tol = v;
        }
        if let Some(v) = self.max_step {
            cfg.max_step = v;
        }
        if let Some(v) = self.escape_low {
            cfg.escape_low = v;
        }
        if let Some(v) = self.escape_high {
            cfg.escape_high = v;
        }
        if let Some(m) = self.method {
            cfg.method = m;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateBlock {
    /// Defaults to the origin.
    pub theta0: Option<Vec<f64>>,
    pub x0: f64,
    pub t_final: f64,
    pub n_samples: usize,
    /// Unit direction for the base derivative channels; defaults to the first axis.
    pub direction: Option<Vec<f64>>,
}

impl Default for SimulateBlock {
    fn default() -> Self {
        SimulateBlock {
            theta0: None,
            x0: 0.0,
            t_final: 10.0,
            n_samples: 1000,
            direction: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BisectBlock {
    /// Defaults to the family's parameter range.
    pub range: Option<(f64, f64)>,
    pub tol_beta: f64,
    pub order_tol: f64,
    pub probe_quarters: bool,
}

impl Default for BisectBlock {
    fn default() -> Self {
        let b = BisectionConfig::default();
        BisectBlock {
            range: None,
            tol_beta: b.tol_beta,
            order_tol: b.order_tol,
            probe_quarters: b.probe_quarters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifyBlock {
    /// Located by bisection first when absent.
    pub beta_c: Option<f64>,
    pub ladder: Vec<f64>,
    /// Defaults to the width of the bisection range.
    pub scale: Option<f64>,
    pub gap_ratio_min: f64,
    pub dim_excess: f64,
    pub lambda_fraction: f64,
    pub n_points: usize,
    pub settle: usize,
}

impl Default for ClassifyBlock {
    fn default() -> Self {
        let c = ClassifyConfig::default();
        ClassifyBlock {
            beta_c: None,
            ladder: c.ladder,
            scale: None,
            gap_ratio_min: c.gap_ratio_min,
            dim_excess: c.dim_excess,
            lambda_fraction: c.lambda_fraction,
            n_points: c.n_points,
            settle: c.settle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloudKind {
    /// Orbit points on the section.
    Section,
    /// Flow points in the full torus.
    Lifted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoxdimBlock {
    pub role: Role,
    pub cloud: CloudKind,
    pub per_return: usize,
    pub n_points: usize,
    pub chains: usize,
    pub settle: usize,
    pub scale: FibreScale,
    pub epsilons: Option<Vec<f64>>,
    pub fit_window: Option<(usize, usize)>,
}

impl Default for BoxdimBlock {
    fn default() -> Self {
        let c = CloudConfig::default();
        BoxdimBlock {
            role: Role::Attractor,
            cloud: CloudKind::Section,
            per_return: 256,
            n_points: c.n_points,
            chains: c.chains,
            settle: c.settle,
            scale: c.scale,
            epsilons: None,
            fit_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Figure1Block {
    pub beta: f64,
    pub lift_grid: usize,
    /// Extra returns flowed from the interpolated graph before lifting.
    pub settle: usize,
    /// Fixed first-axis values of the slice files, snapped to the lift grid.
    pub theta1: Vec<f64>,
}

impl Default for Figure1Block {
    fn default() -> Self {
        Figure1Block {
            beta: 176.01538,
            lift_grid: 256,
            settle: 0,
            theta1: vec![0.0, 0.25, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: ForcedFieldFamily,
    #[serde(default)]
    pub rho: RhoSpec,
    #[serde(default)]
    pub section_offset: f64,
    #[serde(default)]
    pub integrator: IntegratorOverrides,
    #[serde(default)]
    pub graph: GraphConfig,
    /// Parameter for `simulate`, `graphs`, `lyapunov` and `boxdim`.
    pub beta: Option<f64>,
    #[serde(default)]
    pub lyapunov: OrbitLyapunovConfig,
    #[serde(default)]
    pub simulate: SimulateBlock,
    #[serde(default)]
    pub bisection: BisectBlock,
    #[serde(default)]
    pub classify: ClassifyBlock,
    #[serde(default)]
    pub boxdim: BoxdimBlock,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub figure1: Figure1Block,
    pub out_dir: Option<PathBuf>,
    /// Offset into the low-discrepancy sequences.
    #[serde(default)]
    pub seed: u64,
}

fn at(path: &str, e: Error) -> Error {
    match e {
        Error::Config { .. } => e,
        e if e.exit_code() == 2 => Error::Config {
            path: path.to_string(),
            message: e.to_string(),
        },
        e => e,
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config {
                path: if path == "." { String::new() } else { path },
                message: inner.message().trim().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = fs::read(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok((Self::from_toml(text)?, bytes))
    }

    pub fn validate(&self) -> Result<()> {
        self.section_map()?;
        self.graph.validate().map_err(|e| at("graph", e))?;
        if let Some(b) = self.beta {
            self.check_beta("beta", b)?;
        }
        if self.figure1.theta1.is_empty() || self.figure1.theta1.iter().any(|t| !t.is_finite()) {
            return Err(at("figure1.theta1", Error::param("theta1", "need at least one finite value")));
        }
        if let Some((lo, hi)) = self.bisection.range {
            if !(lo < hi) {
                return Err(at("bisection.range", Error::param("range", "need lo < hi")));
            }
        }
        Ok(())
    }

    fn check_beta(&self, path: &str, b: f64) -> Result<()> {
        let (lo, hi) = self.family.beta_range;
        if !(b >= lo && b <= hi) {
            return Err(at(path, Error::BetaOutOfRange { beta: b, lo, hi }));
        }
        Ok(())
    }

    pub fn section_map(&self) -> Result<SectionMap> {
        self.family.validate().map_err(|e| at("family", e))?;
        let rho = self.rho.resolve().map_err(|e| at("rho", e))?;
        let icfg = self.integrator.apply(IntegratorConfig::for_family(&self.family));
        let flow = SkewFlow::new(self.family.clone(), rho, icfg).map_err(|e| at("integrator", e))?;
        SectionMap::new(flow, self.section_offset).map_err(|e| at("section_offset", e))
    }

    fn required_beta(&self) -> Result<f64> {
        self.beta.ok_or_else(|| Error::Config {
            path: "beta".into(),
            message: "this subcommand needs `beta`".into(),
        })
    }

    pub fn bisection_config(&self) -> BisectionConfig {
        BisectionConfig {
            tol_beta: self.bisection.tol_beta,
            order_tol: self.bisection.order_tol,
            probe_quarters: self.bisection.probe_quarters,
            graph: self.graph,
            lyapunov: self.lyapunov,
        }
    }

    pub fn bisection_range(&self) -> (f64, f64) {
        self.bisection.range.unwrap_or(self.family.beta_range)
    }

    pub fn classify_config(&self) -> ClassifyConfig {
        let (lo, hi) = self.bisection_range();
        let c = &self.classify;
        ClassifyConfig {
            ladder: c.ladder.clone(),
            scale: c.scale.unwrap_or(hi - lo),
            gap_ratio_min: c.gap_ratio_min,
            dim_excess: c.dim_excess,
            lambda_fraction: c.lambda_fraction,
            n_points: c.n_points,
            settle: c.settle,
            graph: self.graph,
            lyapunov: self.lyapunov,
        }
    }

    pub fn audit_config(&self) -> AuditConfig {
        AuditConfig {
            seed: self.seed,
            ..self.audit.clone()
        }
    }
}

/// Lower-case hex SHA-256 of the raw config bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub artifacts: Vec<Artifact>,
    /// Short human-readable result for stdout.
    pub summary: String,
}

struct Meta<'a> {
    hash: &'a str,
    command: Command,
}

impl Meta<'_> {
    fn csv(&self, extra: &[(&str, String)], body: &str) -> String {
        let mut s = format!("# snaflow {VERSION}\n# config_sha256 {}\n# command {}\n", self.hash, self.command.name());
        for (k, v) in extra {
            let _ = writeln!(s, "# {k} {v}");
        }
        s.push_str(body);
        s
    }

    fn json<T: Serialize>(&self, result: &T) -> Result<String> {
        #[derive(Serialize)]
        struct Envelope<'a, T> {
            version: &'a str,
            config_sha256: &'a str,
            command: &'a str,
            result: &'a T,
        }
        let env = Envelope {
            version: VERSION,
            config_sha256: self.hash,
            command: self.command.name(),
            result,
        };
        let mut s = serde_json::to_string_pretty(&env).map_err(|e| Error::Io(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

fn artifact(name: &str, contents: String) -> Artifact {
    Artifact {
        name: name.to_string(),
        contents,
    }
}

fn require(outcome: PullbackOutcome, role: Role) -> Result<GraphSample> {
    match outcome {
        PullbackOutcome::Converged(g) => Ok(g),
        PullbackOutcome::Escaped { iteration, node } => Err(Error::GraphEscaped {
            role: match role {
                Role::Attractor => "attractor",
                Role::Repeller => "repeller",
            },
            iteration,
            node,
        }),
    }
}

fn both_graphs(map: &SectionMap, beta: f64, cfg: &GraphConfig) -> Result<(GraphSample, GraphSample)> {
    let a = require(pullback_attractor(map, beta, cfg)?, Role::Attractor)?;
    let r = require(pushforward_repeller(map, beta, cfg)?, Role::Repeller)?;
    Ok((a, r))
}

/// A value, or the numerical reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimate<T> {
    Value(T),
    Failed(String),
}

impl<T> Estimate<T> {
    fn of(r: Result<T>) -> Result<Self> {
        match r {
            Ok(v) => Ok(Estimate::Value(v)),
            Err(e) if e.is_numerical() => Ok(Estimate::Failed(e.to_string())),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphLyapunovReport {
    pub role: Role,
    pub sweeps: usize,
    pub defect: f64,
    /// Grid mean of the log fibre derivative, per unit flow time.
    pub grid: Estimate<f64>,
    /// Birkhoff average along exact orbits, per unit flow time.
    pub orbit: Estimate<f64>,
    /// Residual of the flow/map relation.
    pub relation_residual: Estimate<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub beta: f64,
    pub rho_d: f64,
    pub attractor: GraphLyapunovReport,
    pub repeller: GraphLyapunovReport,
}

fn lyapunov_report(map: &SectionMap, g: &GraphSample, l: &OrbitLyapunovConfig) -> Result<GraphLyapunovReport> {
    Ok(GraphLyapunovReport {
        role: g.role,
        sweeps: g.iterations_used,
        defect: g.defect,
        grid: Estimate::of(lyapunov_of_graph(map, g).map(|v| v.lambda_flow))?,
        orbit: Estimate::of(lyapunov_along_orbit(map, g, l.chains, l.per_chain, l.settle).map(|v| v.lambda_flow))?,
        relation_residual: Estimate::of(lyapunov_relation_check(map, g).map(|v| v.residual))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct GapReport {
    beta: f64,
    grid_n: usize,
    gap_min: f64,
    gap_median: f64,
    gap_max: f64,
    argmin_theta: Vec<f64>,
    sweeps_attractor: usize,
    sweeps_repeller: usize,
    defect_attractor: f64,
    defect_repeller: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ClassifyOutput {
    bisection: Option<BisectionTrace>,
    classification: crate::bifurcation::BifurcationClassification,
}

/// Compute every artifact of `command` in memory; nothing touches disk.
pub fn run(command: Command, cfg: &ExperimentConfig, config_bytes: &[u8]) -> Result<RunOutput> {
    let hash = config_hash(config_bytes);
    let meta = Meta { hash: &hash, command };
    let map = cfg.section_map()?;
    match command {
        Command::Simulate => {
            let beta = cfg.required_beta()?;
            let dim = map.flow.dim();
            let s = &cfg.simulate;
            let theta0 = TorusPoint::new(s.theta0.clone().unwrap_or_else(|| vec![0.0; dim]));
            let dir = s.direction.clone().unwrap_or_else(|| {
                let mut v = vec![0.0; dim];
                v[0] = 1.0;
                v
            });
            let states = map
                .flow
                .trajectory(beta, &theta0, s.x0, s.t_final, s.n_samples, &dir)
                .map_err(|e| at("simulate", e))?;
            let last = states.last().copied().unwrap_or_default();
            let escape = last.escape_time.map(|t| format!("{t:e}")).unwrap_or_else(|| "none".into());
            let body = meta.csv(&[("beta", format!("{beta:e}")), ("escape_time", escape.clone())], &trajectory_csv(&states));
            Ok(RunOutput {
                artifacts: vec![artifact("trajectory.csv", body)],
                summary: format!("{} samples, final x = {:e}, escape time {escape}\n", states.len(), last.x),
            })
        }
        Command::Graphs => {
            let beta = cfg.required_beta()?;
            let (a, r) = both_graphs(&map, beta, &cfg.graph)?;
            let st = gap_stats(&a, &r)?;
            let rep = GapReport {
                beta,
                grid_n: a.n,
                gap_min: st.gap_min,
                gap_median: st.gap_median,
                gap_max: st.gap_max,
                argmin_theta: st.argmin_theta.coords().to_vec(),
                sweeps_attractor: a.iterations_used,
                sweeps_repeller: r.iterations_used,
                defect_attractor: a.defect,
                defect_repeller: r.defect,
            };
            let pair = GraphPair::new(a, r)?;
            let summary = format!("gap min {:e}, median {:e}, max {:e}\n", rep.gap_min, rep.gap_median, rep.gap_max);
            Ok(RunOutput {
                artifacts: vec![
                    artifact("graphs.csv", meta.csv(&[("beta", format!("{beta:e}"))], &pair_csv(&pair))),
                    artifact("gap_stats.json", meta.json(&rep)?),
                ],
                summary,
            })
        }
        Command::Bifurcate => {
            let trace = locate_beta_c(&map, cfg.bisection_range(), &cfg.bisection_config())?;
            let summary = format!("beta_c = {:.10} (+/- {:e}), {} evaluations\n", trace.beta_c, trace.tol, trace.records.len());
            Ok(RunOutput {
                artifacts: vec![artifact("trace.json", meta.json(&trace)?)],
                summary,
            })
        }
        Command::Classify => {
            let (bisection, beta_c) = match cfg.classify.beta_c {
                Some(b) => (None, b),
                None => {
                    let t = locate_beta_c(&map, cfg.bisection_range(), &cfg.bisection_config())?;
                    let b = t.beta_c;
                    (Some(t), b)
                }
            };
            let classification = classify(&map, beta_c, &cfg.classify_config())?;
            let summary = format!("beta_c = {:.10}, verdict {:?}\n", beta_c, classification.verdict);
            let out = ClassifyOutput { bisection, classification };
            Ok(RunOutput {
                artifacts: vec![artifact("classification.json", meta.json(&out)?)],
                summary,
            })
        }
        Command::Lyapunov => {
            let beta = cfg.required_beta()?;
            let (a, r) = both_graphs(&map, beta, &cfg.graph)?;
            let rep = LyapunovReport {
                beta,
                rho_d: map.rho_d(),
                attractor: lyapunov_report(&map, &a, &cfg.lyapunov)?,
                repeller: lyapunov_report(&map, &r, &cfg.lyapunov)?,
            };
            let summary = format!("attractor {:?}, repeller {:?} (orbit, per unit time)\n", rep.attractor.orbit, rep.repeller.orbit);
            Ok(RunOutput {
                artifacts: vec![artifact("lyapunov.json", meta.json(&rep)?)],
                summary,
            })
        }
        Command::Boxdim => {
            let beta = cfg.required_beta()?;
            let b = &cfg.boxdim;
            let g = match b.role {
                Role::Attractor => require(pullback_attractor(&map, beta, &cfg.graph)?, Role::Attractor)?,
                Role::Repeller => require(pushforward_repeller(&map, beta, &cfg.graph)?, Role::Repeller)?,
            };
            let cc = CloudConfig {
                n_points: b.n_points,
                chains: b.chains,
                settle: b.settle,
                scale: b.scale,
                section_c: cfg.graph.section_c,
            };
            let cloud = match b.cloud {
                CloudKind::Section => graph_point_cloud(&map, &g, &cc),
                CloudKind::Lifted => lifted_point_cloud(&map, &g, b.per_return, &cc),
            }
            .map_err(|e| at("boxdim", e))?;
            let eps = b.epsilons.clone().unwrap_or_else(|| default_epsilons(map.d()));
            let ladder = box_count(&cloud, &eps, b.fit_window).map_err(|e| at("boxdim", e))?;
            let extra = [
                ("beta", format!("{beta:e}")),
                ("points", cloud.len().to_string()),
                ("slope", format!("{:e}", ladder.slope)),
                ("slope_stderr", format!("{:e}", ladder.slope_stderr)),
                ("fit_window", format!("{} {}", ladder.fit_window.0, ladder.fit_window.1)),
            ];
            let summary = format!("box dimension {:.4} +/- {:.4}\n", ladder.slope, ladder.slope_stderr);
            Ok(RunOutput {
                artifacts: vec![artifact("ladder.csv", meta.csv(&extra, &ladder_csv(&ladder)))],
                summary,
            })
        }
        Command::Audit => {
            let report = run_audit(&map, &cfg.audit_config())?;
            let table = report_table(&report);
            Ok(RunOutput {
                artifacts: vec![artifact("audit.json", meta.json(&report)?)],
                summary: table,
            })
        }
        Command::Figure1 => figure1(&map, cfg, &meta),
    }
}

fn figure1(map: &SectionMap, cfg: &ExperimentConfig, meta: &Meta) -> Result<RunOutput> {
    if map.flow.dim() != 2 {
        return Err(at("rho", Error::DimensionMismatch { expected: 2, got: map.flow.dim() }));
    }
    let f = &cfg.figure1;
    let beta = f.beta;
    cfg.check_beta("figure1.beta", beta)?;
    let (a, r) = both_graphs(map, beta, &cfg.graph)?;
    let st = gap_stats(&a, &r)?;
    let la = lift_graph(map, &a, f.lift_grid, f.settle)?;
    let lr = lift_graph(map, &r, f.lift_grid, f.settle)?;
    let common = [
        ("beta", format!("{beta:e}")),
        ("section_gap_min", format!("{:e}", st.gap_min)),
        ("section_gap_median", format!("{:e}", st.gap_median)),
    ];
    let mut artifacts = vec![
        artifact("attractor_lift.csv", meta.csv(&common, &lifted_csv(&la))),
        artifact("repeller_lift.csv", meta.csv(&common, &lifted_csv(&lr))),
    ];
    let n = f.lift_grid;
    for (k, t) in f.theta1.iter().enumerate() {
        let i0 = ((t.rem_euclid(1.0) * n as f64).round() as usize) % n;
        let theta1 = i0 as f64 / n as f64;
        let mut body = String::from("theta2,attractor,repeller\n");
        for ((t2, xa), (_, xr)) in la.slice_first_axis(i0).into_iter().zip(lr.slice_first_axis(i0)) {
            let _ = writeln!(body, "{t2:e},{xa:e},{xr:e}");
        }
        let mut extra = common.to_vec();
        extra.push(("theta1", format!("{theta1:e}")));
        artifacts.push(artifact(&format!("slice_{}.csv", k + 1), meta.csv(&extra, &body)));
    }
    Ok(RunOutput {
        summary: format!(
            "beta = {beta}, section gap min {:e}, median {:e}, {} slices\n",
            st.gap_min,
            st.gap_median,
            f.theta1.len()
        ),
        artifacts,
    })
}

/// Write every artifact to a temporary name in `dir`, then rename them all.
/// On failure the temporaries are removed and no artifact appears.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let tmp: Vec<PathBuf> = artifacts.iter().map(|a| dir.join(format!(".{}.tmp", a.name))).collect();
    let cleanup = |paths: &[PathBuf]| {
        for p in paths {
            let _ = fs::remove_file(p);
        }
    };
    for (a, p) in artifacts.iter().zip(&tmp) {
        if let Err(e) = fs::write(p, a.contents.as_bytes()) {
            cleanup(&tmp);
            return Err(e.into());
        }
    }
    let mut out = Vec::with_capacity(artifacts.len());
    for (a, p) in artifacts.iter().zip(&tmp) {
        let dest = dir.join(&a.name);
        if let Err(e) = fs::rename(p, &dest) {
            cleanup(&tmp);
            return Err(e.into());
        }
        out.push(dest);
    }
    Ok(out)
}

/// `--out` beats the config's `out_dir`, which beats `./out`.
pub fn resolve_out_dir(cli: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}
