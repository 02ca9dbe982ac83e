use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn snaflow(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_snaflow"));
    c.args(args).env_remove("SNAFLOW_THREADS");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn graphs(cfg: &Path, out: &Path, extra: &[&str], env: &[(&str, &str)]) -> Output {
    let mut a = vec!["graphs", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    a.extend_from_slice(extra);
    snaflow(&a, env)
}

fn oracle_with(dir: &Path, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(config("oracle.toml")).unwrap();
    assert!(text.contains(from));
    let p = dir.join("edited.toml");
    fs::write(&p, text.replace(from, to)).unwrap();
    p
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn success_writes_hashed_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("oracle.toml");
    let o = graphs(&cfg, tmp.path(), &[], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let hash = format!("{:x}", Sha256::digest(fs::read(&cfg).unwrap()));
    let files = listing(tmp.path());
    assert!(files.iter().any(|(n, _)| n == "graphs.csv"));
    assert!(files.iter().any(|(n, _)| n == "gap_stats.json"));
    for (name, bytes) in &files {
        assert!(String::from_utf8_lossy(bytes).contains(&hash), "{name} lacks the config hash");
    }
}

#[test]
fn reruns_are_byte_identical_across_thread_settings() {
    let cfg = config("oracle.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert!(graphs(&cfg, a.path(), &[], &[]).status.success());
    assert!(graphs(&cfg, b.path(), &["--threads", "1"], &[]).status.success());
    assert!(graphs(&cfg, c.path(), &[], &[("SNAFLOW_THREADS", "2")]).status.success());
    assert_eq!(listing(a.path()), listing(b.path()));
    assert_eq!(listing(a.path()), listing(c.path()));
}

#[test]
fn flag_beats_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = graphs(&config("oracle.toml"), tmp.path(), &["--threads", "1"], &[("SNAFLOW_THREADS", "many")]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = graphs(&config("oracle.toml"), tmp.path(), &[], &[("SNAFLOW_THREADS", "many")]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let p = oracle_with(tmp.path(), "grid_n = 16", "grid_n = \"x\"");
    let o = graphs(&p, tmp.path(), &[], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("graph.grid_n"));
    let o = graphs(&tmp.path().join("missing.toml"), tmp.path(), &[], &[]);
    assert_eq!(o.status.code(), Some(2));
    let o = snaflow(&["nonsense", "--config", "x.toml"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

// past the collision the attractor graph leaves the section
#[test]
fn numerical_failure_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let p = oracle_with(tmp.path(), "beta = 0.25", "beta = 0.9");
    let out = tmp.path().join("out");
    let o = graphs(&p, &out, &[], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("graphs.csv").exists());
}
