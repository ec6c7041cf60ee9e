use std::path::Path;
use std::process::{Command, Output};

fn mde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mde")).args(args).output().expect("spawn mde")
}

fn trace(dir: &Path, name: &str) -> Vec<u8> {
    let path = dir.join(name);
    let out = mde(&["simulate", "--profile", "ci", "--seed", "7", "--max-iters", "200", "--out", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::read(path).unwrap()
}

#[test]
fn simulate_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let a = trace(dir.path(), "a.csv");
    let b = trace(dir.path(), "b.csv");
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let header = String::from_utf8_lossy(&a).lines().next().unwrap().to_string();
    assert!(header.starts_with("t,node,"), "{header}");
}

#[test]
fn plotdata_carries_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plot.csv");
    let out = mde(&["simulate", "--profile", "ci", "--n", "12", "--radius", "0.6", "--max-iters", "50", "--plotdata", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# mde-core"));
    assert_eq!(lines.next().unwrap(), "t,node,theta_hat");
    assert_eq!(lines.count(), 50 * 12 + 12);
}

#[test]
fn psi_prints_exact_value() {
    let out = mde(&["analyze", "psi", "--n", "50", "--p1", "0.5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("psi(50, 0.5) = 0.0408527"), "{text}");
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let out = mde(&[
        "sweep", "--profile", "ci", "--replicates", "3", "--snr-grid", "-10,20", "--n", "10", "--radius", "0.7",
        "--max-iters", "100", "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 3);
}

#[test]
fn oracle_agrees_with_enumeration() {
    let out = mde(&["oracle", "--y", "0.1,-0.3,9.8,10.4,10.1"]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("agree = true"));
}

#[test]
fn exit_codes() {
    assert_eq!(mde(&["--help"]).status.code(), Some(0));
    assert_eq!(mde(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mde(&["simulate", "--p1", "1.5"]).status.code(), Some(1));
    assert_eq!(mde(&["simulate", "--set", "engine.no_such_field=3"]).status.code(), Some(1));
    assert_eq!(mde(&["simulate", "--config", "/nonexistent/cfg.json"]).status.code(), Some(1));
    // A graph that cannot be connected within the attempt budget is a runtime failure.
    let out = mde(&["simulate", "--n", "40", "--radius", "0.01", "--set", "topology.attempt_budget=3"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn edge_list_topology_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("ring.txt");
    std::fs::write(&edges, "# ring\n0 1\n1 2\n2 3  # last chord\n3 0\n").unwrap();
    let cfg = dir.path().join("c.json");
    let doc = format!(
        r#"{{"params": {{"n": 4, "theta": 5.0}}, "topology": {{"kind": "edge_list", "path": {:?}}}, "engine": {{"max_iters": 50}}}}"#,
        edges.to_str().unwrap()
    );
    std::fs::write(&cfg, doc).unwrap();
    let out = mde(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8(out.stdout).unwrap().contains("n = 4, edges = 4"));
}
