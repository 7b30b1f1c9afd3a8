use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn unimix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unimix"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const MODEL: &str = r#"{"target": {"family": "gaussian", "params": {"mean": 0.0, "sd": 1.0}},
    "support": [-1.0, 1.0], "proposal": "uniform-ball", "epsilon": 0.1}"#;

const SWEEP: &str = r#"{"target": {"family": "uniform"}, "proposal": "uniform-ball", "radius": [1.0],
    "epsilon_ratio": [0.25, 0.125, 0.0625, 0.03125], "n": 256, "seed": 11}"#;

#[test]
fn check_passes_on_gaussian() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.json", MODEL);
    let out = unimix(&["check", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], true);
}

#[test]
fn config_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.json", MODEL);
    let out = unimix(&["check", "--config", &cfg, "--epsilon", "0.3"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["epsilon"], 0.1);
    let flags_only = unimix(&[
        "check",
        "--target",
        r#"{"family":"uniform"}"#,
        "--support",
        "-1,1",
        "--proposal",
        "gaussian",
        "--epsilon",
        "0.05",
    ]);
    assert_eq!(
        flags_only.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&flags_only.stderr)
    );
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"target": {"family": "uniform"}, "proposal": "uniform-ball", "radius": [1.0], "epsilon": [2.0], "seed": 1}"#,
    );
    assert_eq!(unimix(&["sweep", "--config", &bad]).status.code(), Some(1));
    let empty = write(
        dir.path(),
        "empty.json",
        r#"{"target": {"family": "uniform"}, "proposal": "uniform-ball", "radius": [1.0], "seed": 1}"#,
    );
    assert_eq!(unimix(&["sweep", "--config", &empty]).status.code(), Some(1));
    assert_eq!(
        unimix(&["sweep", "--config", "/no/such/file.json"]).status.code(),
        Some(1)
    );
    let missing_seed = write(
        dir.path(),
        "noseed.json",
        r#"{"target": {"family": "uniform"}, "proposal": "uniform-ball", "radius": [1.0], "epsilon": [0.5]}"#,
    );
    assert_eq!(unimix(&["sweep", "--config", &missing_seed]).status.code(), Some(1));
}

#[test]
fn sweep_is_deterministic_and_feeds_calibrate_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.json", SWEEP);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = unimix(&["sweep", "--config", &cfg, "--csv", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let cal = unimix(&["calibrate", "--csv", a.to_str().unwrap(), "--fit", "exact_tau"]);
    assert_eq!(cal.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&cal.stdout).unwrap();
    let exponent = report["fit"]["terms"][0]["exponent"].as_f64().unwrap();
    assert!(exponent > 1.0 && exponent <= 4.2, "exponent {exponent}");

    let plots = dir.path().join("plots");
    let out = unimix(&["plot", "--csv", a.to_str().unwrap(), "--out", plots.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(fs::read_to_string(plots.join("tau_vs_epsilon.svg"))
        .unwrap()
        .starts_with("<?xml"));
}

#[test]
fn fixed_constants_that_fail_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        r#"{"target": {"family": "uniform"}, "proposal": "uniform-ball", "radius": [1.0], "epsilon": [0.25],
            "n": 128, "seed": 2, "calibration": {"c_thm1": 1e-9, "c_lemma2": 1.0, "c3": 1.0, "t": 1}}"#,
    );
    let out = unimix(&["sweep", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("# unimix sweep schema v1"));
}

#[test]
fn bounds_report_and_violation() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = r#"{"geometry": {"dim": 1, "epsilon": 0.25, "delta1": 2.0, "radius": 1.0, "p_mode": 0.5},
        "c1": 5.4, "c2": 1.0, "gamma": 0.7, "K": 0.5, "tau": 38,
        "calibration": {"c_thm1": 5.0, "c_lemma2": 1.0, "c3": 1.0, "t": 1}}"#;
    let cfg = write(dir.path(), "b.json", inputs);
    let ok = unimix(&["bounds", "--config", &cfg, "--exact-tau", "38", "--exact-gap", "0.02"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let report: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["escape_prob"], 0.125);
    assert_eq!(report["thm1_dominates"], true);
    let bad = unimix(&["bounds", "--config", &cfg, "--exact-tau", "1000000"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn couple_reports_orderings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"target": {"family": "uniform"}, "support": [-1.0, 1.0], "proposal": "uniform-ball",
            "epsilon": 0.25, "seed": 4, "runs": 200, "stop_at_hit": true}"#,
    );
    let traj = dir.path().join("run0.csv");
    let out = unimix(&["couple", "--config", &cfg, "--trajectory", traj.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["orderings"]["runs"], 200);
    assert!(fs::read_to_string(traj).unwrap().starts_with("t,X,Y,Z,delta,U"));
}

#[test]
fn discretize_writes_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.json", MODEL);
    let chain = dir.path().join("chain.txt");
    let out = unimix(&[
        "discretize",
        "--config",
        &cfg,
        "--n",
        "64",
        "--out",
        chain.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["states"], 64);
    assert!(report["path_gap_bound"].as_f64().unwrap() <= report["spectral_gap"].as_f64().unwrap());
    assert!(chain.exists());
}
