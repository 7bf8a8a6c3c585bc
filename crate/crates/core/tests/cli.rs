use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dgvi::data::synthetic::{two_room_scans, TwoRoomConfig};

fn dgvi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dgvi")).args(args).output().expect("spawn dgvi")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn banana() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/banana.csv")
}

/// A short Banana run written next to `dir`.
fn small_config(dir: &Path) -> PathBuf {
    let cfg = format!(
        r#"{{
            "task": "classify",
            "graph": {{"n_agents": 2, "topology": "complete"}},
            "kernel": {{"n_random": 20, "lengthscale": 0.3}},
            "data": {{"source": {{"kind": "csv", "path": "{}"}},
                      "split": {{"train": 0.6, "test": 0.2, "verify": 0.2}}}},
            "run": {{"n_rounds": 300, "eval_every": 100, "seed": 4}},
            "export": {{"out_dir": "out", "grid": {{"resolution": 5}}, "feature_stats": true}}
        }}"#,
        banana().display()
    );
    let path = dir.join("small.json");
    std::fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = dgvi(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    for f in ["metrics.csv", "summary.json", "kernel.json", "config.json", "grid.csv", "features.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(out.join("beliefs/agent_1.json").exists());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("round,agent,consensus_err,verif_bce,verif_acc,ms"));
    assert_eq!(metrics.lines().count(), 1 + 3 * 2);
    assert_eq!(std::fs::read_to_string(out.join("grid.csv")).unwrap().lines().count(), 1 + 25);
    assert_eq!(std::fs::read_to_string(out.join("features.csv")).unwrap().lines().count(), 1 + 20);
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["rounds"], 300);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let mut tables = Vec::new();
    for (i, threads) in ["1", "3", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let o = dgvi(&["run", "--config", cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        tables.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    assert_eq!(tables[1], tables[2]);

    let other = dir.path().join("seeded");
    let o = dgvi(&["run", "--config", cfg, "--out", other.to_str().unwrap(), "--seed", "99"]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(std::fs::read(other.join("metrics.csv")).unwrap(), tables[0]);
}

#[test]
fn missing_config_is_a_validation_error() {
    let o = dgvi(&["run", "--config", "/nonexistent/banana.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/banana.json"));
}

#[test]
fn invalid_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"task": "classify", "no_such_field": 1}"#).unwrap();
    let o = dgvi(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_field"), "{}", stderr(&o));
}

#[test]
fn usage_errors() {
    let o = dgvi(&["run", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(dgvi(&["frobnicate"]).status.code(), Some(1));
    let o = dgvi(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["run", "eval", "verify", "export", "normalize-graph", "convert-lidar"] {
        assert!(stdout(&o).contains(sub), "help lacks {sub}");
    }
}

#[test]
fn verify_example1() {
    let dir = tempfile::tempdir().unwrap();
    let particles = dir.path().join("particles.json");
    let o = dgvi(&["verify", "--suite", "example1", "--seed", "7", "--particles", particles.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.contains("mean gap")).expect("gap line");
    assert!(line.starts_with("PASS"));
    let gap: f64 = line.split_whitespace().rev().nth(2).unwrap().parse().unwrap();
    assert!(gap <= 0.1);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(particles).unwrap()).unwrap();
    assert_eq!(json["particles"].as_array().unwrap().len(), 100_000);
    assert!((json["analytic_mean"][0].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn verify_numeric_suites() {
    for suite in ["woodbury", "sinkhorn", "regression"] {
        let o = dgvi(&["verify", "--suite", suite, "--seed", "1"]);
        assert_eq!(o.status.code(), Some(0), "{suite}: {}", stdout(&o));
        assert!(stdout(&o).contains("0 failed"));
    }
    assert_eq!(dgvi(&["verify", "--suite", "nope"]).status.code(), Some(1));
}

#[test]
fn eval_and_export_saved_belief() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    assert_eq!(dgvi(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(0));
    let out = dir.path().join("out");
    let belief = out.join("beliefs/agent_0.json");
    let kernel = out.join("kernel.json");
    let o = dgvi(&[
        "eval",
        "--belief",
        belief.to_str().unwrap(),
        "--kernel",
        kernel.to_str().unwrap(),
        "--data",
        banana().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["n"], 5300);
    assert!(report["accuracy"].as_f64().unwrap() > 0.5);

    let grid = dir.path().join("g/grid.csv");
    let feats = dir.path().join("g/features.csv");
    let o = dgvi(&[
        "export",
        "--belief",
        belief.to_str().unwrap(),
        "--kernel",
        kernel.to_str().unwrap(),
        "--bounds",
        "-3",
        "3",
        "-3",
        "3",
        "--resolution",
        "4",
        "--out",
        grid.to_str().unwrap(),
        "--features",
        feats.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(grid).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y,prob"));
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(&first[..2], &[-3.0, -3.0]);
    assert!(feats.exists());

    let o = dgvi(&["eval", "--belief", "/nope.json", "--kernel", kernel.to_str().unwrap(), "--data", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn normalize_graph_from_weights_and_edges() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("g.json");
    let output = dir.path().join("w.json");
    std::fs::write(&input, r#"{"n": 3, "edges": [], "weights": [[1, 2, 0], [0, 1, 2], [2, 0, 1]]}"#).unwrap();
    let o = dgvi(&["normalize-graph", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let w: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&output).unwrap()).unwrap();
    for i in 0..3 {
        let row: f64 = (0..3).map(|j| w["weights"][i][j].as_f64().unwrap()).sum();
        let col: f64 = (0..3).map(|j| w["weights"][j][i].as_f64().unwrap()).sum();
        assert!((row - 1.0).abs() < 1e-10 && (col - 1.0).abs() < 1e-10);
    }

    std::fs::write(&input, r#"{"n": 3, "edges": [[0, 1], [1, 2]]}"#).unwrap();
    let o = dgvi(&["normalize-graph", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let w: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&output).unwrap()).unwrap();
    // Metropolis: 1 / (1 + max(deg_0, deg_1)) = 1/3
    assert!((w["weights"][0][1].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-15);

    std::fs::write(&input, r#"{"n": 4, "edges": [[0, 1], [2, 3]]}"#).unwrap();
    let o = dgvi(&["normalize-graph", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn convert_lidar_streams_points() {
    let dir = tempfile::tempdir().unwrap();
    let scans = two_room_scans(&TwoRoomConfig {
        n_robots: 1,
        scans_per_robot: 3,
        beams_per_scan: 5,
        ..TwoRoomConfig::default()
    })
    .unwrap();
    let input = dir.path().join("scans.jsonl");
    let body: String = scans.iter().map(|s| serde_json::to_string(s).unwrap() + "\n").collect();
    std::fs::write(&input, body).unwrap();
    let output = dir.path().join("points.csv");
    let o = dgvi(&[
        "convert-lidar",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--n-free",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let pts = dgvi::data::load_labeled_csv(&output).unwrap();
    // 15 beams, 2 free points each, plus at most one hit each
    assert!(pts.len() >= 30 && pts.len() <= 45, "{}", pts.len());

    let o = dgvi(&["convert-lidar", "--input", "/missing.jsonl", "--output", output.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}
