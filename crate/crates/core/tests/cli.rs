use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};

fn run(dir: &Path, name: &str, cfg: &Value, extra: &[&str]) -> (i32, String) {
    let path = dir.join(format!("{name}.json.in"));
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_idla-lab"))
        .arg(&path)
        .args(extra)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

#[test]
fn crossing_with_wide_shell_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"experiment": "crossing", "params": {"d": 2, "r": 8, "h": 4, "v": "full"},
                     "trials": 10, "master_seed": 1, "output": "x"});
    let (code, err) = run(dir.path(), "c", &cfg, &[]);
    assert_eq!(code, 1);
    assert!(err.contains("0 < h < r/2"), "{err}");
}

#[test]
fn unknown_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"experiment": "fluctuations", "params": {"d": 2, "n": 5, "runs": 3}, "master_seed": 1});
    let (code, err) = run(dir.path(), "c", &cfg, &[]);
    assert_eq!(code, 1);
    assert!(err.contains("runs"), "{err}");
}

#[test]
fn single_explorer_fluctuation_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"experiment": "fluctuations", "params": {"d": 2, "n": 1}, "master_seed": 1, "output": "f"});
    assert_eq!(run(dir.path(), "c", &cfg, &[]).0, 0);
    let csv = read(dir.path(), "f.csv");
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[2], row[3]), ("0", "0"));
}

#[test]
fn sweep_over_h_gives_increasing_abscissa() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"experiment": "crossing", "params": {"d": 2, "r": 20, "v": "full"}, "trials": 2000,
                     "master_seed": 3, "output": "s", "sweep": {"axis": "h", "values": [4, 6, 8]}});
    assert_eq!(run(dir.path(), "c", &cfg, &[]).0, 0);
    let csv = read(dir.path(), "s.csv");
    let xs: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert_eq!(xs.len(), 3);
    assert!(xs.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn empty_sweep_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"experiment": "fluctuations", "params": {"d": 2, "n": 10}, "master_seed": 1,
                     "sweep": {"axis": "n", "values": []}});
    assert_eq!(run(dir.path(), "c", &cfg, &[]).0, 1);
}

#[test]
fn repeated_runs_have_identical_csv_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"experiment": "crossing", "params": {"d": 2, "r": 10, "h": 3, "v": "half"},
                     "trials": 5000, "master_seed": 7});
    assert_eq!(run(dir.path(), "c", &cfg, &["--out", "a", "--threads", "1"]).0, 0);
    assert_eq!(run(dir.path(), "c", &cfg, &["--out", "b", "--threads", "3"]).0, 0);
    assert_eq!(read(dir.path(), "a.csv"), read(dir.path(), "b.csv"));
    let meta: Value = serde_json::from_str(&read(dir.path(), "a.json")).unwrap();
    assert_eq!(meta["config"]["master_seed"], 7);
    assert_eq!(meta["seed"], 7);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"experiment": "crossing", "params": {"d": 2, "r": 10, "h": 3, "v": "full"},
                     "trials": 100, "master_seed": 7, "output": "o"});
    assert_eq!(run(dir.path(), "c", &cfg, &["--seed", "99", "--trials", "50"]).0, 0);
    let csv = read(dir.path(), "o.csv");
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!((row[5], row[11]), ("50", "99"));
}

#[test]
fn abelian_negative_result_exits_two() {
    // An alpha just under 1 turns any p-value into a failure.
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"experiment": "abelian", "params": {"explorers": {"sites": [[0, 0], [0, 0], [1, 0]]},
                     "ordering_a": "by_site_lex", "ordering_b": "by_site_reversed", "alpha": 0.999999},
                     "trials": 2000, "master_seed": 5, "output": "ab"});
    assert_eq!(run(dir.path(), "c", &cfg, &[]).0, 2);
    assert!(read(dir.path(), "ab.csv").starts_with("shape,count_a,count_b\n"));
}

#[test]
fn idla_writes_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("eta.txt"), "0 0 5\n3 0 2\n").unwrap();
    let cfg = json!({"experiment": "idla", "params": {"explorers": {"file": "eta.txt"}, "ordering": "by_site_reversed"},
                     "master_seed": 2, "output": "cl"});
    assert_eq!(run(dir.path(), "c", &cfg, &[]).0, 0);
    assert_eq!(read(dir.path(), "cl.csv").lines().count(), 8);
    assert!(dir.path().join("cl.sites").exists() && dir.path().join("cl.order").exists());
}

#[test]
fn oracle_and_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cross = json!({"experiment": "crossing", "params": {"d": 2, "r": 16, "v": "full"}, "trials": 20000,
                       "master_seed": 4, "output": "cr", "sweep": {"axis": "h", "values": [2, 4, 6]}});
    assert_eq!(run(dir.path(), "a", &cross, &[]).0, 0);
    let fit = json!({"experiment": "fit", "params": {"csv": "cr.csv", "zero_policy": "exclude", "d": 2},
                     "master_seed": 4, "output": "fit"});
    assert_eq!(run(dir.path(), "b", &fit, &[]).0, 0);
    let oracle = json!({"experiment": "oracle", "params": {"d": 2, "r": 16, "h": 4, "v": "full"},
                        "master_seed": 4, "output": "or"});
    assert_eq!(run(dir.path(), "c", &oracle, &[]).0, 0);
    let row = read(dir.path(), "or.csv");
    let p: f64 = row.lines().nth(1).unwrap().split(',').nth(6).unwrap().parse().unwrap();
    assert!(p > 0.0 && p < 1.0);
}

#[test]
fn poisson_cloud_and_flashing_run() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = json!({"experiment": "poisson-cloud", "params": {"d": 2, "r": 8, "epsilon": 0.3,
                       "bounds": {"kappa": 1.0, "c": 3.0}, "scheme": "settled_previous"},
                       "trials": 100, "master_seed": 6, "output": "pc"});
    assert_eq!(run(dir.path(), "a", &cloud, &[]).0, 0);
    assert!(read(dir.path(), "pc.csv").starts_with("run_id,stage,width,count,stopped_radius\n"));
    let flash = json!({"experiment": "flashing-diagnostics", "params": {"d": 2, "r": 16, "h": 6, "n": 3,
                       "v": "half"}, "trials": 500, "master_seed": 6, "output": "fl"});
    assert_eq!(run(dir.path(), "b", &flash, &[]).0, 0);
    assert_eq!(read(dir.path(), "fl.csv").lines().count(), 4);
}
