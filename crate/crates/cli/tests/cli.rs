use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn critlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critlab"))
        .args(args)
        .env("CRITLAB_OUTPUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn constants_report_all_fields() {
    let dir = tempfile::tempdir().unwrap();
    let o = critlab(&["constants", "--n", "5", "--lambda", "1.125"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("constants.json"));
    assert_eq!(v["tool"], "critlab");
    assert_eq!(v["subcommand"], "constants");
    assert!(v["timestamp"].is_string());
    for key in ["k_sobolev", "k_hardy", "a", "d_star", "D_star", "q_sharp", "beta_star"] {
        assert!(v["result"][key].is_f64(), "missing {key}");
    }
    let d = v["result"]["D_star"].as_f64().unwrap();
    assert!((d - 42.218013238136).abs() < 1e-9);
    assert!(dir.path().join("constants.csv").exists());
}

#[test]
fn invalid_dimension_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = critlab(&["constants", "--n", "2"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("n must be ≥ 3"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&critlab(&["constants", "--bogus", "1"], dir.path())), 2);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "format = json\n[constants]\nn = 5\n").unwrap();
    let o = critlab(
        &["--config", cfg.to_str().unwrap(), "constants", "--n", "4"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let v = read_json(&dir.path().join("constants.json"));
    assert_eq!(v["config"]["parameters"]["n"], 4);
    assert!(!dir.path().join("constants.csv").exists());
}

#[test]
fn bad_config_files_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("[constants]\nn = 5\nwidth = 3\n", "width"),
        ("[constants]\nn = five\n", "`n`"),
        ("[unknown]\n", "unknown"),
    ];
    for (text, needle) in cases {
        let cfg = dir.path().join("bad.cfg");
        std::fs::write(&cfg, text).unwrap();
        let o = critlab(&["--config", cfg.to_str().unwrap(), "constants"], dir.path());
        assert_eq!(code(&o), 2, "{text}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{err}");
    }
}

#[test]
fn sweep_thresholds_decrease() {
    let dir = tempfile::tempdir().unwrap();
    let o = critlab(&["sweep", "--n", "5", "--points", "20"], dir.path());
    assert_eq!(code(&o), 0);
    let mut r = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == "D_star").unwrap();
    let d: Vec<f64> = r.records().map(|row| row.unwrap()[idx].parse().unwrap()).collect();
    assert_eq!(d.len(), 20);
    assert!(d.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn inconclusive_expansion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = critlab(&["expansion", "--n", "5", "--h0", "1.125", "--h2", "-5"], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("fit residual"));
    let v = read_json(&dir.path().join("expansion.json"));
    assert_eq!(v["result"]["expansion"]["verdict"], "inconclusive");
}

#[test]
fn expansion_below_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let o = critlab(&["expansion", "--n", "5", "--h0", "1.125", "--h2", "-1"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = std::fs::read_to_string(dir.path().join("expansion.csv")).unwrap();
    assert!(rows.starts_with("eps,grad_integral,hardy_integral,crit_integral,energy"));
}

#[test]
fn bubble_residual_is_small() {
    let dir = tempfile::tempdir().unwrap();
    let o = critlab(&["bubble", "--n", "4", "--lambda", "0.5", "--points", "50"], dir.path());
    assert_eq!(code(&o), 0);
    let v = read_json(&dir.path().join("bubble.json"));
    assert!(v["result"]["sup_residual"].as_f64().unwrap() < 1e-6);
    let q = v["result"]["quotient"].as_f64().unwrap();
    let qs = v["result"]["q_sharp"].as_f64().unwrap();
    assert!((q - qs).abs() / qs < 1e-8);
}

#[test]
fn small_solve_and_decompose() {
    let dir = tempfile::tempdir().unwrap();
    let model = ["--n", "5", "--h0", "1.125", "--h2", "-1", "--delta-cap", "4"];
    let mut args = vec!["solve", "--nodes", "512", "--seeds", "2"];
    args.extend(model);
    let o = critlab(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("solve.json"));
    assert_eq!(v["result"]["classification"], "in_0_Dstar");

    let mut args = vec![
        "decompose",
        "--m-min",
        "6",
        "--m-max",
        "8",
        "--bubble",
        "singular,cutoff=0.785",
    ];
    args.extend(model);
    let o = critlab(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("decompose.json"));
    assert_eq!(v["result"]["remainder_decreasing"], true);
    assert!(dir.path().join("extraction.csv").exists());
}

#[test]
fn runs_are_deterministic_modulo_timestamp() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["expansion", "--n", "5", "--h0", "1.125", "--h2", "-1", "--output-dir"];
    let run = |dir: &Path| {
        let mut v: Vec<&str> = args.to_vec();
        v.push(dir.to_str().unwrap());
        assert_eq!(code(&critlab(&v, dir)), 0);
        let mut j = read_json(&dir.join("expansion.json"));
        j["timestamp"] = Value::Null;
        j["config"]["output_dir"] = Value::Null;
        (j, std::fs::read(dir.join("expansion.csv")).unwrap())
    };
    assert_eq!(run(a.path()), run(b.path()));
}
