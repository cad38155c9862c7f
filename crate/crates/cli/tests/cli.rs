use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qtail_core::distribution::ccdf;
use qtail_core::io::load_price_series;
use qtail_core::returns::{build_returns, standardize, BoundaryPolicy};
use qtail_core::tailfit::fit_tail;
use qtail_core::Side;
use serde_json::Value;

fn qtail(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtail")).args(args).output().expect("binary runs")
}

fn qtail_env(args: &[&str], env: (&str, &str)) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtail")).args(args).env(env.0, env.1).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, kind: &str, n: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("{name}.csv"));
    let o = qtail(&["synth", "--kind", kind, "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

/// Every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

const FAST: [&str; 6] = ["--dt-grid", "1,4", "--mfdfa-scales", "16:512:8", "--surrogates", "2"];

#[test]
fn synth_writes_prices_and_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth(dir.path(), "g", "gaussian", 1000, 3);
    let ps = load_price_series(&p, None).unwrap();
    assert_eq!(ps.observations().len(), 1001);
    assert_eq!(ps.sessions().len(), 1);
    assert!(dir.path().join("g.sessions.csv").is_file());
    let r = build_returns(&ps, 1, BoundaryPolicy::DropCrossSession).unwrap();
    assert_eq!(r.len(), 1000);
}

#[test]
fn student_t_input_gives_cubic_tail_at_one_minute() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), "t3", "student-t", 300_000, 5);
    let out = dir.path().join("out");
    let o = qtail(&["analyze", "--input", s(&input), "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = json(&out.join("tail_report.json"));
    let alpha = rows
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["dt_minutes"] == 1 && r["side"] == "positive")
        .and_then(|r| r["alpha"].as_f64())
        .unwrap();
    assert!((alpha - 3.0).abs() < 0.35, "alpha = {alpha}");
    for f in [
        "tail_report.csv",
        "qgauss_fits.json",
        "manifest.json",
        "t3/ccdf_dt1_positive.csv",
        "t3/ccdf_dt120_negative.csv",
        "t3/qgauss_model_dt1_positive.csv",
        "t3/spectrum.csv",
        "t3/shuffled_spectrum.csv",
        "t3/spectrum.json",
        "t3/acf.csv",
        "t3/acf.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let table = std::fs::read_to_string(out.join("tail_report.csv")).unwrap();
    assert!(table.starts_with("instrument,side,1 min,4 min,16 min,32 min,60 min,120 min\n"));
    assert_eq!(table.lines().count(), 3);
    let q = json(&out.join("qgauss_fits.json"));
    let q1 = q.as_array().unwrap().iter().find(|r| r["dt_minutes"] == 1).unwrap();
    // t(3) is the q = 3/2 q-Gaussian.
    assert!((q1["q"].as_f64().unwrap() - 1.5).abs() < 0.05, "{q1}");
}

#[test]
fn empty_dt_grid_is_a_config_error_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), "g", "gaussian", 1000, 1);
    let out = dir.path().join("out");
    let o = qtail(&["analyze", "--input", s(&input), "--dt-grid", "", "--out-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
    let o = qtail(&["analyze", "--out-dir", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = qtail(&["tail", "--input", s(&input), "--config", s(&dir.path().join("missing.conf"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_input_is_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let good = synth(dir.path(), "good", "student-t", 50_000, 2);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "timestamp,price\n0,1.0\n60,oops\n").unwrap();

    let alone = dir.path().join("alone");
    let both = dir.path().join("both");
    let mut args = vec!["analyze", "--input", s(&good), "--out-dir", s(&alone)];
    args.extend(FAST);
    assert!(qtail(&args).status.success());
    let mut args = vec!["analyze", "--input", s(&bad), "--input", s(&good), "--out-dir", s(&both)];
    args.extend(FAST);
    let o = qtail(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let a = tree(&alone.join("good"));
    let b = tree(&both.join("good"));
    assert_eq!(a, b);
    assert!(!both.join("bad").exists());
    let m = json(&both.join("manifest.json"));
    assert_eq!(m["succeeded"], 1);
    assert_eq!(m["failed"], 1);
    let bad_rec = &m["instruments"][0];
    assert_eq!(bad_rec["status"], "failed");
    assert!(bad_rec["error"].as_str().unwrap().contains(":3:"), "{bad_rec}");

    // With only broken inputs the run fails as a whole.
    let none = dir.path().join("none");
    let o = qtail(&["analyze", "--input", s(&bad), "--out-dir", s(&none)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(json(&none.join("manifest.json"))["failed"], 1);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), "x", "gaussian", 20_000, 4);
    let out = dir.path().join("out");
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, format!("input = {}\ndt-grid = 1,2\nseed = 5\nmax-lag = 7\n", s(&input))).unwrap();
    let o = qtail(&["acf", "--config", s(&conf), "--seed", "6", "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["config"]["seed"], 6);
    assert_eq!(m["config"]["max_lag"], 7);
    assert_eq!(m["config"]["dt_grid"], serde_json::json!([1, 2]));
    assert_eq!(m["command"], "acf");
    let acf = json(&out.join("x/acf.json"));
    assert_eq!(acf["max_lag"], 7);
    assert!(!out.join("tail_report.csv").exists());
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", "qgaussian", 30_000, 8);
    let b = synth(dir.path(), "b", "ar1", 30_000, 9);
    let run = |out: &Path, threads: &str| {
        let mut args = vec!["analyze", "--input", s(&a), "--input", s(&b), "--out-dir", s(out), "--bootstrap", "100"];
        args.extend(FAST);
        let o = qtail_env(&args, ("RAYON_NUM_THREADS", threads));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    };
    let one = dir.path().join("one");
    let many = dir.path().join("many");
    run(&one, "1");
    run(&many, "8");
    assert_eq!(tree(&one), tree(&many));
}

#[test]
fn tail_numbers_are_recomputable_from_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), "t", "student-t", 40_000, 12);
    let out = dir.path().join("out");
    let o = qtail(&["tail", "--input", s(&input), "--dt-grid", "1,4", "--tail-range", "2,8", "--out-dir", s(&out)]);
    assert!(o.status.success());
    let m = json(&out.join("manifest.json"));
    let rec = &m["instruments"][0];
    let path = PathBuf::from(rec["input"]["path"].as_str().unwrap());
    let dt = m["config"]["dt_grid"][1].as_u64().unwrap() as u32;
    let lo = m["config"]["tail_range"][0].as_f64().unwrap();
    let hi = m["config"]["tail_range"][1].as_f64().unwrap();

    let ps = load_price_series(&path, None).unwrap();
    let r = standardize(&build_returns(&ps, dt, BoundaryPolicy::DropCrossSession).unwrap()).unwrap();
    let fit = fit_tail(&ccdf(&r, Side::Negative).unwrap(), Some((lo, hi))).unwrap();
    let rows = json(&out.join("tail_report.json"));
    let row = rows
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["dt_minutes"] == dt && r["side"] == "negative")
        .unwrap();
    assert_eq!(row["alpha"].as_f64().unwrap().to_bits(), fit.alpha.to_bits());
    assert_eq!(row["stderr"].as_f64().unwrap().to_bits(), fit.stderr.to_bits());
}

#[test]
fn negative_moment_grid_is_accepted_as_a_value() {
    let dir = tempfile::tempdir().unwrap();
    let input = synth(dir.path(), "g", "gaussian", 20_000, 6);
    let out = dir.path().join("out");
    let o = qtail(&["mfdfa", "--input", s(&input), "--mfdfa-q", "-3:3:0.5", "--surrogates", "2", "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sp = json(&out.join("g/spectrum.json"));
    assert_eq!(sp["q_grid"][0], -3.0);
    assert_eq!(sp["q_grid"].as_array().unwrap().len(), 13);
    assert!(sp["original"]["width"].as_f64().unwrap() < 0.3);
}
