use modavg::ctp::{Analysis, AnalysisMode, TestOptions};
use modavg::inference::{tau_for_fwer, Hyperparams};
use modavg::io::{read_dataset, CsvOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

/// `x2` causal, `x3`/`x4` nearly collinear noise, `x1`, `x5` noise.
fn fixture_csv() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut out = String::from("y,x1,x2,x3,x4,x5\n");
    for _ in 0..180 {
        let x: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
        let x4 = x[2] + 0.2 * rng.sample::<f64, _>(StandardNormal);
        let y = 0.45 * x[1] + rng.sample::<f64, _>(StandardNormal);
        out.push_str(&format!("{y},{},{},{},{x4},{}\n", x[0], x[1], x[2], x[4]));
    }
    out
}

fn write_fixture(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modavg")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    let mut a = args.to_vec();
    a.extend(["--format", "json"]);
    serde_json::from_str(&ok(&a)).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn planted_variable_tops_the_table() {
    let dir = TempDir::new().unwrap();
    let csv = write_fixture(&dir, "d.csv", &fixture_csv());
    let text = ok(&["analyze", p(&csv)]);
    let first_row = text.lines().nth(2).unwrap();
    assert!(first_row.starts_with("x2 "), "{text}");
    assert!(first_row.contains(" yes "), "{first_row}");
    assert!(text.contains("\nALL "));
}

#[test]
fn json_agrees_with_the_library() {
    let dir = TempDir::new().unwrap();
    let text = fixture_csv();
    let csv = write_fixture(&dir, "d.csv", &text);
    let v = json(&["analyze", p(&csv), "--mu", "0.2", "--h", "2"]);

    let data = read_dataset(&text, &CsvOptions::default()).unwrap();
    let tau = tau_for_fwer(0.025, 5, 0.2, 2.0, data.n()).unwrap();
    let hyper = Hyperparams::new(0.2, 2.0, tau, data.n()).unwrap();
    let a = Analysis::new(&data, &hyper, AnalysisMode::Full).unwrap();
    let opts = TestOptions { rho: None, ..Default::default() };
    let marginal = a.marginal_tests(&opts).unwrap();

    assert_eq!(v["settings"]["tau"].as_f64().unwrap(), tau);
    for row in v["variables"].as_array().unwrap() {
        let j = a.names.iter().position(|n| n == row["variable"].as_str().unwrap()).unwrap();
        assert_eq!(row["test"]["log_po"].as_f64().unwrap(), marginal[j].log_po);
        assert_eq!(row["test"]["p_adj_raw"].as_f64().unwrap(), marginal[j].p_adj_raw);
    }
    let grand = a.grand_null(&opts).unwrap();
    assert_eq!(v["grand_null"]["log_po"].as_f64().unwrap(), grand.log_po);
}

#[test]
fn tsv_matches_json() {
    let dir = TempDir::new().unwrap();
    let csv = write_fixture(&dir, "d.csv", &fixture_csv());
    let v = json(&["analyze", p(&csv)]);
    let tsv = ok(&["analyze", p(&csv), "--format", "tsv"]);
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "# variables");
    let header: Vec<&str> = lines[1].split('\t').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    for (row, line) in v["variables"].as_array().unwrap().iter().zip(&lines[2..7]) {
        let cells: Vec<&str> = line.split('\t').collect();
        assert_eq!(cells[0], row["variable"].as_str().unwrap());
        let po: f64 = cells[col("log_po")].parse().unwrap();
        assert_eq!(po, row["test"]["log_po"].as_f64().unwrap());
        let mean: f64 = cells[col("mean")].parse().unwrap();
        assert_eq!(mean, row["estimate"]["bayes_mean"].as_f64().unwrap());
    }
}

#[test]
fn single_variable_marginal_is_the_grand_null() {
    let dir = TempDir::new().unwrap();
    let csv = write_fixture(&dir, "d.csv", &fixture_csv());
    let v = json(&["analyze", p(&csv), "--candidates", "x2"]);
    let row = &v["variables"][0]["test"];
    for key in ["log_po", "p_unadj", "p_adj", "p_adj_raw"] {
        assert_eq!(row[key], v["grand_null"][key], "{key}");
    }
}

#[test]
fn full_group_test_equals_grand_null() {
    let dir = TempDir::new().unwrap();
    let csv = write_fixture(&dir, "d.csv", &fixture_csv());
    let analyzed = json(&["analyze", p(&csv)]);
    let tested = json(&["test", p(&csv), "--group", "x5,x4,x3,x2,x1"]);
    assert_eq!(tested["tests"][0]["log_po"], analyzed["grand_null"]["log_po"]);
    assert_eq!(tested["tests"][0]["tested_names"], serde_json::json!(["x1", "x2", "x3", "x4", "x5"]));
}

#[test]
fn split_block_is_refused_unless_allowed() {
    let dir = TempDir::new().unwrap();
    let csv = write_fixture(&dir, "d.csv", &fixture_csv());
    let out = run(&["test", p(&csv), "--group", "x3", "--rho", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("x4"), "{err}");
    let v = json(&["test", p(&csv), "--group", "x3", "--rho", "0.5", "--allow-inadmissible"]);
    assert_eq!(v["tests"][0]["tested_names"], serde_json::json!(["x3"]));
    ok(&["test", p(&csv), "--group", "x3,x4", "--rho", "0.5"]);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let csv = write_fixture(&dir, "d.csv", &fixture_csv());
    assert_eq!(run(&["analyze"]).status.code(), Some(2));
    assert_eq!(run(&["analyze", p(&csv), "--variance", "bogus"]).status.code(), Some(2));
    assert_eq!(run(&["analyze", "/nonexistent/file.csv"]).status.code(), Some(1));
    assert_eq!(run(&["test", p(&csv), "--group", "nope"]).status.code(), Some(1));
    let bad = write_fixture(&dir, "bad.csv", "y,x\n1,2\n3,oops\n");
    let out = run(&["analyze", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    let out = run(&["analyze", p(&csv), "--scan-cap", "3"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sub_analysis_uses_the_declared_family() {
    let dir = TempDir::new().unwrap();
    let csv = write_fixture(&dir, "d.csv", &fixture_csv());
    let full = json(&["analyze", p(&csv), "--tau", "9"]);
    let sub = json(&["analyze", p(&csv), "--tau", "9", "--sub-analysis-nu", "40", "--excluded", "z1,z2"]);
    assert_eq!(sub["settings"]["nu_family"], 40);
    let (f, s) = (&full["variables"][0]["test"], &sub["variables"][0]["test"]);
    assert_eq!(f["log_po"], s["log_po"]);
    assert!(s["p_adj_raw"].as_f64().unwrap() > f["p_adj_raw"].as_f64().unwrap());
    assert_eq!(s["mode"]["excluded"], serde_json::json!(["z1", "z2"]));
    assert_eq!(run(&["analyze", p(&csv), "--excluded", "z1"]).status.code(), Some(1));
}

#[test]
fn outputs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let csv = write_fixture(&dir, "d.csv", &fixture_csv());
    assert_eq!(ok(&["analyze", p(&csv), "--format", "json"]), ok(&["analyze", p(&csv), "--format", "json"]));
    let sim = ["sim-twovar", "--n", "50,500", "--rho", "0.6", "--beta2", "0,0.3", "--replicates", "40000", "--seed", "5"];
    assert_eq!(ok(&sim), ok(&sim));
    let prior = ["sim-prior", "--nu", "4", "--n", "60", "--equicorr", "0.3", "--replicates", "300", "--format", "tsv"];
    assert_eq!(ok(&prior), ok(&prior));
}

#[test]
fn select_prints_candidates() {
    let dir = TempDir::new().unwrap();
    let csv = write_fixture(&dir, "d.csv", &fixture_csv());
    let v = json(&["select", p(&csv), "--max-vars", "2"]);
    assert_eq!(v["selected"][0]["variable"], "x2");
    assert_eq!(v["selected"].as_array().unwrap().len(), 2);
    let text = ok(&["select", p(&csv), "--max-vars", "2"]);
    assert!(text.contains("--candidates x2,"), "{text}");
}

#[test]
fn sim_twovar_reports_the_reference() {
    let v = json(&["sim-twovar", "--n", "200", "--replicates", "50000", "--tau", "9"]);
    let point = &v["runs"][0]["report"]["points"][0];
    let est = point["metrics"]["fpr"]["estimate"].as_f64().unwrap();
    let se = point["metrics"]["fpr"]["se"].as_f64().unwrap();
    let reference = point["reference"].as_f64().unwrap();
    assert!((est - reference).abs() < 5.0 * se.max(1e-5), "{est} vs {reference}");
}

#[test]
fn sim_prior_with_design_csv() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut text = String::from("a,b,c\n");
    for _ in 0..80 {
        let v: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        text.push_str(&format!("{},{},{}\n", v[0], v[0] + v[1], v[2]));
    }
    let design = write_fixture(&dir, "x.csv", &text);
    let v = json(&["sim-prior", "--design-csv", p(&design), "--replicates", "500", "--rho-levels", "0,1"]);
    assert_eq!(v["nu"], 3);
    assert_eq!(v["n"], 80);
    assert_eq!(v["report"]["points"].as_array().unwrap().len(), 2);
    assert!(v["report"]["evalue_bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn xcrit_output() {
    let v = json(&["xcrit", "--mc-draws", "200000"]);
    let x = v["x_crit"].as_f64().unwrap();
    assert!((11.9..11.95).contains(&x), "{x}");
    let one = v["tail_one"].as_f64().unwrap();
    let two = v["tail_two"].as_f64().unwrap();
    assert!((one - two).abs() < 1e-9);
    let mc = &v["tail_two_mc"];
    assert!((mc["estimate"].as_f64().unwrap() - two).abs() < 5.0 * mc["se"].as_f64().unwrap());
}
