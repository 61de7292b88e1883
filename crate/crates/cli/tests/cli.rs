use std::process::Command;

use pbs_cli::run_cli;
use serde_json::Value;

fn run(args: &str) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("pbs").chain(args.split_whitespace());
    let code = run_cli(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn json(args: &str) -> Value {
    let (code, out, err) = run(args);
    assert_eq!(code, 0, "{err}");
    serde_json::from_str(&out).unwrap()
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

const QUOTE: &str =
    "quote --spot 100 --strike 100 --mat 1 --vol 0.2 --gamma 0.04 --bias 0 --eps 0.01 --alpha 0.1 --format json";

#[test]
fn quote_is_symmetric() {
    let doc = json(QUOTE);
    let q = &doc["result"][0];
    let (bid, mid, ask) = (f(&q["bid"]), f(&q["mid"]), f(&q["ask"]));
    assert!((bid + ask - 2.0 * mid).abs() <= 1e-12 * mid);
    assert!(bid < mid && mid < ask);
}

#[test]
fn config_block_comes_first_and_echoes_flags() {
    let (_, out, _) = run(QUOTE);
    assert!(out.starts_with("{\n  \"config\": {\n    \"command\": \"quote\""));
    let doc: Value = serde_json::from_str(&out).unwrap();
    let c = &doc["config"];
    for (key, want) in [
        ("spot", 100.0),
        ("strike", 100.0),
        ("mat", 1.0),
        ("vol", 0.2),
        ("gamma", 0.04),
        ("bias", 0.0),
        ("eps", 0.01),
        ("alpha", 0.1),
    ] {
        assert_eq!(f(&c[key]), want, "{key}");
    }
}

#[test]
fn output_is_byte_identical_across_runs() {
    let args =
        "smile --spot 100 --strike 80:120:9 --mat 0.5,1 --vol 0.25 --gamma 0.05 --rr 0.01 --eps 0.02 --format csv";
    assert_eq!(run(args).1, run(args).1);
    let sim = "simulate --spot 100 --strike 100 --mat 1 --vol 0.2 --gamma 0.04 --bias 0 --eps 0.01 --paths 500 --steps 16 --draws 80 --seed 3";
    assert_eq!(run(sim).1, run(sim).1);
}

#[test]
fn smile_threshold_preset_reproduces_the_smile() {
    let (code, out, _) = run("smile --rr smile-threshold --spot 100 --strike 95,100,105 --mat 1 --vol 0.3 --gamma 0.09 --eps 0.01 --format csv");
    assert_eq!(code, 0);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("K,T,mid,implied_vol,flags"));
    let iv: Vec<f64> = lines.map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!((iv[1] - 0.3).abs() < 1e-8);
    assert!(iv[0] > 0.3 && iv[2] > 0.3);
    assert!(!out.contains('\r'));
}

#[test]
fn smile_uses_default_strike_grid() {
    let doc = json("smile --spot 100 --mat 1 --vol 0.2 --gamma 0.04 --bias 0 --eps 0.01");
    assert_eq!(doc["result"]["points"].as_array().unwrap().len(), 41);
    assert!(doc["result"]["maturities"][0]["conditions"]["r_r"].is_number());
}

#[test]
fn localvol_reports_the_unbiased_case() {
    let doc = json("localvol --spot 100 --strike 100 --mat 1 --vol 0.3 --gamma 0.09 --rr 0 --eps 0.01");
    let p = &doc["result"]["points"][0];
    assert!((f(&p["local_variance"]) - 0.09 * (1.0 - 0.01 * 2.09 / 2.0)).abs() < 1e-14);
    assert!((f(&doc["result"]["maturities"][0]["positivity_margin"]) - 97.91).abs() < 1e-10);
}

#[test]
fn localvol_flags_non_positive_variance() {
    let (code, out, _) =
        run("localvol --spot 100 --strike 100 --mat 1 --vol 0.3 --gamma 20 --bias 0 --eps 0.01 --format csv");
    assert_eq!(code, 0);
    assert!(
        out.lines().nth(1).unwrap().contains(",non_positive_local_variance"),
        "{out}"
    );
}

#[test]
fn utility_half_normal_cdf_has_quarter_square_index() {
    let (code, out, _) = run("utility --utility half-normal-cdf --xs 0.5,1,2 --format csv");
    assert_eq!(code, 0);
    for line in out.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!((cols[3] - cols[0] * cols[0] / 4.0).abs() < 1e-12);
    }
}

#[test]
fn price_rows_follow_the_grid() {
    let (code, out, _) = run("price --spot 100 --strike 90,110 --mat 0.5,1 --vol 0.2 --format csv");
    assert_eq!(code, 0);
    let keys: Vec<&str> = out
        .lines()
        .skip(1)
        .map(|l| &l[..l.match_indices(',').nth(1).unwrap().0])
        .collect();
    assert_eq!(keys, ["90,0.5", "110,0.5", "90,1", "110,1"]);
}

#[test]
fn every_validation_problem_gets_one_line() {
    let (code, out, err) = run("quote --spot -1 --mat 1 --gamma 0.04 --eps 0.01");
    assert_eq!(code, 2);
    assert!(out.is_empty());
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 4, "{err}");
    assert!(err.contains("--spot must be positive"));
    assert!(err.contains("--vol is required"));
    assert!(err.contains("--strike is required"));
    assert!(err.contains("one of --bias or --rr"));
}

#[test]
fn contradicting_bias_and_relative_index_is_rejected() {
    let (code, _, err) =
        run("quote --spot 100 --strike 100 --mat 1 --vol 0.2 --gamma 0.04 --bias 0.1 --rr 0.5 --eps 0.01");
    assert_eq!(code, 2);
    assert!(err.contains("contradicts"));
    // r_r = 2vA/Γ = 2·0.2·0.05/0.04
    let (code, _, _) =
        run("quote --spot 100 --strike 100 --mat 1 --vol 0.2 --gamma 0.04 --bias 0.05 --rr 0.5 --eps 0.01");
    assert_eq!(code, 0);
}

#[test]
fn unknown_flag_and_bad_grid_exit_2() {
    let (code, _, err) = run("quote --bogus 1");
    assert_eq!((code, err.lines().count()), (2, 1));
    let (code, _, err) = run("price --spot 100 --strike 1:2 --mat 1 --vol 0.2");
    assert_eq!((code, err.lines().count()), (2, 1));
    let (code, _, _) = run("bogus");
    assert_eq!(code, 2);
}

#[test]
fn exhausted_budget_is_a_numeric_error() {
    let (code, _, err) = run(
        "simulate --spot 100 --strike 100 --mat 1 --vol 0.2 --gamma 0.04 --bias 0 --eps 0.01 --paths 200 --steps 8 --draws 200 --budget 1e-9",
    );
    assert_eq!(code, 3);
    assert!(err.contains("partial"), "{err}");
}

#[test]
fn simulate_reports_estimates_and_theory() {
    let doc = json("simulate --spot 100 --strike 100 --mat 1 --vol 0.2 --gamma 0.04 --bias 0 --eps 0.01 --paths 1000 --steps 32 --draws 200 --seed 1");
    let est = &doc["result"]["estimates"];
    assert_eq!(est[0]["quantity"], "bias");
    assert!(f(&est[1]["z"]).abs() < 4.0);
    assert_eq!(doc["result"]["diagnostics"]["n_sigma_draws"], 200);
}

#[test]
fn verify_theorem41_passes() {
    let (code, out, err) = run("verify --suite theorem41 --seed 7 --paths 2000 --steps 64 --draws 300");
    assert_eq!(code, 0, "{err}");
    let doc: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(doc["result"]["passed"], true);
}

#[test]
fn verify_closed_form_suites_pass() {
    for suite in ["greeks", "smile", "localvol"] {
        let (code, out, err) = run(&format!("verify --suite {suite} --format csv"));
        assert_eq!(code, 0, "{suite}: {err}{out}");
        assert!(out.lines().skip(1).all(|l| l.ends_with(",true")));
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    std::fs::write(&path, r#"{"command": "quote", "spot": 100, "strike": "90,100", "mat": 1, "vol": 0.2, "gamma": 0.04, "rr": "smile-threshold", "eps": 0.01}"#).unwrap();
    let doc = json(&format!("quote --config {} --vol 0.25", path.display()));
    assert_eq!(f(&doc["config"]["vol"]), 0.25);
    assert_eq!(doc["config"]["rr"], "smile-threshold");
    assert_eq!(doc["result"].as_array().unwrap().len(), 2);

    let (code, _, err) = run(&format!("smile --config {}", path.display()));
    assert_eq!(code, 2);
    assert!(err.contains("config is for `quote`"));
    std::fs::write(&path, r#"{"spot": 100, "colour": "red"}"#).unwrap();
    let (code, _, err) = run(&format!("quote --config {}", path.display()));
    assert_eq!((code, err.lines().count()), (2, 1));
}

#[test]
fn output_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quote.json");
    let (code, out, _) = run(&format!("{QUOTE} --output {}", path.display()));
    assert_eq!((code, out.as_str()), (0, ""));
    let written = std::fs::read_to_string(&path).unwrap();
    let doc: Value = serde_json::from_str(&written).unwrap();
    assert_eq!(doc["config"]["output"], path.display().to_string());
    let (_, stdout, _) = run(QUOTE);
    let a: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(a["result"], doc["result"]);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn binary_exit_codes_and_thread_cap() {
    let bin = env!("CARGO_BIN_EXE_pbs");
    let status = Command::new(bin)
        .args(QUOTE.split_whitespace())
        .env("PBS_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    let ok = Command::new(bin)
        .args(QUOTE.split_whitespace())
        .env("PBS_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(String::from_utf8(ok.stdout).unwrap(), run(QUOTE).1);
    let help = Command::new(bin).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn verify_failure_exits_4_and_still_reports() {
    // far out of the money with a large ε the first-order moments are visibly off
    let (code, out, err) =
        run("verify --suite theorem41 --strike 200 --eps 0.04 --draws 4000 --paths 100 --steps 8 --format csv");
    assert_eq!(code, 4, "{err}");
    assert!(out.lines().skip(1).any(|l| l.ends_with(",false")));
    assert!(err.contains("verification checks failed"));
}
