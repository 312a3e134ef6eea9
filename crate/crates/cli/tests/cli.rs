use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn pottab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pottab"))
        .args(args)
        .env_remove("POTTAB_SEED")
        .output()
        .expect("run pottab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(args: &[&str]) -> Value {
    let o = pottab(args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

/// Compare against tests/golden/<name>.json; set UPDATE_GOLDEN=1 to rewrite.
fn golden(name: &str, args: &[&str]) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.json"));
    let got = json(args);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
        return;
    }
    let want: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(got, want, "{name} drifted from its golden file");
}

#[test]
fn malformed_table_is_usage_error() {
    assert_eq!(pottab(&["analyze", "--table", "1,2,x,4"]).status.code(), Some(2));
    assert_eq!(pottab(&["fisher", "--table", "1,2,3"]).status.code(), Some(2));
}

#[test]
fn zero_replications_is_usage_error() {
    let o = pottab(&["simulate", "--science", "10,10,10,10", "--n1", "20", "--reps", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn singleton_arms_are_analysis_error() {
    let o = pottab(&["analyze", "--table", "1,0,0,1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
}

#[test]
fn full_arm_science_table_is_analysis_error() {
    let o = pottab(&["simulate", "--science", "5,5,5,5", "--n1", "20", "--reps", "3"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn text_output_shows_rounded_variances() {
    let o = pottab(&["analyze", "--table", "15,5,5,15", "--draws", "500"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("neyman 0.020"), "{text}");
    assert!(text.contains("improved 0.013"), "{text}");
    assert!(text.contains("seed 20150101"));
}

#[test]
fn null_effect_intervals_cover_zero() {
    let v = json(&["analyze", "--table", "19,60,12,27", "--draws", "2000", "--json"]);
    for m in v["measures"].as_array().unwrap() {
        let mut ivs: Vec<&Value> = m["intervals"].as_array().unwrap().iter().collect();
        ivs.push(&m["bayes"]["interval"]);
        assert_eq!(ivs.len(), 4);
        for ci in ivs {
            let (lo, hi) = (ci["lower"].as_f64().unwrap(), ci["upper"].as_f64().unwrap());
            assert!(lo < 0.0 && hi > 0.0, "{} {}: [{lo}, {hi}]", m["measure"], ci["method"]);
        }
    }
    assert!(v["fisher"]["p_two_sided"].as_f64().unwrap() > 0.05);
}

#[test]
fn clip_bounds_crd_interval() {
    let v = json(&["analyze", "--table", "9,1,1,9", "--draws", "200", "--clip", "--json"]);
    let crd = &v["measures"][0];
    assert_eq!(crd["measure"], "crd");
    for ci in crd["intervals"].as_array().unwrap() {
        assert!(ci["upper"].as_f64().unwrap() <= 1.0);
    }
}

#[test]
fn one_point_grid() {
    let args = [
        "sensitivity", "--table", "19,60,12,27", "--points", "1", "--log-gamma-min", "0", "--log-gamma-max", "0",
        "--draws", "300", "--measure", "crd", "--json",
    ];
    let v = json(&args);
    let grid = &v["grids"][0];
    assert_eq!(grid["points"].as_array().unwrap().len(), 1);
    assert_eq!(grid["widest"], 0);

    let bad = pottab(&["sensitivity", "--table", "19,60,12,27", "--points", "1", "--log-gamma-max", "1"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sensitivity_csv_has_all_row_kinds() {
    let o = pottab(&[
        "sensitivity", "--table", "19,60,12,27", "--points", "3", "--log-gamma-min", "-1", "--log-gamma-max", "1",
        "--draws", "200", "--measure", "log-crr",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "table,measure,label,log_gamma,lower,upper,median,rejection_rate,non_finite");
    assert_eq!(rows.len(), 1 + 3 + 2);
    assert!(rows.iter().any(|r| r.contains(",independence,")));
    assert!(rows.iter().any(|r| r.contains(",widest,")));
}

#[test]
fn seed_falls_back_to_environment() {
    let run = |env: Option<&str>, extra: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_pottab"));
        c.args(["analyze", "--table", "12,8,7,13", "--draws", "300", "--json"]).args(extra);
        match env {
            Some(s) => c.env("POTTAB_SEED", s),
            None => c.env_remove("POTTAB_SEED"),
        };
        let o = c.output().unwrap();
        assert!(o.status.success());
        serde_json::from_slice::<Value>(&o.stdout).unwrap()
    };
    let from_env = run(Some("77"), &[]);
    assert_eq!(from_env["seed"], 77);
    assert_eq!(from_env, run(None, &["--seed", "77"]));
    assert_eq!(run(None, &[])["seed"], 20150101);
    assert_eq!(run(Some("77"), &["--seed", "5"])["seed"], 5);
}

#[test]
fn table_file_inputs() {
    let dir = std::env::temp_dir().join(format!("pottab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let csv = dir.join("t.csv");
    std::fs::write(&csv, "n11,n10,n01,n00\n19,60,12,27\n15,5,5,15\n").unwrap();
    let js = dir.join("t.json");
    std::fs::write(&js, r#"{"n11": 19, "n10": 60, "n01": 12, "n00": 27}"#).unwrap();

    let many = json(&["fisher", "--file", csv.to_str().unwrap(), "--json"]);
    assert_eq!(many.as_array().unwrap().len(), 2);
    let one = json(&["fisher", "--file", js.to_str().unwrap(), "--json"]);
    assert_eq!(one["result"], many[0]["result"]);

    let missing = pottab(&["fisher", "--file", dir.join("nope.csv").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn simulate_out_dir_writes_three_files() {
    let dir = std::env::temp_dir().join(format!("pottab-sim-{}", std::process::id()));
    let o = pottab(&[
        "simulate", "--science", "10,10,10,10", "--n1", "20", "--reps", "20", "--draws", "50",
        "--out-dir", dir.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    for f in ["report.json", "report.csv", "panel.csv"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 20150101);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn simulate_is_reproducible() {
    let args = ["simulate", "--paper-study", "sharp_null_T5", "--reps", "40", "--json", "--seed", "3"];
    let a = json(&args);
    assert_eq!(a, json(&args));
    assert_eq!(a["reports"].as_array().unwrap().len(), 5);
}

#[test]
fn golden_fisher() {
    golden("fisher_19_60_12_27", &["fisher", "--table", "19,60,12,27", "--json"]);
    golden("fisher_mc_15_5_5_15", &["fisher", "--table", "15,5,5,15", "--monte-carlo", "2000", "--seed", "11", "--json"]);
}

#[test]
fn golden_analyze() {
    golden("analyze_15_5_5_15", &["analyze", "--table", "15,5,5,15", "--draws", "400", "--seed", "7", "--json"]);
}

#[test]
fn golden_simulate() {
    golden(
        "simulate_small",
        &["simulate", "--science", "8,4,4,8", "--n1", "12", "--reps", "30", "--draws", "60", "--seed", "9", "--json"],
    );
}
