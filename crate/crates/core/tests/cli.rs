use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cpt_core::{gen_mvn_dataset, write_csv};

fn cpt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpt"))
        .args(args)
        .env_remove("CPT_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn sample_csv(dir: &Path) -> PathBuf {
    let path = dir.join("d.csv");
    let d = gen_mvn_dataset(0.5, 12, 12, 3, 3).unwrap();
    write_csv(&d, fs::File::create(&path).unwrap(), "treatment", "block").unwrap();
    path
}

fn blocked_csv(dir: &Path) -> PathBuf {
    let path = dir.join("blocked.csv");
    let mut text = String::from("x1,x2,site,treatment,pair\n");
    for i in 0..16 {
        let site = ["north", "south", "east"][i % 3];
        text.push_str(&format!("{},{},{site},{},p{}\n", i as f64 * 0.37 % 2.0, (i * i) as f64 * 0.11 % 3.0, i % 2, i / 2));
    }
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn test_subcommand_emits_json_result() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path());
    let o = cpt(&["test", "--data", data.to_str().unwrap(), "--classifier", "logistic2", "--stat", "in", "--B", "499", "--seed", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["null_draws"].as_array().unwrap().len(), 499);
    assert_eq!(v["seed"], 7);
    assert_eq!(v["spec_echo"]["classifier_name"], "logistic2");
    assert_eq!(v["spec_echo"]["plan"]["B"], 499);
    let p = v["p_value"].as_f64().unwrap();
    assert!((p * 500.0 - (p * 500.0).round()).abs() < 1e-9);
    assert!(v.get("elapsed").is_none());
    assert!(stderr(&o).contains("done in"));
}

#[test]
fn reruns_are_byte_identical_and_env_seed_is_a_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path());
    let args = ["test", "--data", data.to_str().unwrap(), "--B", "99", "--quiet"];
    let with_flag = |seed: &str| {
        let mut a = args.to_vec();
        a.extend(["--seed", seed]);
        cpt(&a).stdout
    };
    assert_eq!(with_flag("5"), with_flag("5"));
    let env = Command::new(env!("CARGO_BIN_EXE_cpt")).args(args).env("CPT_SEED", "5").output().unwrap();
    assert_eq!(env.stdout, with_flag("5"));
    let flag_wins = Command::new(env!("CARGO_BIN_EXE_cpt"))
        .args(args)
        .args(["--seed", "5"])
        .env("CPT_SEED", "6")
        .output()
        .unwrap();
    assert_eq!(flag_wins.stdout, with_flag("5"));
    assert!(env.stderr.is_empty());
}

#[test]
fn within_permutation_requires_block_flag() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path());
    let o = cpt(&["test", "--data", data.to_str().unwrap(), "--permute", "within"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--block"), "{}", stderr(&o));
}

#[test]
fn within_block_run_with_one_hot_and_csv_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = blocked_csv(dir.path());
    let hist = dir.path().join("null.csv");
    let o = cpt(&[
        "test", "--data", data.to_str().unwrap(), "--block", "pair", "--one-hot", "site", "--permute", "within",
        "--classifier", "logistic", "--B", "49", "--format", "csv", "--null-out", hist.to_str().unwrap(), "--quiet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("statistic,p_value,B,seed\n"), "{out}");
    assert!(fs::read_to_string(hist).unwrap().starts_with("bin_low,bin_high,count,observed\n"));
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path());
    let d = data.to_str().unwrap();
    for args in [
        vec!["test", "--data", d, "--bogus"],
        vec!["test", "--data", d, "--classifier", "svm"],
        vec!["test", "--data", d, "--B", "5"],
        vec!["test", "--data", d, "--kappa", "2"],
        vec!["test", "--data", d, "--stat", "out", "--partitions", "none"],
        vec!["simulate", "--rho", "1.5"],
        vec!["type1", "--test", "cpt-svm"],
        vec!["exact", "--data", d, "--classifier", "forest"],
        vec!["test"],
    ] {
        let o = cpt(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    let missing = cpt(&["test", "--data", "/nonexistent/file.csv"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(stderr(&missing).contains("file.csv"));
    let bad_column = cpt(&["test", "--data", d, "--treatment", "arm"]);
    assert_eq!(bad_column.status.code(), Some(1));
    assert!(stderr(&bad_column).contains("arm"));
}

#[test]
fn bad_cell_diagnostic_names_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "x,treatment\n1,1\n2,0\nabc,1\n4,0\n").unwrap();
    let o = cpt(&["test", "--data", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("row 3") && err.contains("`x`"), "{err}");
    assert_eq!(err.lines().count(), 1);
}

#[test]
fn config_file_supplies_defaults_that_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let data = sample_csv(dir.path());
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"classifier": {"family": "knn", "k": 3}, "B": 59, "seed": 4}"#).unwrap();
    let d = data.to_str().unwrap();
    let o = cpt(&["test", "--data", d, "--config", cfg.to_str().unwrap(), "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["spec_echo"]["classifier_name"], "knn:k=3");
    assert_eq!(v["null_draws"].as_array().unwrap().len(), 59);
    assert_eq!(v["seed"], 4);

    let o = cpt(&["test", "--data", d, "--config", cfg.to_str().unwrap(), "--B", "19", "--quiet"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["null_draws"].as_array().unwrap().len(), 19);

    fs::write(&cfg, r#"{"classifer": "knn"}"#).unwrap();
    assert_eq!(cpt(&["test", "--data", d, "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn exact_subcommand_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.csv");
    let d = gen_mvn_dataset(0.0, 4, 4, 2, 1).unwrap();
    write_csv(&d, fs::File::create(&path).unwrap(), "treatment", "block").unwrap();
    let o = cpt(&["exact", "--data", path.to_str().unwrap(), "--classifier", "logistic", "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["assignments"], 70);
    let expected = cpt_core::exact_cpt(
        &d,
        &cpt_core::ClassifierSpec::logistic(cpt_core::DesignKind::MainEffects),
        &cpt_core::StatSpec::InSample,
    )
    .unwrap();
    assert_eq!(v["p_value"].as_f64().unwrap(), expected);
}

#[test]
fn simulate_writes_power_table_pvalues_and_roc() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("power.csv");
    let pv = dir.path().join("p.csv");
    let roc = dir.path().join("roc.csv");
    let o = cpt(&[
        "simulate", "--preset", "desk", "--tests", "cpt-logistic2,cpt-forest:trees=10,oob=true,energy,lrt",
        "--n-treated", "15", "--n-control", "15", "--rho", "0,0.7", "--replications", "6", "--B", "19",
        "--out", out.to_str().unwrap(), "--pvalues-out", pv.to_str().unwrap(), "--roc-out", roc.to_str().unwrap(), "--quiet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(&out).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("test,rho,alpha,power,se"));
    // 4 tests x 2 rho values x 2 alpha levels
    assert_eq!(lines.count(), 16);
    assert!(fs::read_to_string(&pv).unwrap().starts_with("test,rho,replication,p_value\n"));
    let roc_text = fs::read_to_string(&roc).unwrap();
    assert!(roc_text.starts_with("test,rho,fpr,tpr\n"));
    assert!(roc_text.lines().skip(1).all(|l| l.contains(",0.7,")));

    let single = cpt(&["roc", "--null", pv.to_str().unwrap(), "--alt", pv.to_str().unwrap(), "--test", "energy", "--rho", "0.7"]);
    assert!(single.status.success(), "{}", stderr(&single));
    assert!(stdout(&single).lines().skip(1).all(|l| l.starts_with("energy,0.7,")));
    let ambiguous = cpt(&["roc", "--null", pv.to_str().unwrap(), "--alt", pv.to_str().unwrap(), "--rho", "0.7"]);
    assert_eq!(ambiguous.status.code(), Some(1));
    assert!(stderr(&ambiguous).contains("--test"));
}

#[test]
fn roc_needs_null_rho_in_grid() {
    let o = cpt(&["simulate", "--tests", "energy", "--rho", "0.3", "--replications", "2", "--roc-out", "/tmp/never.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rho = 0"));
}

#[test]
fn type1_from_generator_and_from_data() {
    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("h.csv");
    let o = cpt(&[
        "type1", "--test", "lrt", "--n-treated", "30", "--n-control", "30", "--p", "2", "--replications", "40",
        "--hist-out", hist.to_str().unwrap(), "--bins", "10", "--quiet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("alpha,rejection_rate,se,replications\n"));
    let h = fs::read_to_string(hist).unwrap();
    assert_eq!(h.lines().count(), 11);

    let data = sample_csv(dir.path());
    let o = cpt(&[
        "type1", "--test", "cpt-logistic", "--data", data.to_str().unwrap(), "--replications", "5", "--B", "19",
        "--format", "json", "--quiet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["p_values"].as_array().unwrap().len(), 5);

    let clash = cpt(&["type1", "--data", data.to_str().unwrap(), "--p", "4"]);
    assert_eq!(clash.status.code(), Some(2));
}

#[test]
fn help_snapshots() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots");
    let update = std::env::var_os("UPDATE_SNAPSHOTS").is_some();
    for sub in ["", "test", "exact", "simulate", "type1", "roc"] {
        let args: Vec<&str> = if sub.is_empty() { vec!["--help"] } else { vec![sub, "--help"] };
        let o = cpt(&args);
        assert!(o.status.success());
        let name = format!("help_{}.txt", if sub.is_empty() { "cpt" } else { sub });
        let path = dir.join(&name);
        if update {
            fs::create_dir_all(&dir).unwrap();
            fs::write(&path, &o.stdout).unwrap();
        } else {
            let want = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing snapshot {name}; rerun with UPDATE_SNAPSHOTS=1"));
            assert_eq!(stdout(&o), want, "{name} changed; rerun with UPDATE_SNAPSHOTS=1 after review");
        }
    }
}

#[test]
fn help_lists_defaults() {
    let text = stdout(&cpt(&["test", "--help"]));
    for needle in ["[default: 999]", "[default: logistic2]", "[default: treatment]", "[default: across]", "[default: conservative]", "[env: CPT_SEED]"] {
        assert!(text.contains(needle), "missing {needle}");
    }
}
