use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn model(name: &str) -> String {
    format!("{}/models/{name}.json", env!("CARGO_MANIFEST_DIR"))
}

fn metapop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metapop")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn out_dir(tmp: &tempfile::TempDir, sub: &str) -> PathBuf {
    tmp.path().join(sub)
}

#[test]
fn check_logistic_passes() {
    let out = metapop(&["check", "--model", &model("logistic")]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["report"]["h1_holds"], true);
    assert_eq!(v["report"]["h2_holds"], true);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(v["seed"], 1);
}

#[test]
fn check_ricker_is_a_scientific_negative() {
    let out = metapop(&["check", "--model", &model("ricker")]);
    assert_eq!(out.status.code(), Some(1));
    let v = json(&out);
    assert_eq!(v["report"]["h1_holds"], false);
    assert!(v["report"]["first_violation_index"].is_u64());
    assert!(stderr(&out).contains("fails at i ="));
}

#[test]
fn configuration_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let malformed = tmp.path().join("bad.json");
    fs::write(&malformed, "{ not json").unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["check".into(), "--model".into(), "/no/such/model.json".into()],
        vec!["check".into(), "--model".into(), malformed.display().to_string()],
        vec!["threshold".into(), "--model".into(), model("logistic"), "--tol".into(), "0".into()],
        vec!["threshold".into(), "--model".into(), model("logistic"), "--grid".into(), "1:0:0.1".into()],
        vec!["integrate".into(), "--model".into(), model("logistic"), "--init".into(), "delta:90".into()],
        vec!["simulate".into(), "--model".into(), model("logistic"), "--patches".into(), "1".into()],
        vec!["simulate".into(), "--model".into(), model("logistic"), "--init".into(), "poisson".into()],
        vec!["threshold".into()],
        vec!["nonsense".into()],
    ];
    for args in cases {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = metapop(&refs);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
        assert!(!stderr(&out).is_empty());
    }
}

#[test]
fn thread_cap_is_validated() {
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_metapop"))
            .args(["check", "--model", &model("logistic")])
            .env("METAPOP_THREADS", v)
            .output()
            .unwrap()
    };
    assert_eq!(run("0").status.code(), Some(2));
    assert_eq!(run("many").status.code(), Some(2));
    assert_eq!(run("1").status.code(), Some(0));
}

#[test]
fn threshold_persistent_writes_curves_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "thr");
    let out = metapop(&["threshold", "--model", &model("logistic"), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    let rep = &v["report"]["outcome"];
    assert_eq!(rep["outcome"], "report");
    assert_eq!(rep["classification"], "persistent");
    assert!((rep["s_star"].as_f64().unwrap() - 0.437_070_782_691_772).abs() < 1e-8);
    assert_eq!(v["report"]["sign_changes"], 1);
    assert!(v["report"]["lambda0"].as_f64().unwrap() > 0.0);

    let curve = read(&dir, "g_curve.csv");
    let mut lines = curve.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    assert_eq!(lines.next().unwrap(), "s,G,G_minus_s");
    assert_eq!(lines.count(), 40);
    assert!(read(&dir, "pi_star.csv").contains("j,pi_j"));
    assert!(read(&dir, "chi.csv").contains("lambda,chi"));

    let manifest: Value = serde_json::from_str(&read(&dir, "manifest.json")).unwrap();
    assert_eq!(manifest["config_hash"], v["config_hash"]);
    assert_eq!(manifest["exit_status"], 0);
    for f in manifest["files"].as_array().unwrap() {
        let body = fs::read(dir.join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&body)));
    }
}

#[test]
fn threshold_subcritical_constant_is_extinct() {
    let out = metapop(&["threshold", "--model", &model("constant_subcritical")]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["report"]["outcome"]["classification"], "extinct");
    assert_eq!(v["report"]["outcome"]["s_star"], 0.0);
    assert!((v["report"]["outcome"]["r0"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-8);
}

#[test]
fn threshold_refuses_without_finite_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "unb");
    let out = metapop(&["threshold", "--model", &model("unbounded_growth"), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("refusing: no nontrivial equilibrium"), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["report"]["outcome"]["outcome"], "no_equilibrium");
    assert_eq!(v["report"]["outcome"]["no_fixed_point"], true);
    assert!(read(&dir, "unbounded.csv").contains("s,G_lower,ratio,converged"));
    let ricker = metapop(&["threshold", "--model", &model("ricker")]);
    assert_eq!(ricker.status.code(), Some(1));
    assert!(stderr(&ricker).starts_with("refusing:"));
}

#[test]
fn lossy_migration_is_accepted() {
    let out = metapop(&["threshold", "--model", &model("logistic_lossy")]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert!(v["report"]["outcome"]["r0"].as_f64().unwrap().is_finite());
}

#[test]
fn sweep_reports_consistent_dichotomy() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "sweep");
    let out = metapop(&["sweep", "--model", &model("logistic"), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    assert_eq!(v["report"]["points"], 20);
    assert_eq!(v["report"]["dichotomy_consistent"], true);
    assert_eq!(v["report"]["lambda_sign_consistent"], true);
    assert_eq!(v["report"]["transitions"].as_array().unwrap().len(), 1);
    let csv = read(&dir, "sweep.csv");
    assert_eq!(csv.lines().nth(1).unwrap(), "nu,r0,lambda0,s_star,s_tilde,classification");
    assert_eq!(csv.lines().count(), 22);
}

#[test]
fn integrate_converges_from_a_single_colonist() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = out_dir(&tmp, "int");
    let out = metapop(&["integrate", "--model", &model("logistic"), "--T", "100", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rep = &json(&out)["report"];
    assert_eq!(rep["converged"], true);
    assert!(rep["final_distance"].as_f64().unwrap() < 1e-3);
    assert!(rep["max_mass_defect"].as_f64().unwrap() < 1e-9);
    assert!(rep["comparison"]["max_envelope_excess"].as_f64().unwrap() <= 1e-6);
    assert_eq!(read(&dir, "trajectory.csv").lines().count(), 1003);
    assert!(read(&dir, "distance.csv").contains("t,m1_distance"));
}

#[test]
fn integrate_from_empty_stays_empty() {
    let out = metapop(&["integrate", "--model", &model("logistic"), "--T", "10", "--init", "empty"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rep = &json(&out)["report"];
    assert_eq!(rep["s_final"], 0.0);
    assert_eq!(rep["max_mass_defect"], 0.0);
}

#[test]
fn under_truncation_is_a_numerical_failure() {
    let out = metapop(&["integrate", "--model", &model("logistic"), "--N", "4", "--T", "20"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("truncation leak"), "{}", stderr(&out));
}

#[test]
fn simulation_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (out_dir(&tmp, "a"), out_dir(&tmp, "b"), out_dir(&tmp, "c"));
    let args = |d: &Path, seed: &str| -> Vec<String> {
        ["simulate", "--model", &model("logistic"), "--patches", "300", "--T", "10", "--seed", seed, "--out", d.to_str().unwrap()]
            .iter()
            .map(|s| s.to_string())
            .collect()
    };
    for (d, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let refs = args(d, seed);
        let out = metapop(&refs.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    for f in ["empirical.csv", "comparison.csv", "simulate.json", "manifest.json"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    assert_ne!(read(&a, "empirical.csv"), read(&c, "empirical.csv"));
    let rep: Value = serde_json::from_str(&read(&a, "simulate.json")).unwrap();
    assert_eq!(rep["report"]["ledger_balanced"], true);
    let header = read(&a, "comparison.csv");
    assert_eq!(header.lines().nth(1).unwrap(), "t,i,p_hat,p_ode,sd,z,within_band");
}

#[test]
fn quick_verify_is_green() {
    let out = metapop(&["verify", "--quick"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rep = &json(&out)["report"];
    assert_eq!(rep["all_passed"], true);
    assert_eq!(rep["checks"].as_array().unwrap().len(), 13);
}

#[test]
fn corrupted_rate_table_turns_verify_red() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("corrupt.json");
    let spec = r#"{"family":"table","params":{"birth":[2,2,9,2,2],"death":[0.5,1.5,1.8333333333,2,2.1],
        "birth_limit":2,"death_limit":2.5},"gamma":0.5,"nu":0.2}"#;
    fs::write(&path, spec).unwrap();
    let out = metapop(&["verify", "--quick", "--model", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(stderr(&out).contains("FAIL hypotheses"));
    let good = metapop(&["verify", "--quick", "--model", &model("logistic_slow")]);
    assert_eq!(good.status.code(), Some(0), "{}", stderr(&good));
}

#[test]
fn bundled_models_are_listed() {
    let out = metapop(&["models"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "builtin:logistic"));
    let builtin = metapop(&["check", "--model", "builtin:constant_reversible"]);
    assert_eq!(builtin.status.code(), Some(0));
}
