use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nonlocal-dv"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("config").join(name)
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("nonlocal-dv-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(command)
        .arg("--config")
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

const SMALL_SUITE: &str = r#"{
  "command": "verify",
  "seed": 11,
  "verify": {
    "product_rule": { "pairs": 2, "pointwise_every": 2 },
    "shape_law": { "s_values": [0.5] },
    "error_form": { "samples": 100, "cases": [[0.4, 0.3]] },
    "scaling": { "s_values": [0.5] },
    "fourier": { "matrices": 2 },
    "closed_forms": { "matrices": 2 },
    "eigen": { "instances": 2 }
  }
}"#;

#[test]
fn recover_matrix_finds_hidden_diagonal() {
    let out = scratch("recover");
    let o = run("recover-matrix", &bundled("recover_matrix.json"), &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert_eq!(s["command"], "recover-matrix");
    let m = &s["results"]["recovered_matrix"];
    let entry = |i: usize, j: usize| m[i][j].as_f64().unwrap();
    assert!((entry(0, 0) - 4.0).abs() < 0.05 * 4.0);
    assert!((entry(1, 1) - 1.0).abs() < 0.05);
    assert!(entry(0, 1).abs() < 0.04 && entry(1, 0).abs() < 0.04);
    assert!(out.join("probes.csv").exists());
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = scratch("det-a");
    let b = scratch("det-b");
    for (out, threads) in [(&a, "1"), (&b, "4")] {
        let o = run(
            "dv-functional",
            &bundled("dv_functional.json"),
            out,
            &["--threads", threads],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["summary.json", "u_min.csv", "w_min.csv", "trace.csv"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn small_verify_suite_passes() {
    let out = scratch("verify");
    let cfg = out.join("verify.json");
    std::fs::write(&cfg, SMALL_SUITE).unwrap();
    let o = run("verify", &cfg, &out, &[]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 9, "{stdout}");
    let s = summary(&out);
    assert_eq!(s["seed"], 11);
    assert_eq!(s["results"]["failed"], 0);
}

#[test]
fn seed_flag_overrides_config() {
    let out = scratch("seed");
    let cfg = out.join("verify.json");
    let mut v: Value = serde_json::from_str(SMALL_SUITE).unwrap();
    v["verify"] = serde_json::json!({ "fourier": { "matrices": 1 } });
    std::fs::write(&cfg, v.to_string()).unwrap();
    let _ = run("verify", &cfg, &out, &["--seed", "5"]);
    assert_eq!(summary(&out)["seed"], 5);
}

#[test]
fn failing_property_exits_with_one() {
    let out = scratch("fail");
    let cfg = out.join("verify.json");
    let mut v: Value = serde_json::from_str(SMALL_SUITE).unwrap();
    v["verify"]["drift"] = serde_json::json!({ "tol": 0.0, "shift": 0.0 });
    std::fs::write(&cfg, v.to_string()).unwrap();
    let o = run("verify", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL "));
    assert!(summary(&out)["results"]["failed"].as_u64().unwrap() >= 1);
}

#[test]
fn schema_errors_exit_with_two_and_name_the_field() {
    let out = scratch("schema");
    let cases = [
        ("{ \"command\": \"eigen\", ", "$"),
        (
            r#"{"kernel": {"variant": "constant", "matrix": [[1.0]], "s": "half"}}"#,
            "$.kernel",
        ),
        (
            r#"{"tolerances": {"eigen": 1e-8, "eigne_max_iter": 3}}"#,
            "$.tolerances",
        ),
        (r#"{"command": "verify"}"#, "$.command"),
    ];
    for (k, (text, path)) in cases.iter().enumerate() {
        let cfg = out.join(format!("bad{k}.json"));
        std::fs::write(&cfg, text).unwrap();
        let o = run("eigen", &cfg, &out, &[]);
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(2), "{text}: {err}");
        assert!(err.contains(path), "{text}: {err}");
    }
    let missing = out.join("no_domain.json");
    std::fs::write(
        &missing,
        r#"{"kernel": {"variant": "constant", "matrix": [[1.0]], "s": 0.5}}"#,
    )
    .unwrap();
    let o = run("eigen", &missing, &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("$.domain"));
}

#[test]
fn missing_config_file_exits_with_one() {
    let out = scratch("io");
    let o = run("eigen", &out.join("does_not_exist.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn numerical_failure_exits_with_three() {
    let out = scratch("numerical");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(bundled("eigen.json")).unwrap()).unwrap();
    v["domain"]["mesh"] = serde_json::json!(0.25);
    v["tolerances"] = serde_json::json!({ "eigen": 1e-300, "eigen_max_iter": 1 });
    let cfg = out.join("eigen.json");
    std::fs::write(&cfg, v.to_string()).unwrap();
    let o = run("eigen", &cfg, &out, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
