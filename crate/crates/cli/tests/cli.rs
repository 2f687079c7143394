use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowlab_cli::report::strip_timestamp;
use flowlab_cli::{load_config, EXIT_CONFIG, EXIT_PASS, EXIT_VIOLATION, THREADS_ENV};

fn flowlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowlab")).args(args).env_remove(THREADS_ENV).output().unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

const ROTATION: &str = r#"{
  "experiment": "density_bound", "dim": 2,
  "field": {"kind": "rotation", "params": {"omega": 1.0}},
  "particles": 500, "time_steps": 20, "seed": 3
}"#;

#[test]
fn malformed_json_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.json", "{\"experiment\": ");
    assert_eq!(flowlab(&["run", p.to_str().unwrap()]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(flowlab(&["validate", p.to_str().unwrap()]).status.code(), Some(EXIT_CONFIG));
}

#[test]
fn semantic_errors_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"experiment": "density_bound", "dim": 2}"#,
        r#"{"experiment": "density_bound", "dim": 0, "field": {"kind": "constant", "params": {"v": []}}}"#,
        r#"{"experiment": "ou_properties", "dim": 1, "unknown": 1}"#,
        r#"{"experiment": "ou_properties", "dim": 1, "p": 0.5}"#,
        r#"{"experiment": "density_bound", "dim": 1, "field": {"kind": "constant", "params": {"v": [1.0]}}, "c": 0.1}"#,
        r#"{"experiment": "rotated_flow", "dim": 1, "field": {"kind": "constant", "params": {"v": [1.0]}}}"#,
    ];
    for (i, body) in cases.iter().enumerate() {
        let p = write(dir.path(), &format!("c{i}.json"), body);
        let out = flowlab(&["run", p.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(EXIT_CONFIG), "{body}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(!dir.path().join("x.report.json").exists());
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(flowlab(&["run"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(flowlab(&["frobnicate"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(flowlab(&["--help"]).status.code(), Some(EXIT_PASS));
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "r.json", ROTATION);
    assert_eq!(flowlab(&["run", p.to_str().unwrap(), "--threads", "0"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(flowlab(&["run", dir.path().join("missing.json").to_str().unwrap()]).status.code(), Some(EXIT_CONFIG));
}

#[test]
fn catalogue_lists_named_fields() {
    let out = flowlab(&["catalogue"]);
    assert_eq!(out.status.code(), Some(EXIT_PASS));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["constant", "linear", "rotation", "zero", "low_regularity", "product_sine", "weakly_coupled"] {
        assert!(text.contains(name), "{name} missing");
    }
}

#[test]
fn shipped_configs_validate() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            load_config(&path, None).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(flowlab(&["validate", path.to_str().unwrap()]).status.code(), Some(EXIT_PASS));
            n += 1;
        }
    }
    assert!(n >= 8);
}

#[test]
fn rotation_density_is_exactly_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "rot.json", ROTATION);
    let prefix = dir.path().join("out/rot");
    let out = flowlab(&["run", p.to_str().unwrap(), "--out", prefix.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(EXIT_PASS), "{}", String::from_utf8_lossy(&out.stderr));

    let report = std::fs::read_to_string(dir.path().join("out/rot.report.json")).unwrap();
    assert!(report.ends_with("}\n") && !report.contains('\r'));
    let v = strip_timestamp(&report).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(v["experiment"], "density_bound");
    assert!(v["tolerances"]["confidence_sigmas"].as_f64() == Some(3.0));

    let csv = std::fs::read_to_string(dir.path().join("out/rot.table.csv")).unwrap();
    assert!(!csv.contains('\r'));
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let lhs = header.iter().position(|h| *h == "lhs").unwrap();
    let mut rows = 0;
    for line in lines {
        let v: f64 = line.split(',').nth(lhs).unwrap().parse().unwrap();
        assert_eq!(v, 1.0);
        rows += 1;
    }
    assert_eq!(rows, 21);
}

#[test]
fn seed_override_and_thread_env() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "g.json",
        r#"{"experiment": "density_bound", "dim": 1, "field": {"kind": "custom_named", "params": {"name": "gradient_perturbation"}},
            "particles": 400, "time_steps": 10, "seed": 1}"#,
    );
    let run = |prefix: &str, seed: &str, threads: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_flowlab"));
        cmd.args(["run", p.to_str().unwrap(), "--seed", seed, "--out", dir.path().join(prefix).to_str().unwrap()]);
        match threads {
            Some(t) => cmd.env(THREADS_ENV, t),
            None => cmd.env_remove(THREADS_ENV),
        };
        let out = cmd.output().unwrap();
        let report = std::fs::read_to_string(dir.path().join(format!("{prefix}.report.json"))).ok();
        (out.status.code(), report.map(|r| strip_timestamp(&r).unwrap()))
    };
    let (code_a, a) = run("a", "5", None);
    let (code_b, b) = run("b", "5", Some("3"));
    let (_, c) = run("c", "6", None);
    assert_eq!(code_a, Some(EXIT_PASS));
    assert_eq!(code_b, Some(EXIT_PASS));
    assert_eq!(a, b);
    assert_eq!(a.as_ref().unwrap()["seed"], 5);
    assert_ne!(a.unwrap()["results"], c.unwrap()["results"]);

    let (code, _) = run("d", "5", Some("many"));
    assert_eq!(code, Some(EXIT_CONFIG));
}

#[test]
fn violations_exit_one() {
    // A non-smooth field does not reach fourth order on a coarse dt sweep.
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "s.json",
        r#"{"experiment": "semigroup", "dim": 1, "field": {"kind": "custom_named", "params": {"name": "low_regularity"}},
            "horizon": 1.0, "particles": 50, "sweep": {"key": "dt", "values": [0.5, 0.25, 0.125]}}"#,
    );
    let out = flowlab(&["run", p.to_str().unwrap(), "--out", dir.path().join("s").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(EXIT_VIOLATION));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
    let report = std::fs::read_to_string(dir.path().join("s.report.json")).unwrap();
    let v = strip_timestamp(&report).unwrap();
    assert_eq!(v["pass"], false);
    assert!(v["convergence_table"]["rows"].as_array().unwrap().len() == 3);
}
