use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hcre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcre"))
        .args(args)
        .output()
        .unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = hcre(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn err_json(args: &[&str]) -> (i32, Value) {
    let out = hcre(args);
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let v: Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    assert_eq!(v["status"], "error");
    (out.status.code().unwrap(), v)
}

const SCALAR_TOML: &str = r#"
[system]
a = [[1.0]]
q = [[1.0]]

[[sensors]]
c = [[1.0]]
r = [[1.0]]

[[sensors]]
count = 2

[topology]
kind = "path"
"#;

#[test]
fn solve_prints_traces() {
    let v = ok_json(&["solve", "--preset", "scalar"]);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["converged"], true);
    let traces: Vec<f64> = v["traces"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!((traces[2] - 3.9901).abs() < 1e-3);
}

#[test]
fn scenario_file_matches_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scalar.toml");
    std::fs::write(&path, SCALAR_TOML).unwrap();
    let from_file = ok_json(&["solve", "--config", path.to_str().unwrap()]);
    let preset = ok_json(&["solve", "--preset", "scalar"]);
    assert_eq!(from_file["traces"], preset["traces"]);
}

#[test]
fn errors_are_machine_readable() {
    let (code, v) = err_json(&["solve", "--preset", "nope"]);
    assert_eq!(code, 2);
    assert_eq!(v["kind"], "usage");

    let (code, v) = err_json(&["solve", "--config", "/definitely/missing.toml"]);
    assert_eq!(code, 1);
    assert_eq!(v["kind"], "io");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        SCALAR_TOML.replace("kind = \"path\"", "kind = \"path\"\ncolour = 3"),
    )
    .unwrap();
    let (_, v) = err_json(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(v["kind"], "config");

    let (_, v) = err_json(&["simulate", "--preset", "scalar", "--trials", "0"]);
    assert_eq!(v["kind"], "invalid_argument");
}

#[test]
fn unobservable_scenario_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blind.toml");
    let blind = SCALAR_TOML.replace("[[sensors]]\nc = [[1.0]]\nr = [[1.0]]\n", "[[sensors]]\n");
    std::fs::write(&path, blind).unwrap();
    let (code, v) = err_json(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert_eq!(v["kind"], "validation");
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn simulate_writes_reproducible_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        std::fs::create_dir_all(&out).unwrap();
        let v = ok_json(&[
            "simulate",
            "--preset",
            "scalar",
            "--trials",
            "50",
            "--horizon",
            "40",
            "--seed",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        (out, v)
    };
    let (a, va) = run("a");
    let (b, vb) = run("b");
    assert_eq!(va["relative_gap_tail"], vb["relative_gap_tail"]);
    for name in ["mse_curves.csv", "per_node.csv", "summary.json"] {
        assert_eq!(
            read(&a.join(name)),
            read(&b.join(name)),
            "{name} differs between reruns"
        );
    }
    let summary: Value = serde_json::from_slice(&read(&a.join("summary.json"))).unwrap();
    assert_eq!(summary["relative_gap_tail"], va["relative_gap_tail"]);
    let curves = String::from_utf8(read(&a.join("mse_curves.csv"))).unwrap();
    assert_eq!(curves.lines().next(), Some("k,mse_k,theory_mse"));
    assert_eq!(curves.lines().count(), 41);
    let per_node = String::from_utf8(read(&a.join("per_node.csv"))).unwrap();
    assert_eq!(per_node.lines().count(), 1 + 40 * 3);
}

#[test]
fn sweep_and_steady_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("run");
    let v = ok_json(&[
        "sweep",
        "--preset",
        "scalar",
        "--variant",
        "icf",
        "--depths",
        "1,5",
        "--out",
        prefix.to_str().unwrap(),
    ]);
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    let files: Vec<String> = v["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap().to_string())
        .collect();
    assert!(!files.is_empty());
    for f in &files {
        assert!(Path::new(f).exists(), "{f}");
    }
    let table = std::fs::read_to_string(&files[0]).unwrap();
    assert!(table.starts_with(
        "L,trace_node_1,trace_node_2,trace_node_3,centralized_trace,asymptotic_trace"
    ));

    let v = ok_json(&[
        "steady",
        "--preset",
        "scalar",
        "--dump-pcal",
        "--out",
        prefix.to_str().unwrap(),
    ]);
    let mse = v["network_mse"].as_f64().unwrap();
    assert!(mse > 0.0 && mse.is_finite());
}

#[test]
fn certify_reports_all_certificates() {
    let v = ok_json(&["certify", "--preset", "scalar"]);
    assert_eq!(v["uniqueness"]["certified"], true);
    assert_eq!(v["contraction"]["certified"], true);
    assert_eq!(v["schur"]["lyapunov_ok"], true);
}

#[test]
fn demo_bound_exceeds_exact() {
    let v = ok_json(&["demo-bound"]);
    assert!(v["bound"].as_f64().unwrap() > v["exact"].as_f64().unwrap());
}
