use std::process::{Command, Output};

use serde_json::Value;

fn finsler(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finsler"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "invalid JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

#[test]
fn tensor_g_euclidean_is_identity() {
    let out = finsler(&["tensor", "g", "euclidean2", "--at", "0,0;1,0"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["quantity"], "g");
    assert_eq!(v["components"], serde_json::json!([[1.0, 0.0], [0.0, 1.0]]));
}

#[test]
fn tensor_matsumoto_funk_vanishes() {
    let out = finsler(&["tensor", "M", "funk-disk", "--samples", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    let dumps = v.as_array().unwrap();
    assert_eq!(dumps.len(), 5);
    for d in dumps {
        assert!(d["norms"]["scale_free"].as_f64().unwrap() <= 1e-7, "{d}");
    }
}

#[test]
fn tensor_flag_sphere_is_one() {
    let out = finsler(&["tensor", "flag", "sphere-projective", "--samples", "5"]);
    assert_eq!(out.status.code(), Some(0));
    for d in stdout_json(&out).as_array().unwrap() {
        let k = d["value"].as_f64().unwrap();
        assert!((k - 1.0).abs() <= 1e-5, "{k}");
    }
}

#[test]
fn tensor_flag_parallel_direction_is_breakdown() {
    let out = finsler(&["tensor", "flag", "euclidean2", "--at", "0,0;1,0", "--u", "2,0"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degenerate flag"));
}

#[test]
fn randers_bound_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        r#"name = "bad"
dim = 2
kind = "randers"
[domain]
min = [-1, -1]
max = [1, 1]
[randers]
b = ["1.2", "0"]
[randers.alpha]
a = [["1", "0"], ["0", "1"]]
"#,
    )
    .unwrap();
    let out = finsler(&["inspect", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Randers bound"));
}

#[test]
fn inspect_is_deterministic() {
    let args = ["inspect", "randers-const-beta", "--samples", "100", "--seed", "7"];
    let a = finsler(&args);
    let b = finsler(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8_lossy(&a.stdout);
    assert!(text.contains("homogeneity pass"));
    assert!(text.contains("convexity pass"));
}

#[test]
fn inspect_accepts_path_like_names() {
    let out = finsler(&["inspect", "examples/euclidean2", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["dim"], 2);
    assert_eq!(v["homogeneity_pass"], true);
}

#[test]
fn classify_quartic() {
    let out = finsler(&["classify", "quartic-minkowski"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["verdicts"]["berwald"]["holds"], true);
    assert_eq!(v["verdicts"]["c_reducible"]["holds"], false);
}

#[test]
fn verify_moeq1_randers() {
    let out = finsler(&["verify", "--identity", "Moeq1", "randers-const-beta"]);
    assert_eq!(out.status.code(), Some(0));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Moeq1 pass (worst residual"), "{err}");
}

#[test]
fn verify_json_is_deterministic() {
    let args = ["verify", "funk-disk", "--samples", "6", "--seed", "3", "--format", "json"];
    let a = finsler(&args);
    let b = finsler(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn geodesic_straight_line() {
    let out = finsler(&["geodesic", "euclidean2", "--x0", "0,0", "--y0", "1,0", "--steps", "100", "--dt", "0.01"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,y1,y2,F"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    // The last step lands on the domain boundary up to roundoff and may be cut.
    assert!(rows.len() >= 100, "{} rows", rows.len());
    for r in &rows {
        assert!((r[1] - r[0]).abs() < 1e-12);
        assert_eq!(r[2], 0.0);
    }
}

#[test]
fn order_too_small_is_config_error() {
    let out = finsler(&["tensor", "riemann", "euclidean2", "--order", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = finsler(&["classify", "euclidean2", "--order", "4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_inputs_are_config_errors() {
    assert_eq!(finsler(&["tensor", "Q", "euclidean2"]).status.code(), Some(2));
    assert_eq!(finsler(&["inspect", "no-such-spec"]).status.code(), Some(2));
    assert_eq!(finsler(&["verify", "--identity", "P99", "euclidean2"]).status.code(), Some(2));
    assert_eq!(finsler(&["tensor", "g", "euclidean2", "--at", "0,0;1"]).status.code(), Some(2));
}

#[test]
fn out_directory_gets_reports_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = finsler(&[
        "classify",
        "euclidean2",
        "funk-disk",
        "--samples",
        "5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let all = stdout_json(&out);
    assert_eq!(all.as_array().unwrap().len(), 2);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "classify");
    assert_eq!(manifest["exit_code"], 0);
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap()).collect();
    assert_eq!(files, ["classify-euclidean2.json", "classify-funk-disk.json"]);
    let funk: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join(files[1])).unwrap()).unwrap();
    assert_eq!(funk["spec"], "funk-disk");
}
