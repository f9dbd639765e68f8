//! Exit-code and surface-level behavior of the `hpam` binary.

use std::io::Write;
use std::process::Command;

fn hpam(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hpam"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn temp_model(contents: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::Builder::new()
        .suffix(".hpam")
        .tempfile()
        .unwrap();
    f.write_all(contents.as_bytes()).unwrap();
    f
}

#[test]
fn unknown_subcommand_exits_1() {
    assert_eq!(hpam(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn missing_file_exits_1() {
    assert_eq!(
        hpam(&["validate", "/nonexistent/model.hpam"]).status.code(),
        Some(1)
    );
}

#[test]
fn malformed_json_exits_1_with_position() {
    let f = temp_model("{\n  \"version\": 1,\n  nope\n}");
    let out = hpam(&["validate", f.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
}

#[test]
fn bad_measure_exits_2() {
    let f = temp_model(
        r#"{"version": 1, "spaces": [
            {"id": "s", "outcomes": ["a", "b"], "masses": ["1/2", "1/3"]}
        ]}"#,
    );
    let out = hpam(&["validate", f.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn broken_edge_exits_2_and_reports_violation() {
    let f = temp_model(
        r#"{"version": 1,
            "spaces": [
                {"id": "s", "outcomes": ["a", "b"], "masses": ["1/2", "1/2"]},
                {"id": "t", "outcomes": ["x", "y"], "masses": ["3/4", "1/4"]}
            ],
            "maps": [
                {"name": "m", "src": "s", "dst": "t",
                 "pairs": {"a": "x", "b": "y"}}
            ],
            "edges": [{"src": "s", "dst": "t", "map": "m"}]
        }"#,
    );
    let out = hpam(&["validate", f.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("violation"), "stdout: {stdout}");
}

#[test]
fn strict_rejects_unknown_fields_lenient_warns() {
    let f = temp_model(
        r#"{"version": 1, "mystery": true, "spaces": [
            {"id": "s", "outcomes": ["a"], "masses": ["1"]}
        ]}"#,
    );
    let path = f.path().to_str().unwrap().to_string();
    let strict = hpam(&["validate", &path, "--strict"]);
    assert_eq!(strict.status.code(), Some(2));
    let lenient = hpam(&["validate", &path]);
    assert_eq!(lenient.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&lenient.stderr);
    assert!(stderr.contains("warning"), "stderr: {stderr}");
}

#[test]
fn bad_tolerance_flag_exits_1() {
    let fixtures = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let model = fixtures.join("alzheimer.hpam");
    let out = hpam(&[
        "pipeline",
        "run",
        model.to_str().unwrap(),
        "--tolerance",
        "not-a-number",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn tolerance_flag_turns_perturbed_run_into_success() {
    let fixtures = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let model = fixtures.join("alzheimer-perturbed.hpam");
    let strictly = hpam(&["pipeline", "run", model.to_str().unwrap()]);
    assert_eq!(strictly.status.code(), Some(3));
    let relaxed = hpam(&[
        "pipeline",
        "run",
        model.to_str().unwrap(),
        "--tolerance",
        "1/50",
    ]);
    assert_eq!(relaxed.status.code(), Some(0));
}

#[test]
fn export_dot_writes_file() {
    let fixtures = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let model = fixtures.join("education.hpam");
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("g.dot");
    let out = hpam(&[
        "export-dot",
        model.to_str().unwrap(),
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert!(text.starts_with("digraph"));
    assert!(text.contains("attainment"));
}

#[test]
fn pipeline_dot_groups_stages() {
    let fixtures = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let model = fixtures.join("alzheimer.hpam");
    let out = hpam(&["export-dot", model.to_str().unwrap(), "--pipeline"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("cluster_stage_1"));
    assert!(text.contains("cluster_stage_4"));
}
