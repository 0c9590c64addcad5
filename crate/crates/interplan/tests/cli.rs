//! Black-box tests for the `interplan` binary: exit codes, output files,
//! and determinism across identical invocations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_interplan");

fn workspace_root() -> PathBuf {
    // the committed config references trace paths relative to the repo root
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn config_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/toy_config.toml")
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(BIN)
        .current_dir(workspace_root())
        .args(["--config", config_path().to_str().unwrap()])
        .args(["--out", out.to_str().unwrap()])
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn run_is_deterministic_and_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let output = run(&["--seed", "7", "run"], out);
        assert!(output.status.success(), "{output:?}");
        let stdout = String::from_utf8(output.stdout).unwrap();
        assert!(stdout.contains("schema_version=1"), "{stdout}");
    }
    let trace = "trace_interactive_7.jsonl";
    let bytes_a = std::fs::read(a.join(trace)).unwrap();
    let bytes_b = std::fs::read(b.join(trace)).unwrap();
    assert!(!bytes_a.is_empty());
    assert_eq!(bytes_a, bytes_b, "identical config+seed must give identical traces");
}

#[test]
fn eval_single_episode_emits_one_row_per_mode() {
    let dir = tempfile::tempdir().unwrap();
    let output = run(&["--episodes", "1", "eval"], dir.path());
    assert!(output.status.success(), "{output:?}");
    let csv = std::fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "header plus two data rows:\n{csv}");
    assert!(lines[0].starts_with("schema_version,mode,"));
    assert!(lines[1].contains("interactive"));
    assert!(lines[2].contains("non_interactive"));
}

#[test]
fn plot_renders_one_frame_per_tick() {
    let dir = tempfile::tempdir().unwrap();
    let trace = workspace_root().join("crates/interplan/tests/data/toy_trace_0.jsonl");
    let output = run(&["plot", "--trace", trace.to_str().unwrap()], dir.path());
    assert!(output.status.success(), "{output:?}");
    let frames = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "svg")
        })
        .count();
    assert!(frames > 0, "expected at least one frame");
}

#[test]
fn missing_config_is_a_config_error() {
    let output = Command::new(BIN)
        .args(["--config", "/nonexistent/config.toml", "run"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1), "{output:?}");
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("/nonexistent/config.toml"), "{stderr}");
}

#[test]
fn malformed_trace_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{ this is not json\n").unwrap();
    let output = run(&["plot", "--trace", bad.to_str().unwrap()], dir.path());
    assert_eq!(output.status.code(), Some(2), "{output:?}");
}
