use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn core_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Runs the binary inside `dir` with a config rooted there.
fn mdforge(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("mdforge.toml");
    if !cfg.exists() {
        let text = format!(
            "pool_path = \"pool.jsonl\"\n[runner]\nworkdir_root = \"runs\"\n[registry]\npotentials_dir = {:?}\n",
            core_fixtures().join("potentials").display().to_string()
        );
        std::fs::write(&cfg, text).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_mdforge"))
        .current_dir(dir)
        .env_remove("MDFORGE_CONFIG")
        .env_remove("MDFORGE_RUNNER_PROFILE")
        .arg("--config")
        .arg(&cfg)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(out)))
}

#[test]
fn find_recommends_the_alloy_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdforge(dir.path(), &["potentials", "find", "CuNi.eam", "--k", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1);
    assert_eq!(text.split_whitespace().next(), Some("CuNi.eam.alloy"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mdforge(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(mdforge(dir.path(), &["potentials", "find"]).status.code(), Some(2));
    assert_eq!(mdforge(dir.path(), &["--profile", "fancy", "potentials", "list"]).status.code(), Some(2));
    assert_eq!(mdforge(dir.path(), &["potentials", "find", "x", "--k", "0"]).status.code(), Some(2));
    assert_eq!(mdforge(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn evaluate_clean_pair_scores_full_marks() {
    let dir = tempfile::tempdir().unwrap();
    let script = fixtures().join("clean/clean.in");
    let log = fixtures().join("clean/clean.log");
    let out = mdforge(
        dir.path(),
        &["--profile", "mock", "--json", "evaluate", "--script", script.to_str().unwrap(), "--log", log.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["r_correct"], 1.0);
    assert_eq!(v["r_format"], 1);
    assert_eq!(v["score"], 10.0);
}

#[test]
fn operational_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let script = fixtures().join("clean/clean.in");
    let args = ["--profile", "mock", "evaluate", "--script", script.to_str().unwrap(), "--log", "missing.log"];
    assert_eq!(mdforge(dir.path(), &args).status.code(), Some(1));
    assert_eq!(mdforge(dir.path(), &["potentials", "info", "Nope.eam"]).status.code(), Some(1));
    let out = mdforge(dir.path(), &["--potentials", "no-such-dir", "potentials", "list"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no-such-dir"));
}

#[test]
fn run_reports_failures_through_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let good = fixtures().join("clean/clean.in");
    let out = mdforge(dir.path(), &["--profile", "stub", "--json", "run", good.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["result"]["status"], "success");

    let bad = dir.path().join("bad.in");
    std::fs::write(&bad, "units metal\nfrobnicate 1\nrun 10\n").unwrap();
    let out = mdforge(dir.path(), &["--profile", "stub", "run", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("Unknown command"), "{}", stdout(&out));

    let out = mdforge(dir.path(), &["--profile", "stub", "--json", "run", "--probe", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["executable"], false);
}

#[test]
fn loop_writes_a_session_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdforge(dir.path(), &["--profile", "mock", "--json", "loop", "--task", "LJ liquid", "--session-id", "cli-1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = json(&out);
    assert_eq!(traj["session_id"], "cli-1");
    assert_eq!(traj["terminal"], "accepted");
    let session = dir.path().join("runs/cli-1");
    for f in ["trajectory.json", "events.jsonl", "llm.jsonl", "1/run/log.lammps"] {
        assert!(session.join(f).is_file(), "{f} missing");
    }
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(session.join("trajectory.json")).unwrap()).unwrap();
    assert_eq!(on_disk, traj);
    assert_eq!(mdforge(dir.path(), &["loop", "--task", "x", "--session-id", "../up"]).status.code(), Some(2));
}

#[test]
fn loop_takes_resumes_from_stdin() {
    use std::io::Write as _;
    let dir = tempfile::tempdir().unwrap();
    mdforge(dir.path(), &["potentials", "list"]);
    let mut child = Command::new(env!("CARGO_BIN_EXE_mdforge"))
        .current_dir(dir.path())
        .args(["--config", "mdforge.toml", "--profile", "mock", "--json", "loop", "--task", "t", "--session-id", "h1"])
        .args(["--hitl", "pause-before-run"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"directive keep it short\nset nothing=1\n\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paused"));
    let traj = json(&out);
    let notes = traj["iterations"][0]["user_directives"].to_string();
    assert!(notes.contains("keep it short"), "{notes}");
}

#[test]
fn generate_and_check_agree_on_potentials() {
    let dir = tempfile::tempdir().unwrap();
    let out = mdforge(dir.path(), &["--profile", "mock", "--json", "generate", "--task", "t", "--k", "2", "--execute"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["candidates"].as_array().unwrap().len(), 2);
    assert_eq!(v["candidates"][0]["format"]["value"], 1);
    assert_eq!(v["candidates"][1]["run"]["status"], "success");

    let script = core_fixtures().join("corpus/01_worked_example_final.in");
    let out = mdforge(dir.path(), &["--json", "potentials", "check", script.to_str().unwrap()]);
    let v = json(&out);
    assert_eq!(v["available"].as_array().unwrap().len(), 1);
    assert!(v["missing"].as_array().unwrap().is_empty());

    let draft = dir.path().join("draft.in");
    std::fs::write(&draft, "units metal\npair_style eam/alloy\npair_coeff * * CuNi.eam Cu Ni\n").unwrap();
    let text = stdout(&mdforge(dir.path(), &["potentials", "check", draft.to_str().unwrap()]));
    assert!(text.contains("missing: CuNi.eam (line 3); closest: CuNi.eam.alloy"), "{text}");
}

#[test]
fn plot_writes_svg_charts() {
    let dir = tempfile::tempdir().unwrap();
    let log = fixtures().join("clean/clean.log");
    let out = mdforge(dir.path(), &["plot", log.to_str().unwrap(), "--out", "charts"]);
    assert_eq!(out.status.code(), Some(0));
    let files: Vec<_> = std::fs::read_dir(dir.path().join("charts")).unwrap().flatten().collect();
    assert!(!files.is_empty());
    assert!(files.iter().all(|f| f.path().extension().is_some_and(|e| e == "svg")));
}

#[test]
fn bench_runs_offline() {
    let dir = tempfile::tempdir().unwrap();
    let items = core_fixtures().join("bench/syntax_sample.jsonl");
    let out = mdforge(dir.path(), &["--profile", "mock", "--json", "bench", "qa", items.to_str().unwrap(), "--repeats", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["repeats"], 1);

    let tasks = core_fixtures().join("bench/codegen_sample.jsonl");
    let out = mdforge(dir.path(), &["--profile", "mock", "--json", "bench", "codegen", tasks.to_str().unwrap(), "--k", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&out)["codegen"]["exec_success_rate"], 1.0);
}
