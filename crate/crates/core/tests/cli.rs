mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::*;
use workflow_ql::llm::{API_KEY_ENV, BASE_URL_ENV};
use workflow_ql::RunRecord;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_workflow-ql"))
        .args(args)
        .env_remove(API_KEY_ENV)
        .env_remove(BASE_URL_ENV)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn solve_prints_table_path_and_return() {
    let spec = spec_path("research_scientist");
    let o = bin(&["solve", p(&spec)]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.starts_with("state,action,q_value\n"));
    assert!(text.contains("path: ST → IR → LR → MD → SV → PR → RP → ED\n"), "{text}");
    assert!(text.contains("discounted return (gamma=0.9): -4.685590\n"), "{text}");

    let o = bin(&["solve", "--spec", p(&spec_path("legal_matter_intake"))]);
    let text = stdout(&o);
    assert!(text.contains("path: ST → MI → IA → CC → PP → PR → CM → BI → ED\n"), "{text}");
    assert!(text.contains("discounted return (gamma=0.9): -5.217031\n"), "{text}");
}

#[test]
fn solve_csv_is_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec_path("legal_matter_intake");
    let (a, b, c) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("c.csv"));
    for out in [&a, &b] {
        assert_eq!(bin(&["solve", p(&spec), "--out", p(out)]).status.code(), Some(0));
    }
    bin(&["solve", p(&spec), "--seed", "7", "--out", p(&c)]);
    let read = |f: &Path| std::fs::read(f).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn prompt_subcommand_matches_golden_files() {
    let spec = spec_path("research_scientist");
    let o = bin(&["prompt", p(&spec)]);
    assert_eq!(stdout(&o), golden("research_scientist_initial.txt"));
    let o = bin(&["prompt", p(&spec), "--emit", "iterative"]);
    assert_eq!(stdout(&o), golden("research_scientist_iterative.txt"));
    let o = bin(&["prompt", p(&spec), "--gamma", "unset"]);
    assert_eq!(stdout(&o), golden("research_scientist_initial_uns.txt"));
}

#[test]
fn spec_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ not json").unwrap();
    let o = bin(&["solve", p(&broken)]);
    assert_eq!(o.status.code(), Some(2));

    let mut spec: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(spec_path("research_scientist")).unwrap())
            .unwrap();
    spec["actions"]["ED"] = serde_json::json!(["ST"]);
    let invalid = dir.path().join("invalid.json");
    std::fs::write(&invalid, spec.to_string()).unwrap();
    let o = bin(&["solve", p(&invalid)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("terminal must self-loop"));

    assert_eq!(bin(&["solve", "/no/such/spec.json"]).status.code(), Some(2));
    assert_eq!(bin(&["prompt", p(&spec_path("research_scientist")), "--gamma", "1.5"]).status.code(), Some(2));
}

#[test]
fn live_run_without_a_key_exits_with_three() {
    let o = bin(&["run", p(&spec_path("research_scientist"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains(API_KEY_ENV));
}

#[test]
fn exhausted_mock_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&[
        "run",
        p(&spec_path("research_scientist")),
        "--mock",
        p(&fixture("research_bad.txt")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn mock_run_succeeds_on_the_second_iteration() {
    let o = bin(&[
        "run",
        p(&spec_path("legal_matter_intake")),
        "--mock",
        p(&fixture("two_step.mock")),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let json_end = text.rfind("\n}\n").unwrap() + 2;
    let record = RunRecord::from_json(&text[..json_end]).unwrap();
    assert_eq!(record.iterations_used, 2);
    assert!(record.satisfied);
    assert_eq!(record.model.as_deref(), Some("mock"));
    assert!(text.contains("satisfied after 2 of 5 iteration(s), return -5.21703"));
}

#[test]
fn run_with_verify_compares_against_local_training() {
    let o = bin(&[
        "run",
        p(&spec_path("research_scientist")),
        "--mock",
        p(&fixture("always_good.mock")),
        "--verify",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("model path matches local: true"), "{text}");
    assert!(!text.contains("FLAGGED"), "{text}");
}

#[test]
fn report_over_ten_mock_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&[
        "report",
        p(&spec_path("research_scientist")),
        "--mock",
        p(&fixture("always_good.mock")),
        "--runs",
        "10",
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("(1.0, 0.0)"), "{text}");
    assert!(text.contains("(-4.68559, 0.0)"), "{text}");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 10);
}

#[test]
fn verify_rejudges_a_saved_record() {
    let dir = tempfile::tempdir().unwrap();
    let spec = spec_path("legal_matter_intake");
    let o = bin(&["run", p(&spec), "--mock", p(&fixture("two_step.mock")), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    let record_path = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    let o = bin(&["verify", p(&spec), "--record", p(&record_path)]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    // Tamper with the stored verdict.
    let mut record = RunRecord::from_json(&std::fs::read_to_string(&record_path).unwrap()).unwrap();
    record.iterations[0].report.satisfied = true;
    std::fs::write(&record_path, record.to_json()).unwrap();
    let o = bin(&["verify", p(&spec), "--record", p(&record_path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("MISMATCH"));
}

#[test]
fn mock_and_base_url_conflict() {
    let o = bin(&[
        "run",
        p(&spec_path("research_scientist")),
        "--mock",
        p(&fixture("always_good.mock")),
        "--base-url",
        "http://localhost:1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn system_prompt_flag_is_recorded() {
    let spec = spec_path("research_scientist");
    let mock = fixture("always_good.mock");
    for (flag, expected) in [
        (None, Some("You are a helpful assistant.")),
        (Some(""), None),
        (Some("Answer tersely."), Some("Answer tersely.")),
    ] {
        let mut args = vec!["run", p(&spec), "--mock", p(&mock)];
        if let Some(f) = flag {
            args.extend(["--system-prompt", f]);
        }
        let text = stdout(&bin(&args));
        let json_end = text.rfind("\n}\n").unwrap() + 2;
        let record = RunRecord::from_json(&text[..json_end]).unwrap();
        assert_eq!(record.system_prompt.as_deref(), expected);
    }
}
