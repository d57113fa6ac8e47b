mod support;

use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use btforge_testkit::reference_execution;
use support::*;

const WORLD_01: &str = "suite/worlds/gears-01.json";
const GOAL_01: &str = "is_inserted_to(gear1, shaft1)";

fn btforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btforge"))
        .args(args)
        .env_remove("BTFORGE_LLM_BASE_URL")
        .env_remove("BTFORGE_LLM_MODEL")
        .env_remove("BTFORGE_LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn path(rel: &str) -> String {
    fixture(rel).to_str().unwrap().to_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn generate_recursive_prints_golden_tree() {
    let o = btforge(&[
        "generate",
        "--scheme",
        "recursive",
        "--world",
        &path(WORLD_01),
        "--goal",
        GOAL_01,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), read_fixture(GOLDEN_TREE));
    assert!(stderr(&o).contains("outcome=GoalReached"));
    assert!(stderr(&o).contains("tokens=0"));
}

#[test]
fn generate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tree.json");
    let metrics = dir.path().join("metrics.json");
    let o = btforge(&[
        "generate",
        "--scheme",
        "recursive",
        "--world",
        &path(WORLD_01),
        "--goal",
        GOAL_01,
        "--out",
        out.to_str().unwrap(),
        "--metrics-out",
        metrics.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "");
    assert_eq!(
        std::fs::read_to_string(out).unwrap(),
        read_fixture(GOLDEN_TREE)
    );
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(metrics).unwrap()).unwrap();
    assert_eq!(m["scheme"], "recursive");
    assert_eq!(m["tokens"], 0);
    assert_eq!(m["outcome"], "GoalReached");
}

#[test]
fn replay_one_step_matches_fixture_reply() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("t.json");
    let record = dir.path().join("r.json");
    let o = btforge(&[
        "generate",
        "--scheme",
        "one-step",
        "--provider",
        "replay",
        "--replay",
        &path(REPLAY_A),
        "--world",
        &path(WORLD_01),
        "--goal",
        GOAL_01,
        "--instruction",
        &task("gears-01").instruction,
        "--transcript-out",
        transcript.to_str().unwrap(),
        "--record-out",
        record.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), read_fixture(GOLDEN_TREE));
    let t: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(transcript).unwrap()).unwrap();
    assert_eq!(t.as_array().unwrap().len(), 1);
    assert_eq!(t[0]["template"], "bt_onestep");
    // the recorded exchange is a subset of the source fixture
    let recorded = btforge::llm::ReplayFixture::load(&record).unwrap();
    let source = btforge::llm::ReplayFixture::load(&fixture(REPLAY_A)).unwrap();
    assert_eq!(recorded.len(), 1);
    for (k, v) in &recorded.0 {
        assert_eq!(source.0.get(k), Some(v));
    }
}

#[test]
fn generate_hitl_with_scripted_replies() {
    let o = btforge(&[
        "generate",
        "--scheme",
        "hitl",
        "--provider",
        "replay",
        "--replay",
        &path(REPLAY_HITL),
        "--world",
        &path(WORLD_01),
        "--goal",
        GOAL_01,
        "--instruction",
        &task("gears-01").instruction,
        "--feedback",
        HITL_FEEDBACK,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), read_fixture(GOLDEN_TREE));
    assert!(stderr(&o).contains("iterations=2"));
}

#[test]
fn generate_iterative_with_mock_replies() {
    let o = btforge(&[
        "generate",
        "--scheme",
        "iterative",
        "--mock-reply",
        &path(MOCK_ITERATIVE),
        "--world",
        &path(WORLD_01),
        "--goal",
        GOAL_01,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(
        stderr(&o).contains("iterations=2 tokens=4484"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn usage_errors_exit_two() {
    let o = btforge(&[
        "generate",
        "--scheme",
        "recursive",
        "--world",
        &path(WORLD_01),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--goal"));
    let o = btforge(&[
        "generate",
        "--scheme",
        "recursive",
        "--world",
        &path(WORLD_01),
        "--goal",
        "not an atom(",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = btforge(&[
        "generate",
        "--scheme",
        "recursive",
        "--world",
        "/nonexistent.json",
        "--goal",
        GOAL_01,
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = btforge(&["simulate", "--bt", &path(SUITE), "--world", &path(WORLD_01)]);
    assert_eq!(o.status.code(), Some(2));
    let o = btforge(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn provider_errors_exit_three() {
    // the mock has no replies
    let o = btforge(&[
        "generate",
        "--scheme",
        "one-step",
        "--world",
        &path(WORLD_01),
        "--goal",
        GOAL_01,
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    // replay miss
    let o = btforge(&[
        "generate",
        "--scheme",
        "one-step",
        "--provider",
        "replay",
        "--replay",
        &path(REPLAY_A),
        "--world",
        &path(WORLD_01),
        "--goal",
        GOAL_01,
        "--instruction",
        "something never recorded",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no recorded reply"));
    // unconfigured endpoint
    let o = btforge(&[
        "generate",
        "--scheme",
        "one-step",
        "--provider",
        "http",
        "--world",
        &path(WORLD_01),
        "--goal",
        GOAL_01,
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_golden_tree_reports_execution_order() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let report = dir.path().join("report.json");
    let o = btforge(&[
        "simulate",
        "--bt",
        &path(GOLDEN_TREE),
        "--world",
        &path(WORLD_01),
        "--trace-out",
        trace.to_str().unwrap(),
        "--report-out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let expected: Vec<String> = reference_execution()
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{}. {a}", i + 1))
        .collect();
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "outcome: GoalReached");
    assert_eq!(
        &lines[2..6],
        expected
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()
            .as_slice()
    );
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r["final"], "GoalReached");
    assert_eq!(r["executed"].as_array().unwrap().len(), 4);
    let trace = std::fs::read_to_string(trace).unwrap();
    assert!(trace.lines().count() > 4);
    for line in trace.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn simulate_trivial_tree_and_failing_tree() {
    let dir = tempfile::tempdir().unwrap();
    let t = task("gears-01");
    let reached = btforge_core::BehaviorTree::new(
        a("hold", &["left_hand", "parallelgripper"]),
        btforge_core::BtNode::condition(a("hold", &["left_hand", "parallelgripper"])),
    );
    let p = dir.path().join("trivial.json");
    std::fs::write(&p, btforge_core::bt::serialize_bt(&reached)).unwrap();
    let o = btforge(&[
        "simulate",
        "--bt",
        p.to_str().unwrap(),
        "--world",
        &path(WORLD_01),
        "--goal",
        "hold(left_hand, parallelgripper)",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("outcome: GoalReached\nticks: 1\n"));

    let p = dir.path().join("incoherent.json");
    std::fs::write(&p, btforge_core::bt::serialize_bt(&incoherent_tree(&t))).unwrap();
    let o = btforge(&[
        "simulate",
        "--bt",
        p.to_str().unwrap(),
        "--world",
        &path(WORLD_01),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("could not run"));
}

#[test]
fn simulate_accepts_lenient_documents_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("lenient.json");
    std::fs::write(&p, lenient_only_document(&oracle_tree(&task("gears-01")))).unwrap();
    let o = btforge(&[
        "simulate",
        "--bt",
        p.to_str().unwrap(),
        "--world",
        &path(WORLD_01),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("warning:"));
}

#[test]
fn eval_oracle_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let o = btforge(&[
        "eval",
        "--scheme",
        "recursive",
        "--suite",
        &path(SUITE),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[..4], ["recursive", "17/17", "17/17", "17/17"]);
    assert_eq!(row[5], "0.00");
    let report: btforge::eval::SuiteReport =
        serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report.records.len(), 17);
}

#[test]
fn eval_replay_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.csv");
    let o = btforge(&[
        "eval",
        "--scheme",
        "one-step",
        "--provider",
        "replay",
        "--replay",
        &path(REPLAY_B),
        "--suite",
        &path(SUITE),
        "--out",
        out.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out).unwrap();
    assert_eq!(csv, stdout(&o));
    assert!(csv.contains("one-step,13/17,17/17,13/17,"));
}

#[test]
fn eval_jobs() {
    let suite = path(SUITE);
    let o = btforge(&[
        "eval",
        "--scheme",
        "recursive",
        "--suite",
        &suite,
        "--jobs",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("recursive,17/17,17/17,17/17,"));
    let mock = path(MOCK_ITERATIVE);
    let args = [
        "eval",
        "--scheme",
        "iterative",
        "--suite",
        &suite,
        "--mock-reply",
        &mock,
        "--jobs",
        "2",
    ];
    let o = btforge(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--jobs"));
}

/// Accepts and drops connections, counting them.
fn counting_listener() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    std::thread::spawn(move || {
        for s in listener.incoming() {
            h.fetch_add(1, Ordering::SeqCst);
            drop(s);
        }
    });
    (url, hits)
}

fn with_endpoint(url: &str, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btforge"))
        .args(args)
        .env("BTFORGE_LLM_BASE_URL", url)
        .env("BTFORGE_LLM_MODEL", "m")
        .output()
        .unwrap()
}

#[test]
fn offline_providers_never_touch_the_network() {
    let (url, hits) = counting_listener();
    let world = path(WORLD_01);
    let suite = path(SUITE);
    let runs: [&[&str]; 4] = [
        &[
            "generate",
            "--scheme",
            "recursive",
            "--world",
            &world,
            "--goal",
            GOAL_01,
        ],
        &["eval", "--scheme", "recursive", "--suite", &suite],
        &[
            "eval",
            "--scheme",
            "one-step",
            "--provider",
            "replay",
            "--replay",
            &path(REPLAY_A),
            "--suite",
            &suite,
        ],
        &["eval", "--scheme", "iterative", "--suite", &suite],
    ];
    for args in runs {
        let o = with_endpoint(&url, args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(hits.load(Ordering::SeqCst), 0);
    // positive control: the http provider does connect
    let o = with_endpoint(
        &url,
        &[
            "generate",
            "--scheme",
            "one-step",
            "--provider",
            "http",
            "--world",
            &world,
            "--goal",
            GOAL_01,
        ],
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(hits.load(Ordering::SeqCst) >= 1);
}

#[test]
fn help_lists_subcommands() {
    let o = btforge(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for cmd in ["generate", "simulate", "eval", "serve"] {
        assert!(stdout(&o).contains(cmd));
    }
    assert!(Path::new(env!("CARGO_BIN_EXE_btforge")).exists());
}
