use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::{json, Value};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn shopdesk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shopdesk"))
        .args(args)
        .current_dir(root())
        .env_remove("SHOPDESK_LLM_BASE_URL")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_bundled_task() {
    let out = tempfile::tempdir().unwrap();
    let o = shopdesk(&[
        "run",
        "suite/tasks/after-tracking.json",
        "--suite",
        "suite/suite.json",
        "--scripted",
        "--out",
        path(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("success=true"));
    let dir = out.path().join("after-tracking");
    for name in [
        "trial-00.json",
        "trial-00.transcript.jsonl",
        "trial-00.trace.jsonl",
    ] {
        assert!(dir.join(name).is_file(), "{name}");
    }
}

#[test]
fn run_config_errors() {
    let o = shopdesk(&[
        "run",
        "after-tracking",
        "--suite",
        "suite/suite.json",
        "--scripted",
        "no/such/script.json",
    ]);
    assert_ne!(o.status.code(), Some(0));
    assert!(stderr(&o).contains("no/such/script.json"), "{}", stderr(&o));

    let o = shopdesk(&[
        "run",
        "after-tracking",
        "--suite",
        "suite/suite.json",
        "--scripted",
        "--remote",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("exactly one backend"), "{}", stderr(&o));

    let o = shopdesk(&["run", "after-tracking", "--suite", "suite/suite.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_reports_task_failure() {
    let out = tempfile::tempdir().unwrap();
    let o = shopdesk(&[
        "run",
        "after-cancel",
        "--suite",
        "suite/suite.json",
        "--scripted",
        "--decision",
        "off",
        "--out",
        path(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stdout(&o).contains("success=false"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let cfg = json!({
        "scripted": true,
        "suite": root().join("suite/suite.json"),
        "out_dir": "out",
        "agent": {"decision_module": false}
    });
    std::fs::write(&config, cfg.to_string()).unwrap();
    let o = shopdesk(&["--config", path(&config), "run", "after-cancel"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(dir.path().join("out/after-cancel/trial-00.json").is_file());
    let o = shopdesk(&[
        "--config",
        path(&config),
        "run",
        "after-cancel",
        "--decision",
        "on",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    std::fs::write(
        &config,
        json!({"scripted": true, "agent": {"acii": true}}).to_string(),
    )
    .unwrap();
    let o = shopdesk(&[
        "--config",
        path(&config),
        "run",
        "suite/tasks/after-cancel.json",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("acii"));
}

#[test]
fn record_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let exchanges = dir.path().join("exchanges.json");
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let common = ["run", "pre-shelf-fit", "--suite", "suite/suite.json"];
    let o = shopdesk(
        &[
            &common[..],
            &[
                "--scripted",
                "--record",
                path(&exchanges),
                "--out",
                path(&first),
            ],
        ]
        .concat(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = shopdesk(
        &[
            &common[..],
            &["--replay", path(&exchanges), "--out", path(&second)],
        ]
        .concat(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let read = |d: &Path| std::fs::read(d.join("pre-shelf-fit/trial-00.transcript.jsonl")).unwrap();
    assert_eq!(read(&first), read(&second));
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn bench_prints_pass_k_table() {
    let out = tempfile::tempdir().unwrap();
    let o = shopdesk(&[
        "bench",
        "--suite",
        "suite/suite.json",
        "--scripted",
        "--trials",
        "5",
        "--out",
        path(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().next().unwrap().contains("pass^1") && text.contains("pass^5"));
    let r = report(out.path());
    let row = &r["rows"][0];
    let p = |k: &str| {
        row["pass_hat_k"][k]
            .as_str()
            .unwrap()
            .parse::<f64>()
            .unwrap()
    };
    assert!(p("1") >= p("5"));
    assert_eq!(row["episodes"], 60);
    assert!(out.path().join("report.txt").is_file());
    assert!(out
        .path()
        .join("default/pre-shelf-fit/trial-04.trace.jsonl")
        .is_file());
}

#[test]
fn ablate_aci_matrix() {
    let out = tempfile::tempdir().unwrap();
    let o = shopdesk(&[
        "ablate",
        "--suite",
        "suite/suite.json",
        "--matrix",
        "suite/ablations/aci.json",
        "--scripted",
        "--trials",
        "2",
        "--out",
        path(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(out.path());
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["config"], "aci-on");
    let t = |i: usize| rows[i]["mean_time_ms"]["multimodal"].as_f64().unwrap();
    assert!(t(0) <= t(1), "{} > {}", t(0), t(1));

    let o = shopdesk(&[
        "ablate",
        "--suite",
        "suite/suite.json",
        "--matrix",
        "suite/ablations/aci.json",
        "--scripted",
        "--trials",
        "5",
        "--k",
        "7",
        "--out",
        path(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("k = 7"));
}

#[test]
fn bench_with_faults_completes_and_flags_errors() {
    let out = tempfile::tempdir().unwrap();
    let o = shopdesk(&[
        "bench",
        "--suite",
        "crates/core/tests/fixtures/robust/suite.json",
        "--scripted",
        "--trials",
        "1",
        "--out",
        path(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let r = report(out.path());
    assert_eq!(r["rows"][0]["episodes"], 5);
    assert_eq!(r["rows"][0]["errored_episodes"], 1);
}

const FIXTURES: &str = "crates/cli/tests/fixtures/metrics";

#[test]
fn metrics_from_annotations_and_scenarios() {
    let o = shopdesk(&[
        "metrics",
        "--annotations",
        &format!("{FIXTURES}/annotations.csv"),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("ai_contribution_ratio = 3/10 = 0.3000"),
        "{}",
        stdout(&o)
    );

    let o = shopdesk(&[
        "metrics",
        "--scenarios",
        &format!("{FIXTURES}/scenarios.json"),
    ]);
    let text = stdout(&o);
    assert!(text.contains("[Product Consultation] = 186.14%"), "{text}");
    assert!(text.contains("[Logistics & Order] = 0.91%"), "{text}");
    assert!(
        text.contains("relative_improvement[mean] = 93.53%"),
        "{text}"
    );

    let o = shopdesk(&[
        "metrics",
        "--annotations",
        &format!("{FIXTURES}/malformed.csv"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line(s) 3, 4, 5"), "{}", stderr(&o));
}

#[test]
fn metrics_from_scaled_records() {
    // Table-1 success rates as integer counts out of 10000 trials of one task.
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("records.jsonl");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&file).unwrap());
    for (config, successes) in [
        ("s1-base", 3139),
        ("s1-new", 8982),
        ("s2-base", 6456),
        ("s2-new", 6515),
    ] {
        for i in 0..10_000 {
            let record = json!({
                "task_id": "scenario", "trial_index": i, "modality": "unimodal", "config": config,
                "success": i < successes, "report": [], "wall_time_ms": 1.0,
                "usage": {"prompt_chars": 0, "completion_chars": 0, "backend_calls": 0, "describe_calls": 0}
            });
            writeln!(out, "{record}").unwrap();
        }
    }
    drop(out);
    let o = shopdesk(&[
        "metrics",
        "--records",
        path(&file),
        "--k",
        "1",
        "--improve",
        "s1-base:s1-new",
        "--improve",
        "s2-base:s2-new",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.contains("relative_improvement[s1-base:s1-new] = 186.14%"),
        "{text}"
    );
    assert!(
        text.contains("relative_improvement[s2-base:s2-new] = 0.91%"),
        "{text}"
    );
    assert!(
        text.contains("relative_improvement[mean] = 93.53%"),
        "{text}"
    );
}

#[test]
fn metrics_from_bench_records_and_empty_dir() {
    let out = tempfile::tempdir().unwrap();
    let o = shopdesk(&[
        "bench",
        "--suite",
        "suite/suite.json",
        "--scripted",
        "--trials",
        "2",
        "--out",
        path(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = shopdesk(&["metrics", "--records", path(out.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("config default: 12 task(s), 2 trial(s) per task"));
    assert!(stdout(&o).contains("pass^2 = 1.0000"));

    let empty = tempfile::tempdir().unwrap();
    let o = shopdesk(&["metrics", "--records", path(empty.path())]);
    assert_ne!(o.status.code(), Some(0));
    let o = shopdesk(&["metrics"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn chat_demo_replays_end_to_end() {
    let out = tempfile::tempdir().unwrap();
    let demo = std::fs::read(root().join("suite/demo/after-damaged-refund.txt")).unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_shopdesk"))
        .args([
            "chat",
            "after-damaged-refund",
            "--suite",
            "suite/suite.json",
            "--scripted",
            "--out",
        ])
        .arg(out.path())
        .current_dir(root())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&demo).unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("decision round:"));
    assert!(text.contains("<- selected"));
    assert!(text.contains("tool order_update"));
    assert!(
        text.contains("agent: Once approved, the refund goes back"),
        "{text}"
    );
    // `/trace` repeats the first round after both turns.
    assert_eq!(text.matches("describe [Image 1]").count(), 2, "{text}");

    let transcript = out.path().join("chat.transcript.jsonl");
    let o = shopdesk(&["replay", path(&transcript), "--trace"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.starts_with("session chat-after-damaged-refund (7 turns)"),
        "{text}"
    );
    assert!(text.contains("trace:") && text.contains("world: request_refund O1003"));
}

#[test]
fn chat_surfaces_backend_errors_and_continues() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_shopdesk"))
        .args([
            "chat",
            "pre-stock-price",
            "--suite",
            "suite/suite.json",
            "--scripted",
        ])
        .current_dir(root())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"something off-script\n/transcript\n")
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("error: "), "{text}");
    assert!(text.contains("[0] buyer: something off-script"), "{text}");
}
