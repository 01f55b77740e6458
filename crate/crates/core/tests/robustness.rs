mod common;

use shopdesk::eval::run_ablation;
use shopdesk::simenv::{mutations_accounted, Suite};
use shopdesk::trace::TraceEvent;

use common::*;

fn fault_suite() -> Suite {
    Suite::load(
        &std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/robust/suite.json"),
    )
    .unwrap()
}

fn error_results(result: &shopdesk::simenv::EpisodeResult) -> Vec<String> {
    result
        .trace
        .tool_calls()
        .filter(|(_, r)| r.is_error)
        .map(|(_, r)| r.text())
        .collect()
}

#[test]
fn each_fault_leaves_its_artifact() {
    let suite = fault_suite();
    let run = |id: &str| episode(&suite, suite.task(id).unwrap(), &simulated());

    let r = run("fault-unknown-tool");
    assert_eq!(error_results(&r), vec!["unknown_tool"]);
    assert!(r.record.success);

    let r = run("fault-invalid-arguments");
    let errors = error_results(&r);
    assert_eq!(errors.len(), 1);
    assert!(errors[0].starts_with("invalid_arguments: "), "{errors:?}");
    assert!(errors[0].contains("order_id") && errors[0].contains("id"));
    assert!(r.record.success);

    let task = suite.task("fault-illegal-transition").unwrap();
    let r = run("fault-illegal-transition");
    assert_eq!(
        error_results(&r),
        vec!["illegal_transition: cannot refund an order that is created"]
    );
    assert_eq!(r.trace.mutation_count(), 0);
    assert!(r.final_world.same_state(&task.world_seed));
    assert!(mutations_accounted(&task.world_seed, &r));
    assert!(r.record.success);

    let r = run("fault-unknown-placeholder");
    assert_eq!(error_results(&r), vec!["unknown_placeholder: [Image 9]"]);
    let notes: Vec<&str> = r
        .trace
        .events()
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Note { message } => Some(message.as_str()),
            _ => None,
        })
        .collect();
    assert!(
        notes
            .iter()
            .any(|n| n.contains("unknown placeholder(s) [Image 9]")),
        "{notes:?}"
    );
    assert!(
        !r.transcript
            .turns()
            .iter()
            .any(|m| m.body().contains("[Image 9]") && m.role == shopdesk::memory::Role::Agent),
        "unknown placeholder never reaches the buyer"
    );
    assert!(r.record.success);

    let r = run("fault-script-exhausted");
    let error = r.record.error.as_deref().unwrap_or_default();
    assert!(error.contains("no script entry matches"), "{error}");
    assert!(!r.record.success);
    assert_eq!(
        r.transcript.len(),
        3,
        "first exchange kept, second buyer turn recorded"
    );
}

#[test]
fn faults_never_abort_a_bench_run() {
    let suite = fault_suite();
    let configs = [ablation("faults", simulated(), 2, vec![1, 2])];
    let run = run_ablation(&suite, &configs, &factory(&suite), 3).expect("bench completes");
    let row = &run.report.rows[0];
    assert_eq!(run.episodes.len(), suite.tasks.len() * 2);
    assert_eq!(row.episodes, 10);
    assert_eq!(row.errored_episodes, 2);
    assert_eq!(row.failed_episodes, 2);
    assert_eq!(row.pass_hat_k[&1], "0.8000");
    assert!(run.report.has_errors());
}
