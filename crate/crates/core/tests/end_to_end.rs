mod common;

use std::sync::Arc;

use shopdesk::eval::{pass_hat_k, pass_value, run_ablation, AblationError, MetricError, TrialSet};
use shopdesk::llm::{ReplayBackend, ScriptedBackend};
use shopdesk::simenv::{mutations_accounted, run_episode, Modality};

use common::*;

fn transcript_bytes(result: &shopdesk::simenv::EpisodeResult) -> Vec<u8> {
    let mut out = Vec::new();
    result.transcript.write_jsonl(&mut out).unwrap();
    out
}

#[test]
fn every_bundled_task_passes_with_defaults() {
    let suite = bundled_suite();
    assert!(suite.tasks.len() >= 10);
    assert!(
        suite
            .tasks
            .iter()
            .filter(|t| t.modality == Modality::Multimodal)
            .count()
            >= 3
    );
    for task in &suite.tasks {
        let result = episode(&suite, task, &simulated());
        let failed: Vec<_> = result.record.report.iter().filter(|p| !p.passed).collect();
        assert!(
            result.record.success,
            "{}: error {:?}, failed {failed:?}\n{}",
            task.task_id,
            result.record.error,
            result.transcript.render_context(usize::MAX)
        );
        assert!(
            mutations_accounted(&task.world_seed, &result),
            "{}",
            task.task_id
        );
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let suite = bundled_suite();
    for task in &suite.tasks {
        let a = episode(&suite, task, &simulated());
        let b = episode(&suite, task, &simulated());
        assert_eq!(
            transcript_bytes(&a),
            transcript_bytes(&b),
            "{}",
            task.task_id
        );
        assert_eq!(a.trace, b.trace, "{}", task.task_id);
        assert_eq!(a.record, b.record, "{}", task.task_id);
    }
}

#[test]
fn bench_reaches_full_pass_hat_k() {
    let suite = bundled_suite();
    let configs = [ablation("default", simulated(), 5, vec![1, 2, 3, 4, 5])];
    let run = run_ablation(&suite, &configs, &factory(&suite), 4).unwrap();
    assert_eq!(run.episodes.len(), suite.tasks.len() * 5);
    let row = &run.report.rows[0];
    assert_eq!(row.pass_hat_k[&1], "1.0000");
    assert_eq!(row.pass_hat_k[&5], "1.0000");
    assert_eq!(row.errored_episodes, 0);

    let set = TrialSet::from_records(run.episodes.iter().map(|(_, e)| &e.record));
    assert_eq!(set.require_equal_trials().unwrap(), 5);
    assert_eq!(
        pass_hat_k(&set, 5).unwrap(),
        num_rational::BigRational::from_integer(1.into())
    );
}

#[test]
fn worker_count_does_not_change_results() {
    let suite = bundled_suite();
    let configs = [ablation("default", simulated(), 2, vec![1, 2])];
    let one = run_ablation(&suite, &configs, &factory(&suite), 1).unwrap();
    let many = run_ablation(&suite, &configs, &factory(&suite), 8).unwrap();
    assert_eq!(one.report, many.report);
    for ((_, a), (_, b)) in one.episodes.iter().zip(&many.episodes) {
        assert_eq!(transcript_bytes(a), transcript_bytes(b));
    }
}

#[test]
fn ablation_counts_and_usage_errors() {
    let mut suite = bundled_suite();
    suite.tasks.truncate(3);
    let configs = [
        ablation("a", simulated(), 5, vec![1, 5]),
        ablation(
            "b",
            shopdesk::AgentConfig {
                aci: false,
                ..simulated()
            },
            5,
            vec![1, 5],
        ),
    ];
    let run = run_ablation(&suite, &configs, &factory(&suite), 2).unwrap();
    assert_eq!(run.episodes.len(), 30);
    assert_eq!(run.report.rows.len(), 2);
    assert!(
        pass_value(&run.report.rows[0], 1).unwrap() >= pass_value(&run.report.rows[0], 5).unwrap()
    );

    let bad = [ablation("k7", simulated(), 5, vec![7])];
    match run_ablation(&suite, &bad, &factory(&suite), 1) {
        Err(AblationError::Metric(MetricError::Usage(m))) => assert!(m.contains("k = 7"), "{m}"),
        other => panic!("expected usage error, got {other:?}"),
    }
}

#[test]
fn artifacts_written_per_trial() {
    let suite = bundled_suite();
    let mut small = suite.clone();
    small.tasks.truncate(2);
    let run = run_ablation(
        &small,
        &[ablation("default", simulated(), 2, vec![1])],
        &factory(&small),
        2,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    run.write_to(dir.path()).unwrap();
    let task_dir = dir.path().join("default").join(&small.tasks[0].task_id);
    for name in [
        "trial-00.json",
        "trial-01.json",
        "trial-00.transcript.jsonl",
        "trial-00.trace.jsonl",
    ] {
        assert!(task_dir.join(name).is_file(), "{name}");
    }
    let transcript = std::fs::File::open(task_dir.join("trial-00.transcript.jsonl")).unwrap();
    let reread =
        shopdesk::memory::WorkingMemory::read_jsonl(std::io::BufReader::new(transcript)).unwrap();
    assert_eq!(&reread, &run.episodes[0].1.transcript);
    assert!(dir.path().join("report.json").is_file());
}

#[test]
fn recorded_exchanges_replay_identically() {
    let suite = bundled_suite();
    let task = suite.task("after-damaged-refund").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("exchanges.json");

    let live = ScriptedBackend::from_path(&task.script_path().unwrap()).unwrap();
    let mut recorder = ReplayBackend::record(Box::new(live), &store);
    let recorded = run_episode(
        task,
        0,
        &simulated(),
        &mut recorder,
        Arc::new(suite.assets.clone()),
    );
    drop(recorder);

    let mut replayer = ReplayBackend::replay(&store).unwrap();
    let replayed = run_episode(
        task,
        0,
        &simulated(),
        &mut replayer,
        Arc::new(suite.assets.clone()),
    );
    assert!(replayed.record.success);
    assert_eq!(transcript_bytes(&recorded), transcript_bytes(&replayed));
    assert_eq!(recorded.record, replayed.record);
}
