mod common;

use shopdesk::action::aci::AciConfig;
use shopdesk::eval::{mean_completion_time, run_ablation, TrialSet};
use shopdesk::mllm::Strategy;
use shopdesk::simenv::{tools::MULTIMODAL_DESCRIBE, Modality};
use shopdesk::AgentConfig;

use common::*;

fn has_qualifying_url(task: &shopdesk::simenv::Task) -> bool {
    let aci = AciConfig::default();
    task.buyer_script
        .iter()
        .any(|t| !aci.qualifying_urls(&t.utterance).is_empty())
}

#[test]
fn placeholders_shrink_prompts_and_simulated_time() {
    let suite = bundled_suite();
    let on = simulated();
    let off = AgentConfig {
        aci: false,
        ..simulated()
    };
    let mut on_set = TrialSet::default();
    let mut off_set = TrialSet::default();
    let mut checked = 0;
    for task in suite.tasks.iter().filter(|t| has_qualifying_url(t)) {
        let a = episode(&suite, task, &on);
        let b = episode(&suite, task, &off);
        assert!(a.record.success && b.record.success, "{}", task.task_id);
        assert!(
            a.record.usage.prompt_chars < b.record.usage.prompt_chars,
            "{}: {} vs {}",
            task.task_id,
            a.record.usage.prompt_chars,
            b.record.usage.prompt_chars
        );
        on_set.push(
            &task.task_id,
            task.modality,
            a.record.success,
            a.record.wall_time_ms,
        );
        off_set.push(
            &task.task_id,
            task.modality,
            b.record.success,
            b.record.wall_time_ms,
        );
        checked += 1;
    }
    assert!(checked >= 4);
    let t_on = mean_completion_time(&on_set, Some(Modality::Multimodal)).unwrap();
    let t_off = mean_completion_time(&off_set, Some(Modality::Multimodal)).unwrap();
    assert!(t_on < t_off, "{t_on} !< {t_off}");
}

#[test]
fn aci_ablation_rows_order_multimodal_time() {
    let suite = bundled_suite();
    let configs = [
        ablation("aci-on", simulated(), 2, vec![1, 2]),
        ablation(
            "aci-off",
            AgentConfig {
                aci: false,
                ..simulated()
            },
            2,
            vec![1, 2],
        ),
    ];
    let run = run_ablation(&suite, &configs, &factory(&suite), 4).unwrap();
    let on = run.report.rows[0].mean_time_ms.multimodal.unwrap();
    let off = run.report.rows[1].mean_time_ms.multimodal.unwrap();
    assert!(on < off, "{on} !< {off}");
    assert!(run.report.rows[0].usage.prompt_chars < run.report.rows[1].usage.prompt_chars);
}

#[test]
fn decision_module_rescues_adversarial_first_plans() {
    let suite = bundled_suite();
    let without = AgentConfig {
        decision_module: false,
        ..simulated()
    };
    for id in ["after-cancel", "complaint-wrong-color"] {
        let task = suite.task(id).unwrap();
        let off = episode(&suite, task, &without);
        let on = episode(&suite, task, &simulated());
        assert!(
            !off.record.success,
            "{id} should fail without the decision module"
        );
        assert!(
            on.record.success,
            "{id} should pass with the decision module"
        );
        let evaluations = off
            .trace
            .events()
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    shopdesk::trace::TraceEvent::Llm {
                        purpose: shopdesk::trace::LlmPurpose::Evaluate,
                        ..
                    }
                )
            })
            .count();
        assert_eq!(evaluations, 0, "no evaluation calls when the module is off");
    }
}

#[test]
fn strategy_modes_are_separated() {
    let suite = bundled_suite();
    let aci = AciConfig::default();
    let planner = AgentConfig {
        strategy: Strategy::Planner,
        ..simulated()
    };
    let multimodal: Vec<_> = suite
        .tasks
        .iter()
        .filter(|t| t.modality == Modality::Multimodal)
        .collect();
    assert!(multimodal.len() >= 3);
    for task in multimodal {
        let tool = episode(&suite, task, &simulated());
        assert!(tool.trace.describe_calls() >= 1, "{}", task.task_id);
        for request in tool.trace.planner_requests() {
            for m in &request.messages {
                assert!(
                    aci.qualifying_urls(&m.content).is_empty(),
                    "{}: raw URL in prompt",
                    task.task_id
                );
                assert!(m.images.is_empty());
            }
        }

        let direct = episode(&suite, task, &planner);
        assert_eq!(direct.trace.describe_calls(), 0, "{}", task.task_id);
        let requests: Vec<_> = direct.trace.planner_requests().collect();
        assert!(requests
            .iter()
            .any(|r| r.messages.iter().any(|m| !m.images.is_empty())));
        assert!(requests
            .iter()
            .all(|r| !r.messages[0].content.contains(MULTIMODAL_DESCRIBE)));
    }
}
