//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#[path = "../../core/tests/support/aci_corpus.rs"]
mod aci_corpus;
#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use itertools::Itertools;
use num_bigint::BigInt;
use shopdesk::action::aci::AciConfig;
use shopdesk::decision::{label_for, select, PlanEvaluation};
use shopdesk::eval::{format_decimal, pass_hat_k_task, pass_value, run_ablation};
use shopdesk::memory::Role;
use shopdesk::mllm::Strategy;
use shopdesk::simenv::{EpisodeResult, Modality, Suite};
use shopdesk::trace::TraceEvent;
use shopdesk::{AgentConfig, Exact};

use common::*;

type Check = Result<(), String>;
/// Name, check and runtime limit.
type Criterion = (&'static str, fn() -> Check, Option<Duration>);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_shopdesk"))
        .args(args)
        .current_dir(repo_root())
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "shopdesk {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

/// The percentage printed on the line starting with `key`.
fn reported(output: &str, key: &str) -> Result<f64, String> {
    let line = output
        .lines()
        .find(|l| l.starts_with(key))
        .ok_or_else(|| format!("no `{key}` line in:\n{output}"))?;
    let value = line.split(" = ").nth(1).and_then(|v| v.split('%').next());
    value
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| format!("unparseable line `{line}`"))
}

fn metric_reproduction() -> Check {
    let out = cli(&[
        "metrics",
        "--improve",
        "31.39:89.82",
        "--improve",
        "64.56:65.15",
        "--time-reduction",
        "11.59:5.93",
    ])?;
    for (key, expected) in [
        ("relative_improvement[31.39:89.82]", 186.14),
        ("relative_improvement[64.56:65.15]", 0.91),
        ("relative_improvement[mean]", 93.53),
        ("time_reduction[11.59:5.93]", 48.84),
    ] {
        let got = reported(&out, key)?;
        ensure!(
            (got - expected).abs() <= 0.01 + 1e-9,
            "{key}: got {got}, expected {expected}"
        );
    }
    Ok(())
}

fn pass_k_oracle() -> Check {
    for n in 1..=6usize {
        for c in 0..=n {
            let mut previous: Option<Exact> = None;
            for k in 1..=n {
                // Outcomes: the first c trials succeed.
                let (mut hits, mut total) = (0u64, 0u64);
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() as usize != k {
                        continue;
                    }
                    total += 1;
                    if (0..n).all(|i| mask & (1 << i) == 0 || i < c) {
                        hits += 1;
                    }
                }
                let oracle = Exact::new(BigInt::from(hits), BigInt::from(total));
                let got = pass_hat_k_task(n, c, k).map_err(|e| e.to_string())?;
                ensure!(got == oracle, "n={n} c={c} k={k}: {got} != {oracle}");
                ensure!(
                    format_decimal(&got, 4) == format_decimal(&oracle, 4),
                    "formatting differs"
                );
                if let Some(p) = &previous {
                    ensure!(got <= *p, "not monotone at n={n} c={c} k={k}");
                }
                previous = Some(got);
            }
        }
    }
    Ok(())
}

fn aci_properties() -> Check {
    let messages = aci_corpus::corpus(150);
    let config = AciConfig::default();
    ensure!(messages.len() >= 100, "corpus too small");
    let short = messages
        .iter()
        .filter(|m| m.contains("http://a.io") || m.contains("https://s.ex"))
        .count();
    ensure!(short > 0, "corpus lacks short links");
    let urls: Vec<&str> = messages
        .iter()
        .flat_map(|m| config.qualifying_urls(m).into_iter().map(|(_, u, _)| u))
        .collect();
    ensure!(
        urls.iter().unique().count() < urls.len(),
        "corpus lacks duplicate links"
    );
    aci_corpus::check_session(&messages)?;
    for m in &messages {
        aci_corpus::check_session(std::slice::from_ref(m))?;
    }
    Ok(())
}

fn transcript_bytes(episodes: &[(String, EpisodeResult)]) -> Vec<u8> {
    let mut bytes = Vec::new();
    for (_, e) in episodes {
        e.transcript
            .write_jsonl(&mut bytes)
            .expect("in-memory write");
    }
    bytes
}

fn end_to_end_determinism() -> Check {
    let suite = bundled_suite();
    ensure!(suite.tasks.len() >= 10, "only {} tasks", suite.tasks.len());
    let multimodal = suite
        .tasks
        .iter()
        .filter(|t| t.modality == Modality::Multimodal)
        .count();
    ensure!(multimodal >= 3, "only {multimodal} multimodal tasks");
    let configs = [ablation("bench", simulated(), 5, vec![1, 5])];
    let first = run_ablation(&suite, &configs, &factory(&suite), 4).map_err(|e| e.to_string())?;
    let row = &first.report.rows[0];
    ensure!(
        row.pass_hat_k[&1] == "1.0000",
        "pass^1 = {}",
        row.pass_hat_k[&1]
    );
    ensure!(
        row.pass_hat_k[&5] == "1.0000",
        "pass^5 = {}",
        row.pass_hat_k[&5]
    );
    let scripted_only = first
        .episodes
        .iter()
        .all(|(_, e)| e.trace.events().iter().all(|ev| !matches!(ev, TraceEvent::Describe { backend_id, .. } if !backend_id.starts_with("fixture"))));
    ensure!(scripted_only, "a describe call left the fixture backend");
    let second = run_ablation(&suite, &configs, &factory(&suite), 2).map_err(|e| e.to_string())?;
    ensure!(
        transcript_bytes(&first.episodes) == transcript_bytes(&second.episodes),
        "transcripts differ between runs"
    );
    Ok(())
}

fn ablation_directionality() -> Check {
    let suite = bundled_suite();
    let aci = AciConfig::default();
    let on = simulated();
    let off = AgentConfig {
        aci: false,
        ..simulated()
    };
    let mut compared = 0;
    for task in &suite.tasks {
        let has_url = task
            .buyer_script
            .iter()
            .any(|t| !aci.qualifying_urls(&t.utterance).is_empty());
        if !has_url {
            continue;
        }
        let (a, b) = (episode(&suite, task, &on), episode(&suite, task, &off));
        ensure!(
            a.record.usage.prompt_chars < b.record.usage.prompt_chars,
            "{}: prompt chars on {} >= off {}",
            task.task_id,
            a.record.usage.prompt_chars,
            b.record.usage.prompt_chars
        );
        compared += 1;
    }
    ensure!(compared >= 3, "only {compared} URL-bearing tasks");

    let configs = [
        ablation("aci-on", on, 1, vec![1]),
        ablation("aci-off", off, 1, vec![1]),
    ];
    let run = run_ablation(&suite, &configs, &factory(&suite), 4).map_err(|e| e.to_string())?;
    let time = |i: usize| {
        run.report.rows[i]
            .mean_time_ms
            .multimodal
            .unwrap_or(f64::NAN)
    };
    ensure!(
        time(0) < time(1),
        "multimodal time on {} >= off {}",
        time(0),
        time(1)
    );

    let decision_off = AgentConfig {
        decision_module: false,
        ..simulated()
    };
    for id in ["after-cancel", "complaint-wrong-color"] {
        let task = suite.task(id).ok_or(format!("missing task {id}"))?;
        let without = episode(&suite, task, &decision_off);
        let with = episode(&suite, task, &simulated());
        ensure!(
            !without.record.success,
            "{id} passes with the decision module off"
        );
        ensure!(
            with.record.success,
            "{id} fails with the decision module on"
        );
    }
    Ok(())
}

fn evals(confidences: &[f64]) -> Vec<PlanEvaluation> {
    confidences
        .iter()
        .enumerate()
        .map(|(i, &c)| PlanEvaluation {
            plan_id: i,
            label: label_for(i),
            confidence: c,
        })
        .collect()
}

fn decision_invariance() -> Check {
    let fixed = evals(&[0.2, 0.5, 0.3]);
    let decisions: Vec<_> = (0..1000)
        .map(|_| select(&fixed, 0.0).map_err(|e| e.to_string()))
        .try_collect()?;
    ensure!(decisions.iter().all_equal(), "repeated selects disagree");
    for (confidences, expected) in [
        (vec![0.1, 0.4, 0.2, 0.3, 0.0], 1),
        (vec![0.3, 0.3, 0.3, 0.1, 0.0], 0),
        (vec![0.0, 0.25, 0.25, 0.25, 0.25], 1),
        (vec![0.2, 0.2, 0.2, 0.2, 0.2], 0),
    ] {
        for perm in evals(&confidences)
            .into_iter()
            .permutations(confidences.len())
        {
            let d = select(&perm, 0.0).map_err(|e| e.to_string())?;
            ensure!(
                d.selected == Some(expected),
                "{confidences:?}: selected {:?}",
                d.selected
            );
        }
    }
    Ok(())
}

fn strategy_separation() -> Check {
    let suite = bundled_suite();
    let aci = AciConfig::default();
    let planner = AgentConfig {
        strategy: Strategy::Planner,
        ..simulated()
    };
    for task in suite
        .tasks
        .iter()
        .filter(|t| t.modality == Modality::Multimodal)
    {
        let tool = episode(&suite, task, &simulated());
        ensure!(
            tool.record.usage.describe_calls >= 1,
            "{}: no describe call",
            task.task_id
        );
        for request in tool.trace.planner_requests() {
            for m in &request.messages {
                ensure!(
                    aci.qualifying_urls(&m.content).is_empty() && m.images.is_empty(),
                    "{}: raw URL reached the planner",
                    task.task_id
                );
            }
        }
        let p = episode(&suite, task, &planner);
        ensure!(
            p.record.usage.describe_calls == 0,
            "{}: planner mode made describe calls",
            task.task_id
        );
    }
    Ok(())
}

fn fault_suite() -> Suite {
    Suite::load(&repo_root().join("crates/core/tests/fixtures/robust/suite.json"))
        .expect("fault suite loads")
}

fn robustness() -> Check {
    let suite = fault_suite();
    let errors = |id: &str| -> Result<(EpisodeResult, Vec<String>), String> {
        let task = suite.task(id).ok_or(format!("missing task {id}"))?;
        let r = episode(&suite, task, &simulated());
        let errs = r
            .trace
            .tool_calls()
            .filter(|(_, res)| res.is_error)
            .map(|(_, res)| res.text())
            .collect();
        Ok((r, errs))
    };
    let (_, e) = errors("fault-unknown-tool")?;
    ensure!(e == ["unknown_tool"], "unknown tool: {e:?}");
    let (_, e) = errors("fault-invalid-arguments")?;
    ensure!(
        e.len() == 1 && e[0].starts_with("invalid_arguments: "),
        "invalid arguments: {e:?}"
    );
    let (r, e) = errors("fault-illegal-transition")?;
    ensure!(
        e.len() == 1 && e[0].starts_with("illegal_transition: ") && r.trace.mutation_count() == 0,
        "illegal transition: {e:?}"
    );
    let (r, e) = errors("fault-unknown-placeholder")?;
    ensure!(
        e == ["unknown_placeholder: [Image 9]"],
        "unknown placeholder: {e:?}"
    );
    let leaked = r
        .transcript
        .turns()
        .iter()
        .any(|m| m.role == Role::Agent && m.body().contains("[Image 9]"));
    ensure!(!leaked, "unknown placeholder reached the buyer");
    let (r, _) = errors("fault-script-exhausted")?;
    let error = r.record.error.clone().unwrap_or_default();
    ensure!(
        error.contains("no script entry matches"),
        "script exhaustion: {error:?}"
    );

    let configs = [ablation("faults", simulated(), 2, vec![1, 2])];
    let run = run_ablation(&suite, &configs, &factory(&suite), 3).map_err(|e| e.to_string())?;
    ensure!(
        run.episodes.len() == suite.tasks.len() * 2,
        "bench stopped after {} episodes",
        run.episodes.len()
    );
    ensure!(
        pass_value(&run.report.rows[0], 1) == Some(0.8),
        "pass^1 over faults"
    );
    Ok(())
}

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "metric reproduction",
            metric_reproduction,
            Some(Duration::from_secs(1)),
        ),
        (
            "pass^k oracle equivalence",
            pass_k_oracle,
            Some(Duration::from_secs(5)),
        ),
        (
            "placeholder property suite",
            aci_properties,
            Some(Duration::from_secs(5)),
        ),
        (
            "end-to-end determinism",
            end_to_end_determinism,
            Some(Duration::from_secs(30)),
        ),
        (
            "ablation directionality",
            ablation_directionality,
            Some(Duration::from_secs(30)),
        ),
        (
            "decision determinism and invariance",
            decision_invariance,
            None,
        ),
        ("strategy-mode separation", strategy_separation, None),
        ("robustness", robustness, None),
    ];
    let mut failures = 0;
    for (i, (name, check, limit)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {message}"))
        });
        let elapsed = started.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(()), Some(limit)) if elapsed > limit => {
                Err(format!("took {elapsed:?}, limit {limit:?}"))
            }
            (other, _) => other,
        };
        match outcome {
            Ok(()) => println!(
                "criterion {} {name}: PASS ({} ms)",
                i + 1,
                elapsed.as_millis()
            ),
            Err(reason) => {
                failures += 1;
                println!(
                    "criterion {} {name}: FAIL ({} ms): {reason}",
                    i + 1,
                    elapsed.as_millis()
                );
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
