//! Simulated storefront: world state, buyer-scripted tasks, success checks
//! and the episode runner.

mod check;
mod task;
pub mod tools;
mod world;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agent::{episode_millis, Agent, AgentConfig};
use crate::llm::ChatBackend;
use crate::memory::WorkingMemory;
use crate::mllm::{FixtureVisualBackend, VisualBackend};
use crate::trace::{ActionTrace, TraceEvent};
use crate::Millis;

pub use check::{check_success, PredicateOutcome};
pub use task::{
    BuyerTurn, FactMatch, LoadError, Modality, ResponseFact, StateAssertion, SuccessCriteria, Task,
};
pub use world::{
    Order, OrderAction, OrderItem, OrderStatus, Policy, Product, ShipmentEvent, World, WorldError,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeUsage {
    pub prompt_chars: u64,
    pub completion_chars: u64,
    /// Planner calls plus non-cached describe calls.
    pub backend_calls: u64,
    pub describe_calls: u64,
}

/// Per-trial summary, written as `trial-NN.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub task_id: String,
    pub trial_index: usize,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    pub success: bool,
    pub report: Vec<PredicateOutcome>,
    pub wall_time_ms: Millis,
    pub usage: EpisodeUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub record: TrialRecord,
    pub transcript: WorkingMemory,
    /// What the planner saw, after placeholder abstraction.
    pub planner_view: WorkingMemory,
    pub trace: ActionTrace,
    pub final_world: World,
}

impl EpisodeResult {
    /// Writes `trial-NN.json`, `trial-NN.transcript.jsonl` and
    /// `trial-NN.trace.jsonl` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let stem = format!("trial-{:02}", self.record.trial_index);
        let record = serde_json::to_string_pretty(&self.record).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(format!("{stem}.json")), record + "\n")?;
        let transcript = std::fs::File::create(dir.join(format!("{stem}.transcript.jsonl")))?;
        self.transcript
            .write_jsonl(std::io::BufWriter::new(transcript))
            .map_err(std::io::Error::other)?;
        let trace = std::fs::File::create(dir.join(format!("{stem}.trace.jsonl")))?;
        self.trace.write_jsonl(std::io::BufWriter::new(trace))
    }
}

/// Plays one task to completion. Never panics on backend failure: the
/// error is recorded and the episode counts as failed.
pub fn run_episode(
    task: &Task,
    trial_index: usize,
    config: &AgentConfig,
    backend: &mut dyn ChatBackend,
    visual: Arc<dyn VisualBackend>,
) -> EpisodeResult {
    let started = Instant::now();
    let registry = tools::registry(config.strategy);
    let session_id = format!("{}-{trial_index:02}", task.task_id);
    let mut agent = Agent::new(
        &session_id,
        config,
        &registry,
        backend,
        task.reset(),
        visual,
    );
    let mut error = None;
    for turn in task.buyer_script.iter().take(task.max_turns) {
        let outcome = agent.handle_buyer_turn(&turn.utterance);
        if let Some(fatal) = outcome.fatal {
            error = Some(fatal);
            break;
        }
    }
    let planner_view = agent.planner_view().clone();
    let (transcript, session, usage) = agent.into_parts();
    let (passed, report) = check_success(&session.world, &transcript, &task.success);
    let describe_calls = session.trace.describe_calls() as u64;
    let usage = EpisodeUsage {
        prompt_chars: usage.prompt_chars,
        completion_chars: usage.completion_chars,
        backend_calls: usage.chat_calls + describe_calls,
        describe_calls,
    };
    let measured = started.elapsed().as_secs_f64() * 1000.0;
    EpisodeResult {
        record: TrialRecord {
            task_id: task.task_id.clone(),
            trial_index,
            modality: task.modality,
            config: None,
            success: passed && error.is_none(),
            report,
            wall_time_ms: episode_millis(
                &config.latency,
                measured,
                usage.prompt_chars,
                usage.backend_calls,
            ),
            usage,
            error,
        },
        transcript,
        planner_view,
        trace: session.trace,
        final_world: session.world,
    }
}

/// Re-applies the trace's recorded mutations to `seed`.
pub fn replay_mutations(seed: &World, trace: &ActionTrace) -> Result<World, WorldError> {
    let mut world = seed.clone();
    for event in trace.events() {
        if let TraceEvent::WorldMutation {
            order_id, action, ..
        } = event
        {
            let action: OrderAction = action.parse().map_err(WorldError::Invalid)?;
            world.apply(order_id, action)?;
        }
    }
    Ok(world)
}

/// True when every change to the world is accounted for by the trace.
pub fn mutations_accounted(seed: &World, result: &EpisodeResult) -> bool {
    replay_mutations(seed, &result.trace).is_ok_and(|w| w.same_state(&result.final_world))
}

#[derive(Debug, Deserialize)]
struct SuiteFile {
    name: String,
    assets: String,
    tasks: Vec<String>,
}

/// A named set of tasks sharing one image-fixture file.
#[derive(Debug, Clone)]
pub struct Suite {
    pub name: String,
    pub dir: PathBuf,
    pub assets: FixtureVisualBackend,
    pub tasks: Vec<Task>,
}

impl Suite {
    /// Loads `suite.json`; task and asset paths are relative to it.
    pub fn load(file: &Path) -> Result<Self, LoadError> {
        let io = |e: std::io::Error| LoadError::Io {
            file: file.display().to_string(),
            message: e.to_string(),
        };
        let text = std::fs::read_to_string(file).map_err(io)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let raw: SuiteFile =
            serde_path_to_error::deserialize(de).map_err(|e| LoadError::Schema {
                file: file.display().to_string(),
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        let dir = file
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf();
        let assets =
            FixtureVisualBackend::load(&dir.join(&raw.assets)).map_err(|e| LoadError::Schema {
                file: dir.join(&raw.assets).display().to_string(),
                path: String::new(),
                message: e.to_string(),
            })?;
        let mut tasks = Vec::with_capacity(raw.tasks.len());
        for rel in &raw.tasks {
            let task = Task::load(&dir.join(rel))?;
            task.check_assets(&assets)?;
            if tasks.iter().any(|t: &Task| t.task_id == task.task_id) {
                return Err(LoadError::Schema {
                    file: file.display().to_string(),
                    path: "tasks".into(),
                    message: format!("duplicate task id `{}`", task.task_id),
                });
            }
            tasks.push(task);
        }
        Ok(Self {
            name: raw.name,
            dir,
            assets,
            tasks,
        })
    }

    pub fn task(&self, task_id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }
}
