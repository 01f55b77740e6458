#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use shopdesk::eval::{AblationConfig, ScriptedFactory};
use shopdesk::llm::ScriptedBackend;
use shopdesk::simenv::{run_episode, EpisodeResult, Suite, Task};
use shopdesk::{AgentConfig, LatencyModel};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn bundled_suite() -> Suite {
    Suite::load(&repo_root().join("suite/suite.json")).expect("bundled suite loads")
}

pub fn simulated() -> AgentConfig {
    AgentConfig {
        latency: LatencyModel::simulated_default(),
        ..AgentConfig::default()
    }
}

pub fn ablation(
    name: &str,
    agent: AgentConfig,
    n_trials: usize,
    k_values: Vec<usize>,
) -> AblationConfig {
    AblationConfig {
        name: name.to_string(),
        agent,
        n_trials,
        k_values,
    }
}

pub fn factory(suite: &Suite) -> ScriptedFactory {
    ScriptedFactory::for_suite(suite)
}

/// One scripted episode of `task` under `config`.
pub fn episode(suite: &Suite, task: &Task, config: &AgentConfig) -> EpisodeResult {
    let mut backend =
        ScriptedBackend::from_path(&task.script_path().expect("task names a script")).unwrap();
    run_episode(
        task,
        0,
        config,
        &mut backend,
        Arc::new(suite.assets.clone()),
    )
}
