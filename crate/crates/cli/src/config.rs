//! Run configuration: an optional JSON file, command-line overrides and
//! backend selection.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, ValueEnum};
use serde::Deserialize;
use serde_json::{Map, Value};
use shopdesk::eval::{AblationConfig, BackendFactory};
use shopdesk::llm::{
    BackendError, ChatBackend, RemoteBackend, RemoteConfig, ReplayBackend, ScriptedBackend,
};
use shopdesk::mllm::{FixtureVisualBackend, RemoteVisualBackend, VisualBackend};
use shopdesk::simenv::{Suite, Task};
use shopdesk::{AgentConfig, LatencyModel};

use crate::CliError;

pub const LLM_ENV: &str = "SHOPDESK_LLM";
pub const MLLM_ENV: &str = "SHOPDESK_MLLM";

/// `"scripted": true` uses each task's own script; a string names one script file.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ScriptChoice {
    Enabled(bool),
    File(PathBuf),
}

/// Contents of `--config FILE`. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub scripted: Option<ScriptChoice>,
    pub replay: Option<PathBuf>,
    pub remote: bool,
    pub record: Option<PathBuf>,
    pub suite: Option<PathBuf>,
    pub assets: Option<PathBuf>,
    pub matrix: Option<PathBuf>,
    pub name: Option<String>,
    pub n_trials: Option<usize>,
    pub k_values: Option<Vec<usize>>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Partial agent configuration; missing keys take their defaults.
    pub agent: Map<String, Value>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut config: FileConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            CliError::usage(format!(
                "config {}: at `{}`: {}",
                path.display(),
                e.path(),
                e.inner()
            ))
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        rebase(&mut config.replay);
        rebase(&mut config.record);
        rebase(&mut config.suite);
        rebase(&mut config.assets);
        rebase(&mut config.matrix);
        rebase(&mut config.out_dir);
        if let Some(ScriptChoice::File(p)) = config.scripted.as_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn enabled(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Tool,
    Planner,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    /// Scripted backend; without a path each task uses its own script.
    #[arg(long, num_args = 0..=1, value_name = "SCRIPT")]
    pub scripted: Option<Option<PathBuf>>,
    /// Serve recorded exchanges from a file, or a directory of `<task_id>.json` files.
    #[arg(long, value_name = "PATH")]
    pub replay: Option<PathBuf>,
    /// HTTP backend configured through SHOPDESK_LLM_* (and SHOPDESK_MLLM_* for images).
    #[arg(long)]
    pub remote: bool,
    /// Record every exchange to this file.
    #[arg(long, value_name = "FILE")]
    pub record: Option<PathBuf>,
    /// Seed forwarded to the remote backend.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AgentArgs {
    #[arg(long)]
    pub n_candidates: Option<usize>,
    #[arg(long)]
    pub confidence_floor: Option<f64>,
    /// Placeholder abstraction of long URLs.
    #[arg(long, value_enum)]
    pub aci: Option<Switch>,
    /// Propose, evaluate and select; off runs the first proposed plan.
    #[arg(long, value_enum)]
    pub decision: Option<Switch>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    /// Report wall time from the fixed per-character and per-call latency model.
    #[arg(long)]
    pub simulated_latency: bool,
}

#[derive(Debug, Clone)]
pub enum BackendChoice {
    Scripted(Option<PathBuf>),
    Replay(PathBuf),
    Remote(RemoteConfig),
}

/// Picks exactly one backend; any backend flag replaces the file's selection.
pub fn select_backend(
    file: &FileConfig,
    args: &BackendArgs,
) -> Result<(BackendChoice, Option<PathBuf>), CliError> {
    let flags_given = args.scripted.is_some() || args.replay.is_some() || args.remote;
    let (scripted, replay, remote) = if flags_given {
        (args.scripted.clone(), args.replay.clone(), args.remote)
    } else {
        let scripted = match &file.scripted {
            Some(ScriptChoice::Enabled(true)) => Some(None),
            Some(ScriptChoice::File(p)) => Some(Some(p.clone())),
            _ => None,
        };
        (scripted, file.replay.clone(), file.remote)
    };
    let mut chosen = Vec::new();
    if scripted.is_some() {
        chosen.push("scripted");
    }
    if replay.is_some() {
        chosen.push("replay");
    }
    if remote {
        chosen.push("remote");
    }
    if chosen.len() != 1 {
        let got = if chosen.is_empty() {
            "none".to_string()
        } else {
            chosen.join(" and ")
        };
        return Err(CliError::usage(format!(
            "exactly one backend must be selected with --scripted, --replay or --remote (got {got})"
        )));
    }
    let record = args.record.clone().or_else(|| file.record.clone());
    let choice = if let Some(script) = scripted {
        BackendChoice::Scripted(script)
    } else if let Some(path) = replay {
        BackendChoice::Replay(path)
    } else {
        let mut config =
            RemoteConfig::from_env(LLM_ENV).map_err(|e| CliError::usage(e.to_string()))?;
        config.seed = args.seed.or(file.seed);
        BackendChoice::Remote(config)
    };
    Ok((choice, record))
}

/// Agent defaults, then the file's `agent` object, then flags.
pub fn agent_config(file: &FileConfig, args: &AgentArgs) -> Result<AgentConfig, CliError> {
    let defaults = serde_json::to_value(AgentConfig::default()).expect("agent config serializes");
    let Value::Object(mut merged) = defaults else {
        unreachable!("agent config is an object")
    };
    merge_agent(&mut merged, &file.agent, "config `agent`")?;
    let mut flags = Map::new();
    if let Some(n) = args.n_candidates {
        flags.insert("n_candidates".into(), n.into());
    }
    if let Some(f) = args.confidence_floor {
        flags.insert("confidence_floor".into(), f.into());
    }
    if let Some(s) = args.aci {
        flags.insert("aci".into(), s.enabled().into());
    }
    if let Some(s) = args.decision {
        flags.insert("decision_module".into(), s.enabled().into());
    }
    if let Some(s) = args.strategy {
        let name = match s {
            StrategyArg::Tool => "tool",
            StrategyArg::Planner => "planner",
        };
        flags.insert("strategy".into(), name.into());
    }
    if let Some(n) = args.max_rounds {
        flags.insert("max_rounds_per_turn".into(), n.into());
    }
    if args.simulated_latency {
        flags.insert(
            "latency".into(),
            serde_json::to_value(LatencyModel::simulated_default()).expect("latency serializes"),
        );
    }
    merge_agent(&mut merged, &flags, "flags")?;
    parse_agent(merged)
}

/// Overlays `patch` onto `base`, rejecting keys the agent does not know.
pub fn merge_agent(
    base: &mut Map<String, Value>,
    patch: &Map<String, Value>,
    origin: &str,
) -> Result<(), CliError> {
    for (key, value) in patch {
        if !base.contains_key(key) {
            return Err(CliError::usage(format!(
                "{origin}: unknown agent setting `{key}`"
            )));
        }
        base.insert(key.clone(), value.clone());
    }
    Ok(())
}

pub fn parse_agent(value: Map<String, Value>) -> Result<AgentConfig, CliError> {
    let value = Value::Object(value);
    serde_path_to_error::deserialize(&value)
        .map_err(|e| CliError::usage(format!("agent setting `{}`: {}", e.path(), e.inner())))
}

/// Loads the suite named by `--suite` or the config file.
pub fn load_suite(flag: Option<&Path>, file: &FileConfig) -> Result<Suite, CliError> {
    let path = flag
        .map(Path::to_path_buf)
        .or_else(|| file.suite.clone())
        .ok_or_else(|| {
            CliError::usage("no suite given (use --suite or `suite` in the config file)")
        })?;
    Suite::load(&path).map_err(|e| CliError::usage(e.to_string()))
}

/// A task given as a file path, or as an id within the suite.
pub fn load_task(
    spec: &str,
    suite_flag: Option<&Path>,
    assets_flag: Option<&Path>,
    file: &FileConfig,
) -> Result<(Task, FixtureVisualBackend), CliError> {
    let path = Path::new(spec);
    let suite = match suite_flag.is_some() || file.suite.is_some() {
        true => Some(load_suite(suite_flag, file)?),
        false => None,
    };
    let task = if path.is_file() {
        Task::load(path).map_err(|e| CliError::usage(e.to_string()))?
    } else if let Some(s) = &suite {
        s.task(spec)
            .cloned()
            .ok_or_else(|| CliError::usage(format!("suite `{}` has no task `{spec}`", s.name)))?
    } else {
        return Err(CliError::usage(format!("task file {spec} not found")));
    };
    let assets_path = assets_flag
        .map(Path::to_path_buf)
        .or_else(|| file.assets.clone());
    let assets = match (assets_path, suite) {
        (Some(p), _) => {
            FixtureVisualBackend::load(&p).map_err(|e| CliError::usage(e.to_string()))?
        }
        (None, Some(s)) => s.assets,
        (None, None) => {
            FixtureVisualBackend::from_json(&Value::Object(Map::new())).expect("empty fixture")
        }
    };
    task.check_assets(&assets)
        .map_err(|e| CliError::usage(e.to_string()))?;
    Ok((task, assets))
}

/// Builds backends for episodes; one fresh chat backend per episode.
pub struct CliFactory {
    pub choice: BackendChoice,
    pub record: Option<PathBuf>,
    pub visual: Arc<dyn VisualBackend>,
}

impl CliFactory {
    pub fn new(
        choice: BackendChoice,
        record: Option<PathBuf>,
        assets: FixtureVisualBackend,
    ) -> Result<Self, CliError> {
        let visual: Arc<dyn VisualBackend> = match &choice {
            BackendChoice::Remote(_)
                if std::env::var_os(format!("{MLLM_ENV}_BASE_URL")).is_some() =>
            {
                let config =
                    RemoteConfig::from_env(MLLM_ENV).map_err(|e| CliError::usage(e.to_string()))?;
                Arc::new(RemoteVisualBackend::new(RemoteBackend::new(config)))
            }
            _ => Arc::new(assets),
        };
        Ok(Self {
            choice,
            record,
            visual,
        })
    }

    pub fn backend_for(&self, task: &Task) -> Result<Box<dyn ChatBackend>, BackendError> {
        let inner: Box<dyn ChatBackend> = match &self.choice {
            BackendChoice::Scripted(Some(path)) => Box::new(ScriptedBackend::from_path(path)?),
            BackendChoice::Scripted(None) => {
                let path = task.script_path().ok_or_else(|| {
                    BackendError::Config(format!("task `{}` names no script", task.task_id))
                })?;
                Box::new(ScriptedBackend::from_path(&path)?)
            }
            BackendChoice::Replay(path) if path.is_dir() => Box::new(ReplayBackend::replay(
                &path.join(format!("{}.json", task.task_id)),
            )?),
            BackendChoice::Replay(path) => Box::new(ReplayBackend::replay(path)?),
            BackendChoice::Remote(config) => Box::new(RemoteBackend::new(config.clone())),
        };
        Ok(match &self.record {
            Some(path) => Box::new(ReplayBackend::record(inner, path.clone())),
            None => inner,
        })
    }
}

impl BackendFactory for CliFactory {
    fn chat(
        &self,
        task: &Task,
        _config: &AblationConfig,
    ) -> Result<Box<dyn ChatBackend>, BackendError> {
        self.backend_for(task)
    }

    fn visual(&self) -> Arc<dyn VisualBackend> {
        Arc::clone(&self.visual)
    }
}
