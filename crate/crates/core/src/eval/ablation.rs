use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{format_decimal, mean_completion_time, pass_hat_k, MetricError, TrialSet};
use crate::agent::AgentConfig;
use crate::llm::{BackendError, ChatBackend, ScriptedBackend};
use crate::mllm::VisualBackend;
use crate::simenv::{run_episode, EpisodeResult, EpisodeUsage, Modality, Suite, Task};
use crate::Millis;

#[derive(Debug, Error)]
pub enum AblationError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("config `{config}`, task `{task}`: {source}")]
    Backend {
        config: String,
        task: String,
        #[source]
        source: BackendError,
    },
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("cannot write results: {0}")]
    Io(#[from] std::io::Error),
}

/// One row of an ablation matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub name: String,
    #[serde(default)]
    pub agent: AgentConfig,
    pub n_trials: usize,
    pub k_values: Vec<usize>,
}

impl AblationConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.n_trials == 0 {
            return Err(MetricError::Usage(format!(
                "config `{}`: n_trials must be at least 1",
                self.name
            )));
        }
        if self.agent.n_candidates == 0 {
            return Err(MetricError::Usage(format!(
                "config `{}`: n_candidates must be at least 1",
                self.name
            )));
        }
        match self
            .k_values
            .iter()
            .find(|k| **k == 0 || **k > self.n_trials)
        {
            Some(k) => Err(MetricError::Usage(format!(
                "config `{}`: k = {k} must lie in 1..={}",
                self.name, self.n_trials
            ))),
            None => Ok(()),
        }
    }
}

/// Creates a fresh chat backend per episode.
pub trait BackendFactory: Sync {
    fn chat(
        &self,
        task: &Task,
        config: &AblationConfig,
    ) -> Result<Box<dyn ChatBackend>, BackendError>;

    fn visual(&self) -> Arc<dyn VisualBackend>;
}

/// Scripted backend per task (the task's `script` file) over fixture images.
pub struct ScriptedFactory {
    pub visual: Arc<dyn VisualBackend>,
}

impl ScriptedFactory {
    pub fn for_suite(suite: &Suite) -> Self {
        Self {
            visual: Arc::new(suite.assets.clone()),
        }
    }
}

impl BackendFactory for ScriptedFactory {
    fn chat(
        &self,
        task: &Task,
        _config: &AblationConfig,
    ) -> Result<Box<dyn ChatBackend>, BackendError> {
        let path = task.script_path().ok_or_else(|| {
            BackendError::Config(format!("task `{}` names no script", task.task_id))
        })?;
        Ok(Box::new(ScriptedBackend::from_path(&path)?))
    }

    fn visual(&self) -> Arc<dyn VisualBackend> {
        Arc::clone(&self.visual)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanTimes {
    pub all: Option<Millis>,
    pub unimodal: Option<Millis>,
    pub multimodal: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub config: String,
    pub n_trials: usize,
    pub episodes: usize,
    pub failed_episodes: usize,
    /// Episodes that ended with a backend error.
    pub errored_episodes: usize,
    /// pass^k rendered to four decimal places, keyed by k.
    pub pass_hat_k: BTreeMap<usize, String>,
    pub mean_time_ms: MeanTimes,
    pub usage: EpisodeUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub suite: String,
    pub rows: Vec<ReportRow>,
}

impl AblationReport {
    pub fn has_errors(&self) -> bool {
        self.rows.iter().any(|r| r.errored_episodes > 0)
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let ks: Vec<usize> = {
            let mut ks: Vec<usize> = self
                .rows
                .iter()
                .flat_map(|r| r.pass_hat_k.keys().copied())
                .collect();
            ks.sort_unstable();
            ks.dedup();
            ks
        };
        let mut header = vec!["config".to_string()];
        header.extend(ks.iter().map(|k| format!("pass^{k}")));
        header.extend(
            [
                "t_uni_ms",
                "t_multi_ms",
                "prompt_chars",
                "calls",
                "describes",
                "errors",
            ]
            .map(String::from),
        );
        let fmt_time = |t: Option<Millis>| t.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
        let mut rows = vec![header];
        for r in &self.rows {
            let mut row = vec![r.config.clone()];
            row.extend(
                ks.iter()
                    .map(|k| r.pass_hat_k.get(k).cloned().unwrap_or_else(|| "-".into())),
            );
            row.push(fmt_time(r.mean_time_ms.unimodal));
            row.push(fmt_time(r.mean_time_ms.multimodal));
            row.push(r.usage.prompt_chars.to_string());
            row.push(r.usage.backend_calls.to_string());
            row.push(r.usage.describe_calls.to_string());
            row.push(r.errored_episodes.to_string());
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, cell)| {
                    if i == 0 {
                        format!("{cell:<w$}", w = widths[i])
                    } else {
                        format!("{cell:>w$}", w = widths[i])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

#[derive(Debug)]
pub struct AblationRun {
    pub report: AblationReport,
    /// Every episode, grouped by config in input order, then task, then trial.
    pub episodes: Vec<(String, EpisodeResult)>,
}

impl AblationRun {
    /// Writes `<dir>/<config>/<task>/trial-NN.*` and `<dir>/report.json`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        for (config, ep) in &self.episodes {
            ep.write_to(&dir.join(config).join(&ep.record.task_id))?;
        }
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(&self.report).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("report.json"), json + "\n")?;
        std::fs::write(dir.join("report.txt"), self.report.to_text())
    }
}

/// Runs every config over every task `n_trials` times on a pool of
/// `workers` threads, then reduces the results into one report.
pub fn run_ablation(
    suite: &Suite,
    configs: &[AblationConfig],
    factory: &dyn BackendFactory,
    workers: usize,
) -> Result<AblationRun, AblationError> {
    if configs.is_empty() {
        return Err(MetricError::Usage("no configurations to run".into()).into());
    }
    for c in configs {
        c.validate()?;
    }
    if suite.tasks.is_empty() {
        return Err(MetricError::Usage(format!("suite `{}` has no tasks", suite.name)).into());
    }

    let jobs: Vec<(usize, usize, usize)> = configs
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| {
            (0..suite.tasks.len())
                .flat_map(move |ti| (0..c.n_trials).map(move |trial| (ci, ti, trial)))
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| AblationError::Pool(e.to_string()))?;
    let results: Vec<Result<EpisodeResult, AblationError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(ci, ti, trial)| {
                let config = &configs[ci];
                let task = &suite.tasks[ti];
                let mut backend =
                    factory
                        .chat(task, config)
                        .map_err(|source| AblationError::Backend {
                            config: config.name.clone(),
                            task: task.task_id.clone(),
                            source,
                        })?;
                let mut result = run_episode(
                    task,
                    trial,
                    &config.agent,
                    backend.as_mut(),
                    factory.visual(),
                );
                result.record.config = Some(config.name.clone());
                Ok(result)
            })
            .collect()
    });

    let mut episodes = Vec::with_capacity(results.len());
    for (r, &(ci, _, _)) in results.into_iter().zip(&jobs) {
        episodes.push((configs[ci].name.clone(), r?));
    }

    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        let mine: Vec<&EpisodeResult> = episodes
            .iter()
            .filter(|(name, _)| name == &config.name)
            .map(|(_, e)| e)
            .collect();
        let set = TrialSet::from_records(mine.iter().map(|e| &e.record));
        let mut pass = BTreeMap::new();
        for &k in &config.k_values {
            pass.insert(k, format_decimal(&pass_hat_k(&set, k)?, 4));
        }
        let mut usage = EpisodeUsage::default();
        for e in &mine {
            usage.prompt_chars += e.record.usage.prompt_chars;
            usage.completion_chars += e.record.usage.completion_chars;
            usage.backend_calls += e.record.usage.backend_calls;
            usage.describe_calls += e.record.usage.describe_calls;
        }
        rows.push(ReportRow {
            config: config.name.clone(),
            n_trials: config.n_trials,
            episodes: mine.len(),
            failed_episodes: mine.iter().filter(|e| !e.record.success).count(),
            errored_episodes: mine.iter().filter(|e| e.record.error.is_some()).count(),
            pass_hat_k: pass,
            mean_time_ms: MeanTimes {
                all: mean_completion_time(&set, None).ok(),
                unimodal: mean_completion_time(&set, Some(Modality::Unimodal)).ok(),
                multimodal: mean_completion_time(&set, Some(Modality::Multimodal)).ok(),
            },
            usage,
        });
    }
    Ok(AblationRun {
        report: AblationReport {
            suite: suite.name.clone(),
            rows,
        },
        episodes,
    })
}

/// pass^k as a float, for callers that compare rows numerically.
pub fn pass_value(row: &ReportRow, k: usize) -> Option<f64> {
    row.pass_hat_k.get(&k).and_then(|s| s.parse().ok())
}
