//! Metrics over recorded trials and the ablation runner.

mod ablation;
mod metrics;

pub use ablation::{
    pass_value, run_ablation, AblationConfig, AblationError, AblationReport, AblationRun,
    BackendFactory, MeanTimes, ReportRow, ScriptedFactory,
};
pub use metrics::{
    ai_contribution_ratio, compare_scenarios, format_decimal, mean, mean_completion_time,
    pass_hat_k, pass_hat_k_task, percent, read_annotations, relative_improvement, time_reduction,
    to_f64, ContributionInputs, MetricError, Scenario, ScenarioComparison, TaskTrials, TrialSet,
};
