use std::collections::BTreeMap;
use std::io::Read;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simenv::{Modality, TrialRecord};
use crate::{CountRatio, Exact, Millis, Real};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("malformed rows at line(s) {}: {message}", lines.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", "))]
    Malformed { lines: Vec<usize>, message: String },
    #[error("cannot read input: {0}")]
    Io(String),
}

/// Outcomes recorded for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTrials {
    pub modality: Modality,
    pub outcomes: Vec<bool>,
    pub durations_ms: Vec<Millis>,
}

impl TaskTrials {
    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    pub fn c(&self) -> usize {
        self.outcomes.iter().filter(|s| **s).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    pub tasks: BTreeMap<String, TaskTrials>,
}

impl TrialSet {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a TrialRecord>) -> Self {
        let mut set = TrialSet::default();
        let mut sorted: Vec<&TrialRecord> = records.into_iter().collect();
        sorted.sort_by(|a, b| (&a.task_id, a.trial_index).cmp(&(&b.task_id, b.trial_index)));
        for r in sorted {
            set.push(&r.task_id, r.modality, r.success, r.wall_time_ms);
        }
        set
    }

    pub fn push(&mut self, task_id: &str, modality: Modality, success: bool, duration_ms: Millis) {
        let entry = self
            .tasks
            .entry(task_id.to_string())
            .or_insert_with(|| TaskTrials {
                modality,
                outcomes: Vec::new(),
                durations_ms: Vec::new(),
            });
        entry.outcomes.push(success);
        entry.durations_ms.push(duration_ms);
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn min_trials(&self) -> usize {
        self.tasks.values().map(TaskTrials::n).min().unwrap_or(0)
    }

    /// Fails unless every task has the same number of trials.
    pub fn require_equal_trials(&self) -> Result<usize, MetricError> {
        let mut counts = self.tasks.iter().map(|(id, t)| (id, t.n()));
        let Some((_, n)) = counts.next() else {
            return Err(MetricError::Usage("no trials recorded".into()));
        };
        match counts.find(|(_, m)| *m != n) {
            Some((id, m)) => Err(MetricError::Usage(format!(
                "unequal trial counts: task `{id}` has {m}, expected {n}"
            ))),
            None => Ok(n),
        }
    }
}

fn binomial(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    (0..k).fold(BigInt::one(), |acc, i| {
        acc * BigInt::from(n - i) / BigInt::from(i + 1)
    })
}

/// Chance that `k` trials drawn without replacement from `n` with `c`
/// successes all succeed: `C(c,k) / C(n,k)`.
pub fn pass_hat_k_task(n: usize, c: usize, k: usize) -> Result<Exact, MetricError> {
    if k == 0 {
        return Err(MetricError::Usage("k must be at least 1".into()));
    }
    if k > n {
        return Err(MetricError::Usage(format!(
            "k = {k} exceeds the {n} recorded trials"
        )));
    }
    if c > n {
        return Err(MetricError::Usage(format!(
            "{c} successes out of {n} trials"
        )));
    }
    Ok(BigRational::new(binomial(c, k), binomial(n, k)))
}

/// Uniform mean of per-task pass^k.
pub fn pass_hat_k(set: &TrialSet, k: usize) -> Result<Exact, MetricError> {
    if set.is_empty() {
        return Err(MetricError::Usage("no trials recorded".into()));
    }
    let mut total = BigRational::zero();
    for (id, t) in &set.tasks {
        total += pass_hat_k_task(t.n(), t.c(), k).map_err(|e| match e {
            MetricError::Usage(m) => MetricError::Usage(format!("task `{id}`: {m}")),
            other => other,
        })?;
    }
    Ok(total / BigRational::from_integer(BigInt::from(set.tasks.len())))
}

/// Decimal rendering rounded half away from zero.
pub fn format_decimal(value: &Exact, places: usize) -> String {
    let scale = BigInt::from(10u32).pow(places as u32);
    let scaled = (value * BigRational::from_integer(scale.clone()))
        .round()
        .to_integer();
    let negative = scaled.is_negative();
    let digits = scaled.abs();
    let int = &digits / &scale;
    let frac = &digits % &scale;
    let sign = if negative { "-" } else { "" };
    if places == 0 {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac:0>places$}")
    }
}

pub fn to_f64(value: &Exact) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

/// Message counts behind the contribution ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContributionInputs {
    /// AI messages judged appropriate.
    pub v_ai: u64,
    pub t_ai: u64,
    /// Customer-representative messages.
    pub t_cr: u64,
}

/// `V_AI / (T_AI + T_CR)`.
pub fn ai_contribution_ratio(inputs: &ContributionInputs) -> Result<CountRatio, MetricError> {
    if inputs.v_ai > inputs.t_ai {
        return Err(MetricError::Usage(format!(
            "{} valid AI messages exceed the {} AI messages",
            inputs.v_ai, inputs.t_ai
        )));
    }
    let total = inputs.t_ai + inputs.t_cr;
    if total == 0 {
        return Err(MetricError::Usage("no messages: ratio undefined".into()));
    }
    Ok(Ratio::new(inputs.v_ai, total))
}

/// Counts an annotation CSV (`session_id,message_id,source,judged_valid`).
/// Every malformed row is reported by its line number.
pub fn read_annotations(input: impl Read) -> Result<ContributionInputs, MetricError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| MetricError::Io(e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MetricError::Malformed {
                lines: vec![1],
                message: format!("missing column `{name}`"),
            })
    };
    let (source_col, valid_col) = (column("source")?, column("judged_valid")?);
    column("session_id")?;
    column("message_id")?;

    let mut counts = ContributionInputs::default();
    let mut bad = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                bad.push(e.position().map_or(0, |p| p.line() as usize));
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            bad.push(line);
            continue;
        }
        let valid = match &record[valid_col] {
            "1" => true,
            "0" => false,
            _ => {
                bad.push(line);
                continue;
            }
        };
        match &record[source_col] {
            "ai" => {
                counts.t_ai += 1;
                counts.v_ai += u64::from(valid);
            }
            "cr" => counts.t_cr += 1,
            _ => bad.push(line),
        }
    }
    if !bad.is_empty() {
        return Err(MetricError::Malformed {
            lines: bad,
            message: "expected source in {ai, cr} and judged_valid in {0, 1}".into(),
        });
    }
    Ok(counts)
}

/// `(treatment - baseline) / baseline`.
pub fn relative_improvement<T: Real>(baseline: T, treatment: T) -> Result<T, MetricError> {
    if baseline.is_nan() || baseline <= T::zero() {
        return Err(MetricError::Usage("baseline must be positive".into()));
    }
    Ok((treatment - baseline) / baseline)
}

/// `(baseline - treatment) / baseline`.
pub fn time_reduction<T: Real>(baseline: T, treatment: T) -> Result<T, MetricError> {
    relative_improvement(baseline, treatment).map(|r| -r)
}

pub fn mean<T: Real>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(T::zero(), |acc, v| acc + *v);
    Some(sum / T::from_usize(values.len())?)
}

/// Mean wall time over trials, optionally restricted to one modality.
pub fn mean_completion_time(
    set: &TrialSet,
    modality: Option<Modality>,
) -> Result<Millis, MetricError> {
    let durations: Vec<Millis> = set
        .tasks
        .values()
        .filter(|t| modality.is_none_or(|m| t.modality == m))
        .flat_map(|t| t.durations_ms.iter().copied())
        .collect();
    mean(&durations).ok_or_else(|| {
        MetricError::Usage(match modality {
            Some(m) => format!("no {m} trials to average"),
            None => "no trials to average".into(),
        })
    })
}

/// Baseline and treatment counts for one deployment scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub baseline: ContributionInputs,
    pub treatment: ContributionInputs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioComparison {
    pub name: String,
    pub baseline_ratio: f64,
    pub treatment_ratio: f64,
    pub improvement: f64,
}

/// Per-scenario contribution ratios and improvements, plus their unweighted mean.
pub fn compare_scenarios(
    scenarios: &[Scenario],
) -> Result<(Vec<ScenarioComparison>, f64), MetricError> {
    if scenarios.is_empty() {
        return Err(MetricError::Usage("no scenarios".into()));
    }
    let mut rows = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        let base = ai_contribution_ratio(&s.baseline)?;
        let treat = ai_contribution_ratio(&s.treatment)?;
        let as_f64 = |r: CountRatio| *r.numer() as f64 / *r.denom() as f64;
        let improvement = relative_improvement(as_f64(base), as_f64(treat))
            .map_err(|e| MetricError::Usage(format!("scenario `{}`: {e}", s.name)))?;
        rows.push(ScenarioComparison {
            name: s.name.clone(),
            baseline_ratio: as_f64(base),
            treatment_ratio: as_f64(treat),
            improvement,
        });
    }
    let improvements: Vec<f64> = rows.iter().map(|r| r.improvement).collect();
    let avg = mean(&improvements).expect("non-empty");
    Ok((rows, avg))
}

pub fn percent(value: f64) -> String {
    format!("{:.2}%", value * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact(n: i64, d: i64) -> Exact {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn pass_hat_k_examples() {
        assert_eq!(pass_hat_k_task(5, 3, 2).unwrap(), exact(3, 10));
        assert_eq!(pass_hat_k_task(5, 1, 2).unwrap(), exact(0, 1));
        let mut set = TrialSet::default();
        for i in 0..5 {
            set.push("a", Modality::Unimodal, true, i as f64);
            set.push("b", Modality::Unimodal, false, i as f64);
        }
        assert_eq!(pass_hat_k(&set, 5).unwrap(), exact(1, 2));
        assert!(matches!(pass_hat_k(&set, 6), Err(MetricError::Usage(_))));
        assert!(matches!(pass_hat_k(&set, 0), Err(MetricError::Usage(_))));
    }

    #[test]
    fn decimal_formatting_rounds_half_up() {
        assert_eq!(format_decimal(&exact(3, 10), 4), "0.3000");
        assert_eq!(format_decimal(&exact(2, 3), 4), "0.6667");
        assert_eq!(format_decimal(&exact(1, 20000), 4), "0.0001");
        assert_eq!(format_decimal(&exact(1, 1), 4), "1.0000");
        assert_eq!(format_decimal(&exact(-1, 3), 2), "-0.33");
    }

    #[test]
    fn contribution_ratio_examples() {
        let r = |v, a, c| {
            ai_contribution_ratio(&ContributionInputs {
                v_ai: v,
                t_ai: a,
                t_cr: c,
            })
        };
        assert_eq!(r(3, 4, 6).unwrap(), Ratio::new(3, 10));
        assert_eq!(r(4, 4, 0).unwrap(), Ratio::new(1, 1));
        assert_eq!(r(0, 4, 6).unwrap(), Ratio::new(0, 1));
        assert!(r(0, 0, 0).is_err());
        assert!(r(5, 4, 0).is_err());
    }

    #[test]
    fn annotations_count_and_report_lines() {
        let csv = "session_id,message_id,source,judged_valid\n\
                   s1,m1,ai,1\ns1,m2,ai,1\ns1,m3,ai,1\ns1,m4,ai,0\n\
                   s2,m1,cr,0\ns2,m2,cr,1\ns2,m3,cr,0\ns2,m4,cr,0\ns2,m5,cr,0\ns2,m6,cr,0\n";
        let counts = read_annotations(csv.as_bytes()).unwrap();
        assert_eq!(ai_contribution_ratio(&counts).unwrap(), Ratio::new(3, 10));

        let bad =
            "session_id,message_id,source,judged_valid\ns1,m1,ai,1\ns1,m2,bot,1\ns1,m3,ai,yes\n";
        match read_annotations(bad.as_bytes()) {
            Err(MetricError::Malformed { lines, .. }) => assert_eq!(lines, vec![3, 4]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn improvements_and_means() {
        let r: f64 = relative_improvement(31.39, 89.82).unwrap();
        assert_eq!(percent(r), "186.14%");
        assert!(relative_improvement(0.0, 1.0).is_err());
        let t: f64 = time_reduction(11.59, 5.93).unwrap();
        assert_eq!(percent(t), "48.84%");
        let single: f32 = relative_improvement(2.0f32, 3.0f32).unwrap();
        assert_eq!(single, 0.5);

        let mut set = TrialSet::default();
        for d in [10.0, 20.0, 30.0] {
            set.push("u", Modality::Unimodal, true, d);
        }
        assert_eq!(mean_completion_time(&set, None).unwrap(), 20.0);
        assert!(mean_completion_time(&set, Some(Modality::Multimodal)).is_err());
    }
}
