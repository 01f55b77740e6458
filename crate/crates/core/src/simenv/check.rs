use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::task::{FactMatch, SuccessCriteria};
use super::world::World;
use crate::memory::{Role, WorkingMemory};

static NUMBER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("valid regex"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateOutcome {
    pub predicate: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Conjunction of every state assertion and response fact. Facts are
/// matched against agent replies only.
pub fn check_success(
    final_world: &World,
    transcript: &WorkingMemory,
    criteria: &SuccessCriteria,
) -> (bool, Vec<PredicateOutcome>) {
    let mut report = Vec::new();
    for a in &criteria.state_assertions {
        let actual = final_world.get_path(&a.path);
        let passed = actual.as_ref() == Some(&a.expected);
        report.push(PredicateOutcome {
            predicate: format!("{} == {}", a.path, a.expected),
            passed,
            detail: (!passed).then(|| match actual {
                Some(v) => format!("actual {v}"),
                None => "path not found".to_string(),
            }),
        });
    }

    let replies: Vec<String> = transcript
        .turns()
        .iter()
        .filter(|m| m.role == Role::Agent)
        .map(|m| m.body())
        .collect();
    for fact in &criteria.response_facts {
        let (label, found) = match &fact.matcher {
            FactMatch::Substring(s) => (
                format!("substring {s:?}"),
                replies.iter().any(|r| r.contains(s.as_str())),
            ),
            FactMatch::Numeric { value, tolerance } => (
                format!("number {value} ± {tolerance}"),
                replies.iter().any(|r| {
                    NUMBER_RE
                        .find_iter(r)
                        .filter_map(|m| m.as_str().parse::<f64>().ok())
                        .any(|n| (n - value).abs() <= *tolerance)
                }),
            ),
        };
        let passed = found == fact.must_appear;
        report.push(PredicateOutcome {
            predicate: format!(
                "{} {}",
                if fact.must_appear {
                    "appears:"
                } else {
                    "absent:"
                },
                label
            ),
            passed,
            detail: None,
        });
    }
    (report.iter().all(|p| p.passed), report)
}
