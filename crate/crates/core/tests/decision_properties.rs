use proptest::prelude::*;
use shopdesk::decision::{label_for, select, PlanEvaluation};

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

/// Oracle: first index holding the maximum confidence.
fn first_argmax(confidences: &[f64]) -> usize {
    let mut best = 0;
    for (i, &c) in confidences.iter().enumerate() {
        if c > confidences[best] {
            best = i;
        }
    }
    best
}

#[test]
fn repeated_selection_is_stable() {
    let e = evals(&[0.2, 0.45, 0.35]);
    let first = select(&e, 0.0).unwrap();
    for _ in 0..1000 {
        assert_eq!(select(&e, 0.0).unwrap(), first);
    }
    assert_eq!(first.selected, Some(1));
}

#[test]
fn ties_go_to_smallest_id() {
    assert_eq!(
        select(&evals(&[0.1, 0.45, 0.45]), 0.0).unwrap().selected,
        Some(1)
    );
    assert_eq!(select(&evals(&[0.5, 0.5]), 0.0).unwrap().selected, Some(0));
}

#[test]
fn floor_rejects_weak_best() {
    let d = select(&evals(&[0.3, 0.2]), 0.5).unwrap();
    assert_eq!(d.selected, None);
    assert!(d.rejected_reason.is_some());
    assert!(select(&[], 0.0).is_err());
}

proptest! {
    #[test]
    fn selection_matches_oracle_under_permutation(
        raw in proptest::collection::vec(0u8..5, 1..6),
        shuffle in any::<proptest::sample::Index>(),
    ) {
        // Coarse values force frequent ties.
        let confidences: Vec<f64> = raw.iter().map(|&v| f64::from(v) / 4.0).collect();
        let e = evals(&confidences);
        let expected = first_argmax(&confidences);
        prop_assert_eq!(select(&e, 0.0).unwrap().selected, Some(expected));

        let mut permuted = e.clone();
        let rot = shuffle.index(permuted.len());
        permuted.rotate_left(rot);
        permuted.reverse();
        prop_assert_eq!(select(&permuted, 0.0).unwrap().selected, Some(expected));
    }
}
