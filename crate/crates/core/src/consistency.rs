//! Pose-mask consistency and the gate that keeps or rejects a refined mask.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BinaryMask, GeometryError};

#[derive(Debug, Error, PartialEq)]
pub enum ConsistencyError {
    #[error("no positive keypoints, consistency undefined")]
    NoPositives,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub pmc: f64,
    pub positives_inside: usize,
    pub positives_total: usize,
    pub negatives_outside: usize,
    pub negatives_total: usize,
}

/// Fraction of positives inside the mask plus fraction of negatives outside
/// it. With no negatives the second term is 1.
pub fn pose_mask_consistency(
    mask: &BinaryMask,
    positives: &[(f64, f64)],
    negatives: &[(f64, f64)],
) -> Result<ConsistencyReport, ConsistencyError> {
    if positives.is_empty() {
        return Err(ConsistencyError::NoPositives);
    }
    let positives_inside = positives
        .iter()
        .filter(|&&(x, y)| mask.contains_point(x, y))
        .count();
    let negatives_outside = negatives
        .iter()
        .filter(|&&(x, y)| !mask.contains_point(x, y))
        .count();
    let neg_term = if negatives.is_empty() {
        1.0
    } else {
        negatives_outside as f64 / negatives.len() as f64
    };
    Ok(ConsistencyReport {
        pmc: positives_inside as f64 / positives.len() as f64 + neg_term,
        positives_inside,
        positives_total: positives.len(),
        negatives_outside,
        negatives_total: negatives.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    KeptRefined,
    KeptOriginal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    pub mask: BinaryMask,
    pub decision: GateDecision,
    pub original: ConsistencyReport,
    pub refined: ConsistencyReport,
}

/// Keeps `refined` unless its consistency is strictly lower than `original`'s.
pub fn mask_gate(
    original: &BinaryMask,
    refined: &BinaryMask,
    positives: &[(f64, f64)],
    negatives: &[(f64, f64)],
) -> Result<GateOutcome, ConsistencyError> {
    original.same_shape(refined)?;
    let before = pose_mask_consistency(original, positives, negatives)?;
    let after = pose_mask_consistency(refined, positives, negatives)?;
    let (mask, decision) = if after.pmc >= before.pmc {
        (refined.clone(), GateDecision::KeptRefined)
    } else {
        (original.clone(), GateDecision::KeptOriginal)
    };
    Ok(GateOutcome {
        mask,
        decision,
        original: before,
        refined: after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn left_half() -> BinaryMask {
        BinaryMask::from_fn(20, 20, |x, _| x < 10)
    }

    #[test]
    fn maximal_case() {
        let pos = [(1.0, 1.0), (2.0, 5.0), (8.0, 8.0), (9.0, 19.0)];
        let neg = [(15.0, 1.0), (12.0, 12.0)];
        let r = pose_mask_consistency(&left_half(), &pos, &neg).unwrap();
        assert_eq!(r.pmc, 2.0);
    }

    #[test]
    fn partial_case() {
        let pos = [(1.0, 1.0), (2.0, 5.0), (8.0, 8.0), (15.0, 19.0)];
        let neg = [(15.0, 1.0), (2.0, 12.0)];
        let r = pose_mask_consistency(&left_half(), &pos, &neg).unwrap();
        assert_eq!(r.pmc, 1.25);
        assert_eq!((r.positives_inside, r.negatives_outside), (3, 1));
    }

    #[test]
    fn vacuous_negatives() {
        let r = pose_mask_consistency(&left_half(), &[(1.0, 1.0)], &[]).unwrap();
        assert_eq!(r.pmc, 2.0);
        assert_eq!(
            pose_mask_consistency(&left_half(), &[], &[(1.0, 1.0)]),
            Err(ConsistencyError::NoPositives)
        );
    }

    #[test]
    fn gate_prefers_refined_on_tie() {
        let m = left_half();
        let g = mask_gate(&m, &m, &[(1.0, 1.0)], &[]).unwrap();
        assert_eq!(g.decision, GateDecision::KeptRefined);
    }

    #[test]
    fn gate_rejects_lost_positive() {
        let original = left_half();
        let mut refined = original.clone();
        refined.set(3, 3, false);
        let pos = [(3.0, 3.0), (5.0, 5.0)];
        let g = mask_gate(&original, &refined, &pos, &[(15.0, 15.0)]).unwrap();
        assert_eq!(g.decision, GateDecision::KeptOriginal);
        assert_eq!(g.mask, original);
    }

    #[test]
    fn gate_shape_mismatch() {
        let a = BinaryMask::empty(3, 3);
        let b = BinaryMask::empty(4, 3);
        assert!(matches!(
            mask_gate(&a, &b, &[(0.0, 0.0)], &[]),
            Err(ConsistencyError::Geometry(_))
        ));
    }
}
