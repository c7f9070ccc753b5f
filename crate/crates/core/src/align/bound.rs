//! Continuous similarity kernel and the Lipschitz-style error bound on the
//! aligned reward.

use serde::{Deserialize, Serialize};

use super::{align_state, AlignError, AlignmentMap, EmbeddingStore};
use crate::features::state_features;
use crate::reward::RewardModel;
use crate::world::{SceneState, Target, Trajectory};

/// Similarity between an unseen label and the seen label it was mapped to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSample {
    pub seen: String,
    pub unseen: String,
    pub k: f64,
}

/// Similarity of two alignment targets in `[0, 1]`: 1 when equal, the
/// rescaled language cosine `(1 + cos) / 2` when both are concrete, and 0
/// when exactly one is the distractor.
pub fn continuous_kernel(
    language: &EmbeddingStore,
    a: &Target,
    b: &Target,
) -> Result<f64, AlignError> {
    Ok(match (a, b) {
        _ if a == b => 1.0,
        (Target::Seen(x), Target::Seen(y)) => {
            (0.5 * (1.0 + language.similarity(x, y)?)).clamp(0.0, 1.0)
        }
        _ => 0.0,
    })
}

/// Kernel between `state` aligned by `method` and by `reference`: the
/// minimum per-object similarity of their targets (1 for an empty scene).
pub fn state_kernel(
    language: &EmbeddingStore,
    state: &SceneState,
    method: &AlignmentMap,
    reference: &AlignmentMap,
) -> Result<f64, AlignError> {
    let mut k: f64 = 1.0;
    for obj in &state.objects {
        let kk = continuous_kernel(
            language,
            method.get(&obj.label)?,
            reference.get(&obj.label)?,
        )?;
        k = k.min(kk);
    }
    Ok(k)
}

pub fn trajectory_kernels(
    language: &EmbeddingStore,
    traj: &Trajectory,
    method: &AlignmentMap,
    reference: &AlignmentMap,
) -> Result<Vec<f64>, AlignError> {
    traj.states
        .iter()
        .map(|s| state_kernel(language, s, method, reference))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub k: f64,
    /// `|R(s) − R(s′)|` for the per-state reward `θ·φ(s)`.
    pub gap: f64,
}

fn state_reward(model: &RewardModel, state: &SceneState) -> f64 {
    model.score_features(&state_features(state, &model.specs).0)
}

/// Per-state reward gap between the two alignments, with its kernel value.
pub fn calibration_samples(
    model: &RewardModel,
    language: &EmbeddingStore,
    states: &[SceneState],
    method: &AlignmentMap,
    reference: &AlignmentMap,
) -> Result<Vec<CalibrationSample>, AlignError> {
    states
        .iter()
        .map(|s| {
            let k = state_kernel(language, s, method, reference)?;
            let a = state_reward(model, &align_state(s, method)?);
            let b = state_reward(model, &align_state(s, reference)?);
            Ok(CalibrationSample {
                k,
                gap: (a - b).abs(),
            })
        })
        .collect()
}

/// One evaluation trajectory: its aligned reward, the reference reward, and
/// the per-state kernel values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEvaluation {
    pub aligned: f64,
    pub reference: f64,
    pub ks: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub l_hat: f64,
    pub n_calibration: usize,
    pub n_evaluation: usize,
    pub violations: usize,
}

/// Slack added to every bound comparison.
pub const BOUND_SLACK: f64 = 1e-9;

/// Estimates `L̂ = max gap / (1 − k)` over calibration samples with `k < 1`
/// and counts evaluation trajectories whose reward error exceeds
/// `L̂ · Σ_t (1 − k_t)`.
pub fn check_bound(
    calibration: &[CalibrationSample],
    evaluation: &[BoundEvaluation],
) -> Result<BoundReport, AlignError> {
    if calibration.is_empty() {
        return Err(AlignError::EmptyCalibration);
    }
    if calibration
        .iter()
        .any(|c| !(0.0..=1.0).contains(&c.k) || !c.gap.is_finite())
        || evaluation
            .iter()
            .any(|e| e.ks.iter().any(|k| !(0.0..=1.0).contains(k)))
    {
        return Err(AlignError::InvalidInput(
            "kernel values must lie in [0, 1]".into(),
        ));
    }
    let informative: Vec<&CalibrationSample> = calibration.iter().filter(|c| c.k < 1.0).collect();
    if informative.is_empty() {
        return Err(AlignError::NoInformativeCalibration);
    }
    let l_hat = informative
        .iter()
        .map(|c| c.gap / (1.0 - c.k))
        .fold(0.0, f64::max);
    let violations = evaluation
        .iter()
        .filter(|e| {
            let budget: f64 = e.ks.iter().map(|k| 1.0 - k).sum();
            (e.aligned - e.reference).abs() > l_hat * budget + BOUND_SLACK
        })
        .count();
    Ok(BoundReport {
        l_hat,
        n_calibration: calibration.len(),
        n_evaluation: evaluation.len(),
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_case_is_not_a_violation() {
        let cal = [CalibrationSample { k: 0.5, gap: 1.0 }];
        let ev = [BoundEvaluation {
            aligned: 1.0,
            reference: 0.0,
            ks: vec![0.5],
        }];
        let r = check_bound(&cal, &ev).unwrap();
        assert_eq!(r.l_hat, 2.0);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn full_similarity_forces_zero_error() {
        let cal = [CalibrationSample { k: 0.2, gap: 0.3 }];
        let exact = BoundEvaluation {
            aligned: 0.7,
            reference: 0.7,
            ks: vec![1.0; 4],
        };
        let off = BoundEvaluation {
            aligned: 0.7,
            reference: 0.6,
            ks: vec![1.0; 4],
        };
        assert_eq!(check_bound(&cal, &[exact]).unwrap().violations, 0);
        assert_eq!(check_bound(&cal, &[off]).unwrap().violations, 1);
    }

    #[test]
    fn degenerate_calibration_is_rejected() {
        assert!(matches!(
            check_bound(&[], &[]),
            Err(AlignError::EmptyCalibration)
        ));
        assert!(matches!(
            check_bound(&[CalibrationSample { k: 1.0, gap: 0.0 }], &[]),
            Err(AlignError::NoInformativeCalibration)
        ));
    }
}
