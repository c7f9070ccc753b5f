//! Pairwise win rate, alignment confusion metrics, and the experiment
//! harness that produces reports.

mod experiment;
mod report;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{AlignError, AlignmentMap};
use crate::features::FeatureError;
use crate::reward::RewardError;
use crate::world::{TaskSpec, Trajectory, WorldError};

pub use experiment::{
    bound_experiment, candidate_selection, ground_truth_model, run_experiment, selection_sets,
    BoltzmannTable, BoundExperiment, ExperimentConfig, MapScope, MethodSource, MethodSpec,
    SelectionConfig, SelectionSet,
};
pub use report::{EvalOutput, EvalReport, MethodResult, PairRecord, SubsetRow, WinRateSummary};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no trajectory pairs to score")]
    EmptyPairs,
    #[error("tie_eps must be a finite non-negative number")]
    InvalidTieEps,
    #[error("label `{0}` has no relevance entry")]
    MissingRelevance(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite score")]
    NonFiniteScore,
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Features(#[from] FeatureError),
}

/// Which trajectory of a pair is preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preference {
    A,
    B,
    Tie,
}

impl Preference {
    /// Compares two scores, calling a tie when they differ by at most `eps`.
    pub fn from_scores(a: f64, b: f64, eps: f64) -> Self {
        if (a - b).abs() <= eps {
            Preference::Tie
        } else if a > b {
            Preference::A
        } else {
            Preference::B
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            Preference::A => Preference::B,
            Preference::B => Preference::A,
            Preference::Tie => Preference::Tie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPair {
    pub xi_a: Trajectory,
    pub xi_b: Trajectory,
    pub gt_preferred: Preference,
}

/// +1 when the prediction matches, +0.5 when exactly one side is a tie.
pub fn pair_score(predicted: Preference, truth: Preference) -> f64 {
    if predicted == truth {
        1.0
    } else if predicted == Preference::Tie || truth == Preference::Tie {
        0.5
    } else {
        0.0
    }
}

/// Sample mean and standard error (sample standard deviation over √n).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    crate::intent::mean_and_stderr(xs)
}

/// Win rate of precomputed `(score_a, score_b)` pairs against ground truth.
pub fn win_rate_from_scores(
    scores: &[(f64, f64)],
    truth: &[Preference],
    tie_eps: f64,
) -> Result<(f64, f64), EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyPairs);
    }
    if !(tie_eps >= 0.0 && tie_eps.is_finite()) {
        return Err(EvalError::InvalidTieEps);
    }
    if scores.len() != truth.len() {
        return Err(EvalError::Config(
            "scores and truths differ in length".into(),
        ));
    }
    let per_pair: Vec<f64> = scores
        .iter()
        .zip(truth)
        .map(|(&(a, b), &t)| pair_score(Preference::from_scores(a, b, tie_eps), t))
        .collect();
    Ok(mean_stderr(&per_pair))
}

/// Fraction of pairs on which `scorer` agrees with the ground truth.
pub fn win_rate<F>(
    mut scorer: F,
    pairs: &[TrajectoryPair],
    tie_eps: f64,
) -> Result<(f64, f64), EvalError>
where
    F: FnMut(&Trajectory) -> Result<f64, EvalError>,
{
    let mut scores = Vec::with_capacity(pairs.len());
    for p in pairs {
        let a = scorer(&p.xi_a)?;
        let b = scorer(&p.xi_b)?;
        if !a.is_finite() || !b.is_finite() {
            return Err(EvalError::NonFiniteScore);
        }
        scores.push((a, b));
    }
    let truth: Vec<Preference> = pairs.iter().map(|p| p.gt_preferred).collect();
    win_rate_from_scores(&scores, &truth, tie_eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub f1: f64,
}

impl Confusion {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let f1 = if tp + fp + fn_ == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        Confusion {
            tp,
            fp,
            fn_,
            tn,
            f1,
        }
    }
}

/// Confusion counts of `map` over `subset` against the task's relevance
/// labels. A relevant label mapped to the wrong seen label is both a false
/// positive and a false negative.
pub fn alignment_confusion<'a>(
    map: &AlignmentMap,
    task: &TaskSpec,
    subset: impl IntoIterator<Item = &'a String>,
) -> Result<Confusion, EvalError> {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    let unique: BTreeSet<&String> = subset.into_iter().collect();
    for label in unique {
        let truth = task
            .relevance_labels
            .get(label)
            .ok_or_else(|| EvalError::MissingRelevance(label.clone()))?;
        let predicted = map.get(label)?;
        let relevant = !truth.is_distractor();
        let correct = predicted == truth;
        match (relevant, correct, predicted.is_distractor()) {
            (true, true, _) => tp += 1,
            (true, false, true) => fn_ += 1,
            (true, false, false) => {
                fp += 1;
                fn_ += 1;
            }
            (false, _, true) => tn += 1,
            (false, _, false) => fp += 1,
        }
    }
    Ok(Confusion::from_counts(tp, fp, fn_, tn))
}

/// Name of each evaluated subset, in report order.
pub const SUBSET_REGULAR: &str = "S_R";
pub const SUBSET_LANG: &str = "S_lang";
pub const SUBSET_VIS: &str = "S_vis";
pub const SUBSET_UNK: &str = "S_unk";
pub const SUBSET_CONF: &str = "S_conf";

/// Confusion on `S_R`, each non-empty confound subset, and their union.
pub fn subset_metrics(map: &AlignmentMap, task: &TaskSpec) -> Result<Vec<SubsetRow>, EvalError> {
    let cs = &task.confound_sets;
    let mut rows = vec![SubsetRow {
        subset: SUBSET_REGULAR.into(),
        size: task.regular_subset().len(),
        confusion: alignment_confusion(map, task, &task.regular_subset())?,
    }];
    if cs.is_empty() {
        return Ok(rows);
    }
    for (name, set) in [
        (SUBSET_LANG, &cs.lang),
        (SUBSET_VIS, &cs.vis),
        (SUBSET_UNK, &cs.unk),
    ] {
        if !set.is_empty() {
            rows.push(SubsetRow {
                subset: name.into(),
                size: set.len(),
                confusion: alignment_confusion(map, task, set)?,
            });
        }
    }
    let union = cs.union();
    rows.push(SubsetRow {
        subset: SUBSET_CONF.into(),
        size: union.len(),
        confusion: alignment_confusion(map, task, &union)?,
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_score_table() {
        use Preference::*;
        assert_eq!(pair_score(A, A), 1.0);
        assert_eq!(pair_score(A, B), 0.0);
        assert_eq!(pair_score(Tie, A), 0.5);
        assert_eq!(pair_score(B, Tie), 0.5);
        assert_eq!(pair_score(Tie, Tie), 1.0);
    }

    #[test]
    fn three_of_four() {
        let scores = [(1.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.0, 1.0)];
        let truth = [Preference::A, Preference::A, Preference::B, Preference::A];
        let (rate, _) = win_rate_from_scores(&scores, &truth, 1e-9).unwrap();
        assert_eq!(rate, 0.75);
    }

    #[test]
    fn constant_scorer_scores_one_half() {
        let scores = [(2.0, 2.0); 5];
        let truth = [
            Preference::A,
            Preference::B,
            Preference::A,
            Preference::B,
            Preference::B,
        ];
        assert_eq!(win_rate_from_scores(&scores, &truth, 1e-9).unwrap().0, 0.5);
    }

    #[test]
    fn confusion_f1_formula() {
        assert_eq!(Confusion::from_counts(1, 1, 1, 0).f1, 0.5);
        assert_eq!(Confusion::from_counts(0, 0, 0, 3).f1, 1.0);
    }

    #[test]
    fn empty_pairs_error() {
        assert!(matches!(
            win_rate_from_scores(&[], &[], 0.0),
            Err(EvalError::EmptyPairs)
        ));
    }
}
