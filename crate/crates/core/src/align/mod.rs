//! Alignment of test-scene objects onto training-scene objects, the aligned
//! reward, and the kernel-based error bound checker.

mod bound;
mod embedding;
mod lm_align;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::{IntentError, IntentEstimate};
use crate::lm::LmError;
use crate::reward::{trajectory_reward, RewardError, RewardModel};
use crate::world::{SceneState, Target, TaskSpec, Trajectory};

pub use bound::{
    calibration_samples, check_bound, continuous_kernel, state_kernel, trajectory_kernels,
    BoundEvaluation, BoundReport, CalibrationSample, KernelSample,
};
pub use embedding::{
    embedding_align, embedding_targets, non_oracle_threshold, oracle_threshold, threshold_samples,
    EmbeddingSpace, EmbeddingStore, ThresholdKind, ThresholdPolicy,
};
pub use lm_align::{lm_align, parse_call3_response, render_call3, AlignConfig};

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("label `{0}` has no alignment entry")]
    Unmapped(String),
    #[error("`{unseen}` maps to `{target}`, which is not a seen label")]
    InvalidTarget { unseen: String, target: String },
    #[error("label list is empty: {0}")]
    EmptyLabels(&'static str),
    #[error("all {0} alignment runs were unparseable")]
    AllRunsUnparseable(usize),
    #[error("no {space} embedding for `{label}`")]
    MissingEmbedding {
        space: EmbeddingSpace,
        label: String,
    },
    #[error("mean embedding of `{0}` has zero norm")]
    ZeroNorm(String),
    #[error("need at least two seen labels, got {0}")]
    TooFewLabels(usize),
    #[error("embedding file is for space {found}, expected {expected}")]
    WrongSpace {
        expected: EmbeddingSpace,
        found: EmbeddingSpace,
    },
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("every calibration sample has k = 1")]
    NoInformativeCalibration,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Intent(#[from] IntentError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMethod {
    Gift,
    VisionEmbedding,
    LanguageEmbedding,
    LmNoIntent,
    /// The task's ground-truth relevance mapping.
    GroundTruth,
    /// Every unseen label is a distractor.
    AllDistractor,
    /// Every label maps to itself (train scenes).
    Identity,
}

impl AlignMethod {
    pub fn name(self) -> &'static str {
        match self {
            AlignMethod::Gift => "gift",
            AlignMethod::VisionEmbedding => "vision_embedding",
            AlignMethod::LanguageEmbedding => "language_embedding",
            AlignMethod::LmNoIntent => "lm_no_intent",
            AlignMethod::GroundTruth => "ground_truth",
            AlignMethod::AllDistractor => "all_distractor",
            AlignMethod::Identity => "identity",
        }
    }
}

impl std::fmt::Display for AlignMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AlignMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            AlignMethod::Gift,
            AlignMethod::VisionEmbedding,
            AlignMethod::LanguageEmbedding,
            AlignMethod::LmNoIntent,
            AlignMethod::GroundTruth,
            AlignMethod::AllDistractor,
            AlignMethod::Identity,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown alignment method `{s}`"))
    }
}

/// A total map from unseen labels to seen labels or the distractor class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub entries: BTreeMap<String, Target>,
    pub method: AlignMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditioning: Option<IntentEstimate>,
    /// Per label, the number of runs that voted for each target token.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub votes: BTreeMap<String, BTreeMap<Target, usize>>,
}

impl AlignmentMap {
    pub fn new(method: AlignMethod, entries: BTreeMap<String, Target>) -> Self {
        AlignmentMap {
            entries,
            method,
            conditioning: None,
            votes: BTreeMap::new(),
        }
    }

    pub fn identity<S: AsRef<str>>(labels: impl IntoIterator<Item = S>) -> Self {
        Self::new(
            AlignMethod::Identity,
            labels
                .into_iter()
                .map(|l| (l.as_ref().to_owned(), Target::seen(l.as_ref())))
                .collect(),
        )
    }

    pub fn all_distractor<S: AsRef<str>>(labels: impl IntoIterator<Item = S>) -> Self {
        Self::new(
            AlignMethod::AllDistractor,
            labels
                .into_iter()
                .map(|l| (l.as_ref().to_owned(), Target::Distractor))
                .collect(),
        )
    }

    /// The task's ground-truth map over its test labels, plus carried labels.
    pub fn ground_truth(task: &TaskSpec) -> Self {
        Self::new(AlignMethod::GroundTruth, task.relevance_labels.clone())
            .with_passthrough(task.passthrough_labels())
    }

    /// Adds identity entries for labels that are never re-aligned.
    pub fn with_passthrough<S: AsRef<str>>(mut self, labels: impl IntoIterator<Item = S>) -> Self {
        for l in labels {
            self.entries
                .insert(l.as_ref().to_owned(), Target::seen(l.as_ref()));
        }
        self
    }

    /// Restricts the map to `labels` (all of which must be mapped).
    pub fn restricted_to<'a>(
        &self,
        labels: impl IntoIterator<Item = &'a String>,
    ) -> Result<Self, AlignError> {
        let mut out = Self::new(self.method, BTreeMap::new());
        out.conditioning = self.conditioning.clone();
        for l in labels {
            let t = self.get(l)?;
            out.entries.insert(l.clone(), t.clone());
            if let Some(v) = self.votes.get(l) {
                out.votes.insert(l.clone(), v.clone());
            }
        }
        Ok(out)
    }

    pub fn get(&self, label: &str) -> Result<&Target, AlignError> {
        self.entries
            .get(label)
            .ok_or_else(|| AlignError::Unmapped(label.to_owned()))
    }

    /// Checks totality over `unseen` and that every target is in `seen`.
    pub fn validate(&self, seen: &BTreeSet<String>, unseen: &[String]) -> Result<(), AlignError> {
        for u in unseen {
            self.get(u)?;
        }
        for (u, t) in &self.entries {
            if let Target::Seen(l) = t {
                if !seen.contains(l) {
                    return Err(AlignError::InvalidTarget {
                        unseen: u.clone(),
                        target: l.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Per-label mode over repeated runs.
///
/// A label missing from a run counts as a distractor vote. The distractor
/// loses ties against any concrete label; ties among concrete labels go to
/// the lexicographically smallest.
pub fn mode_vote(
    runs: &[BTreeMap<String, Target>],
    unseen: &[String],
) -> (
    BTreeMap<String, Target>,
    BTreeMap<String, BTreeMap<Target, usize>>,
) {
    let mut entries = BTreeMap::new();
    let mut votes = BTreeMap::new();
    for label in unseen {
        let mut tally: BTreeMap<Target, usize> = BTreeMap::new();
        for run in runs {
            let t = run.get(label).cloned().unwrap_or(Target::Distractor);
            *tally.entry(t).or_insert(0) += 1;
        }
        let winner = tally
            .iter()
            .max_by(|(ta, ca), (tb, cb)| {
                ca.cmp(cb)
                    .then_with(|| tb.is_distractor().cmp(&ta.is_distractor()))
                    .then_with(|| tb.cmp(ta))
            })
            .map(|(t, _)| t.clone())
            .unwrap_or(Target::Distractor);
        entries.insert(label.clone(), winner);
        votes.insert(label.clone(), tally);
    }
    (entries, votes)
}

/// Relabels objects per `map`; poses and every numeric field are untouched.
pub fn align_state(state: &SceneState, map: &AlignmentMap) -> Result<SceneState, AlignError> {
    let mut out = state.clone();
    for obj in &mut out.objects {
        obj.label = map.get(&obj.label)?.scene_label().to_owned();
    }
    Ok(out)
}

pub fn align_trajectory(traj: &Trajectory, map: &AlignmentMap) -> Result<Trajectory, AlignError> {
    Ok(Trajectory {
        task_id: traj.task_id.clone(),
        states: traj
            .states
            .iter()
            .map(|s| align_state(s, map))
            .collect::<Result<_, _>>()?,
    })
}

/// Reward of the trajectory after alignment into the training domain.
pub fn aligned_reward(
    model: &RewardModel,
    traj: &Trajectory,
    map: &AlignmentMap,
) -> Result<f64, AlignError> {
    Ok(trajectory_reward(model, &align_trajectory(traj, map)?)?)
}
