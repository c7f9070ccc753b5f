//! Scenes, tasks, and the kinematic trajectory generator.
//!
//! Trajectories are plain state sequences: the end-effector pose, the gripper
//! flag, and the labeled objects at every waypoint. Actions are implicit (the
//! delta between consecutive waypoints).

pub mod dataset;
pub mod generate;
pub mod geom;
pub mod task;

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{read_trajectories, write_trajectories, Dataset};
pub use generate::{
    candidate_features, candidate_trajectories, candidate_trajectory, generate_dataset,
    nominal_trajectory, perturbed_trajectory, preferred_trajectory, preferred_trajectory_by,
    sample_goal, sample_scene, GeneratorConfig, Perturbation,
};
pub use geom::{Quat, Vec3};
pub use task::{load_task, CatalogEntry, ConfoundSets, OracleFixture, SceneComposition, TaskSpec};

/// Label given to objects whose alignment target is the distractor class.
pub const DISTRACTOR_LABEL: &str = "__distractor__";

/// Token used for the distractor class in task files and LM responses.
pub const DISTRACTOR_TOKEN: &str = "distractor";

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("schema violation in `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error("invalid task JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("train and test catalogs overlap on {0:?}")]
    OverlappingCatalogs(Vec<String>),
    #[error("test label `{0}` has no relevance entry")]
    MissingRelevance(String),
    #[error("catalog for split `{0}` is empty")]
    EmptyCatalog(Split),
    #[error("{what} {point:?} lies outside the workspace")]
    OutOfBounds { what: &'static str, point: Vec3 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("feature extraction failed: {0}")]
    Features(String),
}

impl WorldError {
    pub(crate) fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        WorldError::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Test => f.write_str("test"),
        }
    }
}

/// Alignment target of an object label: a seen (training) label or the
/// distractor class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum Target {
    Seen(String),
    Distractor,
}

impl Target {
    pub fn seen(label: impl Into<String>) -> Self {
        Target::Seen(label.into())
    }

    pub fn is_distractor(&self) -> bool {
        matches!(self, Target::Distractor)
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Target::Seen(l) => Some(l),
            Target::Distractor => None,
        }
    }

    /// Label an aligned object carries in the training domain.
    pub fn scene_label(&self) -> &str {
        match self {
            Target::Seen(l) => l,
            Target::Distractor => DISTRACTOR_LABEL,
        }
    }

    /// Parses the token used in files and LM output; `distractor` in any case
    /// (and the reserved scene label) maps to [`Target::Distractor`].
    pub fn parse(token: &str) -> Self {
        let t = token.trim();
        if t.eq_ignore_ascii_case(DISTRACTOR_TOKEN) || t == DISTRACTOR_LABEL {
            Target::Distractor
        } else {
            Target::Seen(t.to_string())
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Seen(l) => f.write_str(l),
            Target::Distractor => f.write_str(DISTRACTOR_TOKEN),
        }
    }
}

impl From<Target> for String {
    fn from(t: Target) -> String {
        t.to_string()
    }
}

impl From<String> for Target {
    fn from(s: String) -> Target {
        Target::parse(&s)
    }
}

/// Axis-aligned workspace box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: Vec3,
    pub max: Vec3,
}

impl Default for Workspace {
    /// 1 m x 1 m tabletop with 0.5 m of headroom.
    fn default() -> Self {
        Workspace {
            min: [0.0, 0.0, 0.0],
            max: [1.0, 1.0, 0.5],
        }
    }
}

impl Workspace {
    const EPS: f64 = 1e-12;

    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - Self::EPS && p[i] <= self.max[i] + Self::EPS)
    }

    pub fn clamp(&self, p: Vec3) -> Vec3 {
        [
            p[0].clamp(self.min[0], self.max[0]),
            p[1].clamp(self.min[1], self.max[1]),
            p[2].clamp(self.min[2], self.max[2]),
        ]
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        for i in 0..3 {
            if !(self.min[i].is_finite() && self.max[i].is_finite()) || self.min[i] >= self.max[i] {
                return Err(WorldError::schema(
                    "workspace",
                    format!("axis {i} must satisfy min < max"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub object_id: String,
    pub label: String,
    pub position: Vec3,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub ee_position: Vec3,
    pub ee_orientation: Quat,
    pub gripper_open: bool,
    pub objects: Vec<ObjectInstance>,
    pub time_index: u64,
}

impl SceneState {
    /// Checks the quaternion norm and object-level invariants.
    pub fn validate(&self) -> Result<(), WorldError> {
        let n = geom::quat_norm(self.ee_orientation);
        if (n - 1.0).abs() > 1e-6 {
            return Err(WorldError::InvalidTrajectory(format!(
                "ee orientation norm {n} is not 1"
            )));
        }
        let mut ids = HashSet::new();
        for o in &self.objects {
            if o.label.is_empty() {
                return Err(WorldError::InvalidTrajectory(format!(
                    "object `{}` has an empty label",
                    o.object_id
                )));
            }
            if !ids.insert(o.object_id.as_str()) {
                return Err(WorldError::InvalidTrajectory(format!(
                    "duplicate object id `{}`",
                    o.object_id
                )));
            }
        }
        Ok(())
    }

    pub fn object(&self, object_id: &str) -> Option<&ObjectInstance> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    /// Labels present in the scene, deduplicated and sorted.
    pub fn labels(&self) -> BTreeSet<String> {
        self.objects.iter().map(|o| o.label.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub states: Vec<SceneState>,
}

impl Trajectory {
    /// Validates length, time ordering, and the shared object set.
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.states.len() < 2 {
            return Err(WorldError::InvalidTrajectory(format!(
                "needs at least 2 states, got {}",
                self.states.len()
            )));
        }
        let signature = |s: &SceneState| -> Vec<(String, String)> {
            let mut v: Vec<_> = s
                .objects
                .iter()
                .map(|o| (o.object_id.clone(), o.label.clone()))
                .collect();
            v.sort();
            v
        };
        let first = signature(&self.states[0]);
        for (i, w) in self.states.windows(2).enumerate() {
            if w[1].time_index <= w[0].time_index {
                return Err(WorldError::InvalidTrajectory(format!(
                    "time_index not strictly increasing at state {}",
                    i + 1
                )));
            }
        }
        for s in &self.states {
            s.validate()?;
            if signature(s) != first {
                return Err(WorldError::InvalidTrajectory(
                    "states do not share the same object set".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> &SceneState {
        &self.states[0]
    }

    pub fn last(&self) -> &SceneState {
        &self.states[self.states.len() - 1]
    }

    /// Sum of end-effector segment lengths.
    pub fn path_length(&self) -> f64 {
        self.states
            .windows(2)
            .map(|w| geom::distance(w[0].ee_position, w[1].ee_position))
            .sum()
    }
}

/// Mixes a base seed with stream identifiers (splitmix64 finalizer).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
