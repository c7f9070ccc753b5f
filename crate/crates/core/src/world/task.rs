//! Task fixtures: catalogs, ground-truth intent and reward, relevance labels.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Split, Target, Workspace, WorldError, DISTRACTOR_LABEL, DISTRACTOR_TOKEN};
use crate::features::FeatureSpec;

pub const TASK_SCHEMA_VERSION: u32 = 1;

fn default_d_max() -> f64 {
    0.5
}

fn default_schema_version() -> u32 {
    TASK_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub label: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

impl CatalogEntry {
    pub fn is_relevant(&self) -> bool {
        self.tags.contains("relevant")
    }
}

/// Named confound subsets of the test catalog.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfoundSets {
    #[serde(default, rename = "S_lang")]
    pub lang: BTreeSet<String>,
    #[serde(default, rename = "S_vis")]
    pub vis: BTreeSet<String>,
    #[serde(default, rename = "S_unk")]
    pub unk: BTreeSet<String>,
}

impl ConfoundSets {
    /// `S_conf`, the union of all confound subsets.
    pub fn union(&self) -> BTreeSet<String> {
        self.lang
            .iter()
            .chain(&self.vis)
            .chain(&self.unk)
            .cloned()
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.lang.is_empty() && self.vis.is_empty() && self.unk.is_empty()
    }
}

/// How many relevant and other catalog objects each sampled scene holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneComposition {
    pub relevant: usize,
    pub other: usize,
}

impl Default for SceneComposition {
    fn default() -> Self {
        SceneComposition {
            relevant: 1,
            other: 2,
        }
    }
}

/// Canned material for the scripted LM oracle.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleFixture {
    /// Response to the intent-inference call, in the dictionary-literal format.
    pub intent_response: String,
    /// Response to the similarity-axes call.
    pub axes_response: String,
    /// Deviations from the ground-truth mapping used when no intent is supplied.
    #[serde(default)]
    pub blind_overrides: BTreeMap<String, Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub name: String,
    pub ground_truth_intent: String,
    pub generic_baseline_intent: String,
    /// Free-text task description substituted into the intent prompt.
    #[serde(default)]
    pub task_string: String,
    #[serde(default)]
    pub workspace: Workspace,
    /// Label of an object held in the gripper at the start of every scene.
    #[serde(default)]
    pub carried: Option<String>,
    #[serde(default)]
    pub composition: SceneComposition,
    #[serde(default = "default_d_max")]
    pub d_max: f64,
    /// Ground-truth weights keyed by feature name; omitted features weigh 0.
    pub ground_truth_theta: BTreeMap<String, f64>,
    pub train_catalog: Vec<CatalogEntry>,
    pub test_catalog: Vec<CatalogEntry>,
    #[serde(default)]
    pub confound_sets: ConfoundSets,
    pub relevance_labels: BTreeMap<String, Target>,
    #[serde(default)]
    pub oracle: Option<OracleFixture>,
}

/// Reads, parses, and validates a task fixture.
pub fn load_task(path: impl AsRef<Path>) -> Result<TaskSpec, WorldError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| WorldError::Io {
        path: path.display().to_string(),
        source,
    })?;
    TaskSpec::from_json(&text)
}

fn check_label(field: &str, label: &str) -> Result<(), WorldError> {
    if label.is_empty() {
        return Err(WorldError::schema(field, "empty label"));
    }
    if label == DISTRACTOR_LABEL || label.eq_ignore_ascii_case(DISTRACTOR_TOKEN) {
        return Err(WorldError::schema(
            field,
            format!("`{label}` is reserved for the distractor class"),
        ));
    }
    if !label
        .chars()
        .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
    {
        return Err(WorldError::schema(
            field,
            format!("label `{label}` must be snake_case ascii"),
        ));
    }
    if label.contains("_proximity_to_") {
        return Err(WorldError::schema(
            field,
            format!("label `{label}` collides with feature naming"),
        ));
    }
    Ok(())
}

impl TaskSpec {
    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let task: TaskSpec = serde_json::from_str(text)?;
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.schema_version != TASK_SCHEMA_VERSION {
            return Err(WorldError::schema(
                "schema_version",
                format!("unsupported version {}", self.schema_version),
            ));
        }
        for (field, value) in [
            ("name", &self.name),
            ("ground_truth_intent", &self.ground_truth_intent),
            ("generic_baseline_intent", &self.generic_baseline_intent),
        ] {
            if value.trim().is_empty() {
                return Err(WorldError::schema(field, "must be non-empty"));
            }
        }
        self.workspace.validate()?;
        if !(self.d_max.is_finite() && self.d_max > 0.0) {
            return Err(WorldError::schema("d_max", "must be positive"));
        }

        let mut train = BTreeSet::new();
        for e in &self.train_catalog {
            check_label("train_catalog", &e.label)?;
            if !train.insert(e.label.as_str()) {
                return Err(WorldError::schema(
                    "train_catalog",
                    format!("duplicate label `{}`", e.label),
                ));
            }
        }
        let mut test = BTreeSet::new();
        for e in &self.test_catalog {
            check_label("test_catalog", &e.label)?;
            if !test.insert(e.label.as_str()) {
                return Err(WorldError::schema(
                    "test_catalog",
                    format!("duplicate label `{}`", e.label),
                ));
            }
        }
        if train.is_empty() {
            return Err(WorldError::schema("train_catalog", "must be non-empty"));
        }
        if test.is_empty() {
            return Err(WorldError::schema("test_catalog", "must be non-empty"));
        }
        let overlap: Vec<String> = train.intersection(&test).map(|s| s.to_string()).collect();
        if !overlap.is_empty() {
            return Err(WorldError::OverlappingCatalogs(overlap));
        }
        if let Some(c) = &self.carried {
            check_label("carried", c)?;
            if train.contains(c.as_str()) || test.contains(c.as_str()) {
                return Err(WorldError::schema(
                    "carried",
                    format!("carried label `{c}` must not appear in a catalog"),
                ));
            }
        }

        for e in &self.test_catalog {
            let Some(target) = self.relevance_labels.get(&e.label) else {
                return Err(WorldError::MissingRelevance(e.label.clone()));
            };
            if let Target::Seen(t) = target {
                if !train.contains(t.as_str()) {
                    return Err(WorldError::schema(
                        "relevance_labels",
                        format!("`{}` maps to `{t}`, which is not a train label", e.label),
                    ));
                }
            }
            if e.is_relevant() == target.is_distractor() {
                return Err(WorldError::schema(
                    "test_catalog",
                    format!(
                        "`{}` relevant tag disagrees with its relevance entry",
                        e.label
                    ),
                ));
            }
        }
        for label in self.relevance_labels.keys() {
            if !test.contains(label.as_str()) {
                return Err(WorldError::schema(
                    "relevance_labels",
                    format!("`{label}` is not a test label"),
                ));
            }
        }
        for (name, set) in [
            ("confound_sets.S_lang", &self.confound_sets.lang),
            ("confound_sets.S_vis", &self.confound_sets.vis),
            ("confound_sets.S_unk", &self.confound_sets.unk),
        ] {
            if let Some(bad) = set.iter().find(|l| !test.contains(l.as_str())) {
                return Err(WorldError::schema(
                    name,
                    format!("`{bad}` is not a test label"),
                ));
            }
        }

        let names: BTreeSet<String> = self.feature_specs().into_iter().map(|f| f.name).collect();
        for (k, w) in &self.ground_truth_theta {
            if !names.contains(k) {
                return Err(WorldError::schema(
                    "ground_truth_theta",
                    format!("unknown feature `{k}`"),
                ));
            }
            if !w.is_finite() {
                return Err(WorldError::schema(
                    "ground_truth_theta",
                    format!("weight for `{k}` is not finite"),
                ));
            }
        }
        if let Some(oracle) = &self.oracle {
            for (label, target) in &oracle.blind_overrides {
                if !test.contains(label.as_str()) {
                    return Err(WorldError::schema(
                        "oracle.blind_overrides",
                        format!("`{label}` is not a test label"),
                    ));
                }
                if let Target::Seen(t) = target {
                    if !train.contains(t.as_str()) {
                        return Err(WorldError::schema(
                            "oracle.blind_overrides",
                            format!("`{t}` is not a train label"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn catalog(&self, split: Split) -> &[CatalogEntry] {
        match split {
            Split::Train => &self.train_catalog,
            Split::Test => &self.test_catalog,
        }
    }

    pub fn train_labels(&self) -> Vec<String> {
        self.train_catalog.iter().map(|e| e.label.clone()).collect()
    }

    pub fn test_labels(&self) -> Vec<String> {
        self.test_catalog.iter().map(|e| e.label.clone()).collect()
    }

    /// Labels every alignment map must carry through unchanged.
    pub fn passthrough_labels(&self) -> Vec<String> {
        self.carried.iter().cloned().collect()
    }

    /// Ground-truth relevance of a test label.
    pub fn is_relevant(&self, label: &str) -> Option<bool> {
        self.relevance_labels.get(label).map(|t| !t.is_distractor())
    }

    /// `S_R`: the test labels outside every confound subset.
    pub fn regular_subset(&self) -> BTreeSet<String> {
        let conf = self.confound_sets.union();
        self.test_catalog
            .iter()
            .map(|e| e.label.clone())
            .filter(|l| !conf.contains(l))
            .collect()
    }

    /// Feature list for this task: one end-effector proximity per train label,
    /// carried-object proximities when something is carried, then gripper tilt
    /// and end-effector height.
    pub fn feature_specs(&self) -> Vec<FeatureSpec> {
        let mut specs: Vec<FeatureSpec> = self
            .train_catalog
            .iter()
            .map(|e| FeatureSpec::ee_proximity(&e.label, self.d_max))
            .collect();
        if let Some(c) = &self.carried {
            specs.extend(
                self.train_catalog
                    .iter()
                    .map(|e| FeatureSpec::object_proximity(c, &e.label, self.d_max)),
            );
        }
        specs.push(FeatureSpec::gripper_tilt());
        specs.push(FeatureSpec::ee_height(
            self.workspace.min[2],
            self.workspace.max[2],
        ));
        specs
    }

    /// Ground-truth weights laid out along `specs`.
    pub fn theta_star(&self, specs: &[FeatureSpec]) -> Vec<f64> {
        specs
            .iter()
            .map(|s| self.ground_truth_theta.get(&s.name).copied().unwrap_or(0.0))
            .collect()
    }
}
