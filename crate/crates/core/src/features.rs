//! Human-interpretable trajectory features and their text rendering.
//!
//! Feature names follow fixed patterns so they can be read back by an LM:
//! `ee_proximity_to_<label>`, `<a>_proximity_to_<b>`, `gripper_tilt` and
//! `ee_height`. Every value lies in `[0, 1]`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::geom::{self, Vec3};
use crate::world::{SceneState, Trajectory};

const PROXIMITY_INFIX: &str = "_proximity_to_";
const EE_PREFIX: &str = "ee";

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("d_max must be positive, got {0}")]
    NonPositiveDmax(f64),
    #[error("trajectory has {0} states; at least 2 are required")]
    TooShort(usize),
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("invalid feature spec `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    EeObjectProximity,
    ObjectObjectProximity,
    GripperTilt,
    EeHeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub description: String,
    pub kind: FeatureKind,
    /// Distance at which proximity reaches 0; proximity kinds only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_max: Option<f64>,
    /// Height range mapped onto `[0, 1]`; `ee_height` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height_range: Option<[f64; 2]>,
}

impl FeatureSpec {
    pub fn ee_proximity(label: &str, d_max: f64) -> Self {
        FeatureSpec {
            name: format!("{EE_PREFIX}{PROXIMITY_INFIX}{label}"),
            description: format!(
                "How close the robot end effector is to the {}; 1.0 when touching, 0.0 when at least {d_max} m away or absent.",
                label.replace('_', " ")
            ),
            kind: FeatureKind::EeObjectProximity,
            d_max: Some(d_max),
            height_range: None,
        }
    }

    pub fn object_proximity(a: &str, b: &str, d_max: f64) -> Self {
        FeatureSpec {
            name: format!("{a}{PROXIMITY_INFIX}{b}"),
            description: format!(
                "How close the {} is to the {}; 1.0 when touching, 0.0 when at least {d_max} m apart or either is absent.",
                a.replace('_', " "),
                b.replace('_', " ")
            ),
            kind: FeatureKind::ObjectObjectProximity,
            d_max: Some(d_max),
            height_range: None,
        }
    }

    pub fn gripper_tilt() -> Self {
        FeatureSpec {
            name: "gripper_tilt".into(),
            description: "Angle between the gripper axis and the table normal, as a fraction of pi; 0.0 when upright.".into(),
            kind: FeatureKind::GripperTilt,
            d_max: None,
            height_range: None,
        }
    }

    pub fn ee_height(z_min: f64, z_max: f64) -> Self {
        FeatureSpec {
            name: "ee_height".into(),
            description: "Height of the end effector above the table, normalized to the workspace; 0.0 at the table, 1.0 at the ceiling.".into(),
            kind: FeatureKind::EeHeight,
            d_max: None,
            height_range: Some([z_min, z_max]),
        }
    }

    /// `(subject, object)` labels of a proximity feature; the subject is
    /// `None` for end-effector proximities.
    pub fn proximity_labels(&self) -> Option<(Option<&str>, &str)> {
        match self.kind {
            FeatureKind::EeObjectProximity => self
                .name
                .strip_prefix(EE_PREFIX)
                .and_then(|r| r.strip_prefix(PROXIMITY_INFIX))
                .map(|b| (None, b)),
            FeatureKind::ObjectObjectProximity => self
                .name
                .split_once(PROXIMITY_INFIX)
                .map(|(a, b)| (Some(a), b)),
            _ => None,
        }
    }

    /// Object labels a feature refers to.
    pub fn object_labels(&self) -> Vec<&str> {
        match self.proximity_labels() {
            Some((Some(a), b)) => vec![a, b],
            Some((None, b)) => vec![b],
            None => vec![],
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let invalid = |reason: &str| FeatureError::InvalidSpec {
            name: self.name.clone(),
            reason: reason.into(),
        };
        if self.description.trim().is_empty() {
            return Err(invalid("empty description"));
        }
        match self.kind {
            FeatureKind::EeObjectProximity | FeatureKind::ObjectObjectProximity => {
                let d = self.d_max.ok_or_else(|| invalid("missing d_max"))?;
                if !(d > 0.0 && d.is_finite()) {
                    return Err(FeatureError::NonPositiveDmax(d));
                }
                match self.proximity_labels() {
                    Some((a, b)) if !b.is_empty() && a.map_or(true, |a| !a.is_empty()) => {}
                    _ => return Err(invalid("name does not match the proximity pattern")),
                }
            }
            FeatureKind::GripperTilt if self.name != "gripper_tilt" => {
                return Err(invalid("expected name `gripper_tilt`"))
            }
            FeatureKind::EeHeight => {
                if self.name != "ee_height" {
                    return Err(invalid("expected name `ee_height`"));
                }
                match self.height_range {
                    Some([lo, hi]) if lo < hi => {}
                    _ => return Err(invalid("height_range must satisfy lo < hi")),
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Checks every spec and the uniqueness of names.
pub fn validate_specs(specs: &[FeatureSpec]) -> Result<(), FeatureError> {
    let mut seen = std::collections::HashSet::new();
    for s in specs {
        s.validate()?;
        if !seen.insert(s.name.as_str()) {
            return Err(FeatureError::InvalidSpec {
                name: s.name.clone(),
                reason: "duplicate name".into(),
            });
        }
    }
    Ok(())
}

/// Feature values aligned index-wise with a spec list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.0.iter().zip(weights).map(|(a, b)| a * b).sum()
    }
}

/// Clamped linear proximity `1 - min(d, d_max) / d_max`.
pub fn proximity(distance: f64, d_max: f64) -> Result<f64, FeatureError> {
    if !(d_max > 0.0) {
        return Err(FeatureError::NonPositiveDmax(d_max));
    }
    Ok(1.0 - distance.max(0.0).min(d_max) / d_max)
}

fn nearest(points: impl Iterator<Item = Vec3>, from: Vec3) -> Option<f64> {
    points
        .map(|p| geom::distance(p, from))
        .min_by(|a, b| a.total_cmp(b))
}

fn positions<'a>(state: &'a SceneState, label: &'a str) -> impl Iterator<Item = Vec3> + 'a {
    state
        .objects
        .iter()
        .filter(move |o| o.label == label)
        .map(|o| o.position)
}

fn feature_value(state: &SceneState, spec: &FeatureSpec) -> f64 {
    match spec.kind {
        FeatureKind::EeObjectProximity | FeatureKind::ObjectObjectProximity => {
            let d_max = spec.d_max.unwrap_or(0.5);
            let dist = match spec.proximity_labels() {
                Some((None, b)) => nearest(positions(state, b), state.ee_position),
                // Closest pair of distinct instances.
                Some((Some(a), b)) => state
                    .objects
                    .iter()
                    .filter(|o| o.label == a)
                    .filter_map(|oa| {
                        state
                            .objects
                            .iter()
                            .filter(|ob| ob.label == b && ob.object_id != oa.object_id)
                            .map(|ob| geom::distance(oa.position, ob.position))
                            .min_by(|x, y| x.total_cmp(y))
                    })
                    .min_by(|x, y| x.total_cmp(y)),
                None => None,
            };
            match dist {
                Some(d) => proximity(d, d_max).unwrap_or(0.0),
                None => 0.0,
            }
        }
        FeatureKind::GripperTilt => {
            let axis = geom::rotate(state.ee_orientation, [0.0, 0.0, 1.0]);
            let c = (axis[2] / geom::norm(axis)).clamp(-1.0, 1.0);
            c.acos() / std::f64::consts::PI
        }
        FeatureKind::EeHeight => {
            let [lo, hi] = spec.height_range.unwrap_or([0.0, 1.0]);
            ((state.ee_position[2] - lo) / (hi - lo)).clamp(0.0, 1.0)
        }
    }
}

/// Per-state feature values. Labels missing from the scene give 0.0; when a
/// label occurs more than once the nearest instance is used.
pub fn state_features(state: &SceneState, specs: &[FeatureSpec]) -> FeatureVector {
    FeatureVector(specs.iter().map(|s| feature_value(state, s)).collect())
}

/// Adds the features of `state` into `acc` (aligned with `specs`).
pub fn accumulate_state_features(state: &SceneState, specs: &[FeatureSpec], acc: &mut [f64]) {
    for (a, s) in acc.iter_mut().zip(specs) {
        *a += feature_value(state, s);
    }
}

/// Mean of [`state_features`] over all states of the trajectory.
pub fn trajectory_features(
    traj: &Trajectory,
    specs: &[FeatureSpec],
) -> Result<FeatureVector, FeatureError> {
    if traj.states.len() < 2 {
        return Err(FeatureError::TooShort(traj.states.len()));
    }
    let mut acc = vec![0.0; specs.len()];
    for s in &traj.states {
        accumulate_state_features(s, specs, &mut acc);
    }
    let n = traj.states.len() as f64;
    Ok(FeatureVector(acc.into_iter().map(|a| a / n).collect()))
}

/// Timesteps emitted by [`textualize`]: every `stride`-th state plus the last.
pub fn sampled_timesteps(len: usize, stride: usize) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let mut ts: Vec<usize> = (0..len).step_by(stride.max(1)).collect();
    if ts.last() != Some(&(len - 1)) {
        ts.push(len - 1);
    }
    ts
}

/// Renders a trajectory as `Timestep {t}: {feature}: {value:.2}` lines,
/// grouped by feature in spec order.
pub fn textualize(
    traj: &Trajectory,
    specs: &[FeatureSpec],
    stride: usize,
) -> Result<String, FeatureError> {
    if stride == 0 {
        return Err(FeatureError::ZeroStride);
    }
    let ts = sampled_timesteps(traj.states.len(), stride);
    let per_state: Vec<FeatureVector> = ts
        .iter()
        .map(|&t| state_features(&traj.states[t], specs))
        .collect();
    let mut out = String::new();
    for (k, spec) in specs.iter().enumerate() {
        for (&t, phi) in ts.iter().zip(&per_state) {
            if !out.is_empty() {
                out.push('\n');
            }
            let _ = write!(out, "Timestep {t}: {}: {:.2}", spec.name, phi.0[k]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::geom::{quat_from_axis_angle, IDENTITY_QUAT};
    use crate::world::ObjectInstance;

    fn obj(id: &str, label: &str, p: Vec3) -> ObjectInstance {
        ObjectInstance {
            object_id: id.into(),
            label: label.into(),
            position: p,
            tags: Default::default(),
        }
    }

    fn state(ee: Vec3, objects: Vec<ObjectInstance>) -> SceneState {
        SceneState {
            ee_position: ee,
            ee_orientation: IDENTITY_QUAT,
            gripper_open: true,
            objects,
            time_index: 0,
        }
    }

    #[test]
    fn proximity_endpoints() {
        assert_eq!(proximity(0.0, 0.5).unwrap(), 1.0);
        assert_eq!(proximity(0.25, 0.5).unwrap(), 0.5);
        assert_eq!(proximity(0.9, 0.5).unwrap(), 0.0);
        assert_eq!(proximity(0.1, 0.0), Err(FeatureError::NonPositiveDmax(0.0)));
    }

    #[test]
    fn empty_scene_gives_zero_proximities() {
        let specs = vec![
            FeatureSpec::ee_proximity("paintbrush", 0.5),
            FeatureSpec::object_proximity("mug", "laptop", 0.5),
        ];
        let phi = state_features(&state([0.5; 3], vec![]), &specs);
        assert_eq!(phi.0, vec![0.0, 0.0]);
    }

    #[test]
    fn duplicate_labels_bind_to_nearest_instance() {
        let specs = vec![FeatureSpec::ee_proximity("cup", 0.5)];
        let s = state(
            [0.0, 0.0, 0.0],
            vec![
                obj("a", "cup", [0.4, 0.0, 0.0]),
                obj("b", "cup", [0.1, 0.0, 0.0]),
            ],
        );
        let v = state_features(&s, &specs).0[0];
        assert!((v - proximity(0.1, 0.5).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn object_pair_uses_closest_distinct_instances() {
        let specs = vec![FeatureSpec::object_proximity("mug", "laptop", 1.0)];
        let s = state(
            [0.0; 3],
            vec![
                obj("m", "mug", [0.0, 0.0, 0.0]),
                obj("l1", "laptop", [0.8, 0.0, 0.0]),
                obj("l2", "laptop", [0.0, 0.3, 0.0]),
            ],
        );
        assert!((state_features(&s, &specs).0[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn tilt_is_zero_upright_and_half_when_horizontal() {
        let specs = vec![FeatureSpec::gripper_tilt()];
        let mut s = state([0.0; 3], vec![]);
        assert_eq!(state_features(&s, &specs).0[0], 0.0);
        s.ee_orientation = quat_from_axis_angle([1.0, 0.0, 0.0], std::f64::consts::FRAC_PI_2);
        assert!((state_features(&s, &specs).0[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn height_is_normalized() {
        let specs = vec![FeatureSpec::ee_height(0.0, 0.5)];
        let s = state([0.0, 0.0, 0.25], vec![]);
        assert!((state_features(&s, &specs).0[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spec_validation() {
        assert!(FeatureSpec::ee_proximity("cup", 0.5).validate().is_ok());
        assert_eq!(
            FeatureSpec::ee_proximity("cup", -1.0).validate(),
            Err(FeatureError::NonPositiveDmax(-1.0))
        );
        let dup = vec![FeatureSpec::gripper_tilt(), FeatureSpec::gripper_tilt()];
        assert!(validate_specs(&dup).is_err());
        let spec = FeatureSpec::object_proximity("mug", "laptop", 0.5);
        assert_eq!(spec.proximity_labels(), Some((Some("mug"), "laptop")));
        assert_eq!(spec.object_labels(), vec!["mug", "laptop"]);
    }

    #[test]
    fn sampled_timesteps_always_include_last() {
        assert_eq!(sampled_timesteps(61, 1).len(), 61);
        assert_eq!(sampled_timesteps(61, 60), vec![0, 60]);
        assert_eq!(sampled_timesteps(61, 100), vec![0, 60]);
        assert_eq!(sampled_timesteps(10, 4), vec![0, 4, 8, 9]);
    }

    #[test]
    fn too_short_trajectory_is_rejected() {
        let t = Trajectory {
            task_id: "t".into(),
            states: vec![state([0.0; 3], vec![])],
        };
        assert_eq!(
            trajectory_features(&t, &[FeatureSpec::gripper_tilt()]),
            Err(FeatureError::TooShort(1))
        );
    }
}
