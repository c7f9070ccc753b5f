//! Scene sampling and the kinematic waypoint generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geom::{self, Vec3};
use super::{
    derive_seed, CatalogEntry, Dataset, ObjectInstance, SceneState, Split, TaskSpec, Trajectory,
    Workspace, WorldError,
};
use crate::features::{accumulate_state_features, trajectory_features, FeatureSpec, FeatureVector};

/// Settings of the waypoint generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub workspace: Workspace,
    /// Segments per trajectory; trajectories have `n_steps + 1` states.
    pub n_steps: usize,
    /// Candidates considered when picking a preferred trajectory.
    pub n_candidates: usize,
    /// Objects within this distance of a closed gripper move with it.
    pub grasp_radius: f64,
    /// Peak horizontal offset of the first perturbation harmonic, meters.
    pub lateral_amplitude: f64,
    /// Peak vertical offset of the first perturbation harmonic, meters.
    pub vertical_amplitude: f64,
    /// Peak gripper tilt applied mid-trajectory, radians.
    pub tilt_amplitude: f64,
    pub harmonics: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            workspace: Workspace::default(),
            n_steps: 60,
            n_candidates: 64,
            grasp_radius: 0.03,
            lateral_amplitude: 0.35,
            vertical_amplitude: 0.03,
            tilt_amplitude: 0.5,
            harmonics: 2,
        }
    }
}

impl GeneratorConfig {
    pub fn for_task(task: &TaskSpec) -> Self {
        GeneratorConfig {
            workspace: task.workspace,
            ..Default::default()
        }
    }
}

/// Offset applied on top of straight-line interpolation. Every harmonic
/// vanishes at both endpoints, so start and goal are preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub harmonics: Vec<Vec3>,
    pub tilt_axis: Vec3,
    pub tilt_angle: f64,
}

impl Perturbation {
    pub fn none() -> Self {
        Perturbation {
            harmonics: Vec::new(),
            tilt_axis: [1.0, 0.0, 0.0],
            tilt_angle: 0.0,
        }
    }

    pub fn sample(rng: &mut impl Rng, cfg: &GeneratorConfig) -> Self {
        let harmonics = (1..=cfg.harmonics)
            .map(|h| {
                let a = cfg.lateral_amplitude / h as f64;
                let v = cfg.vertical_amplitude / h as f64;
                [
                    rng.gen_range(-a..=a),
                    rng.gen_range(-a..=a),
                    rng.gen_range(-v..=v),
                ]
            })
            .collect();
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        Perturbation {
            harmonics,
            tilt_axis: [phi.cos(), phi.sin(), 0.0],
            tilt_angle: rng.gen_range(-cfg.tilt_amplitude..=cfg.tilt_amplitude),
        }
    }

    fn offset(&self, s: f64) -> Vec3 {
        self.harmonics
            .iter()
            .enumerate()
            .fold([0.0; 3], |acc, (i, a)| {
                let w = ((i + 1) as f64 * std::f64::consts::PI * s).sin();
                geom::add(acc, geom::scale(*a, w))
            })
    }
}

fn draw(rng: &mut ChaCha8Rng, pool: &[&CatalogEntry]) -> CatalogEntry {
    (*pool[rng.gen_range(0..pool.len())]).clone()
}

fn uniform_point(rng: &mut impl Rng, ws: &Workspace) -> Vec3 {
    [
        rng.gen_range(ws.min[0]..=ws.max[0]),
        rng.gen_range(ws.min[1]..=ws.max[1]),
        rng.gen_range(ws.min[2]..=ws.max[2]),
    ]
}

/// Draws an initial scene for `split`.
///
/// Objects rest on the table plane (`z = workspace.min.z`) at uniformly
/// random planar positions; the end effector is uniform in the workspace.
/// Relevant and other catalog entries are drawn with replacement in the
/// proportions of the task's scene composition. When the task carries an
/// object it starts in the closed gripper.
pub fn sample_scene(task: &TaskSpec, split: Split, seed: u64) -> Result<SceneState, WorldError> {
    let catalog = task.catalog(split);
    if catalog.is_empty() {
        return Err(WorldError::EmptyCatalog(split));
    }
    let split_stream = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[split_stream]));
    let ws = task.workspace;

    let all: Vec<&CatalogEntry> = catalog.iter().collect();
    let relevant: Vec<&CatalogEntry> = catalog.iter().filter(|e| e.is_relevant()).collect();
    let other: Vec<&CatalogEntry> = catalog.iter().filter(|e| !e.is_relevant()).collect();
    let relevant = if relevant.is_empty() {
        all.clone()
    } else {
        relevant
    };
    let other = if other.is_empty() { all.clone() } else { other };

    let mut entries = Vec::with_capacity(task.composition.relevant + task.composition.other);
    for _ in 0..task.composition.relevant {
        entries.push(draw(&mut rng, &relevant));
    }
    for _ in 0..task.composition.other {
        entries.push(draw(&mut rng, &other));
    }
    if entries.is_empty() {
        entries.push(draw(&mut rng, &all));
    }
    entries.shuffle(&mut rng);

    let mut objects: Vec<ObjectInstance> = entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            let x = rng.gen_range(ws.min[0]..=ws.max[0]);
            let y = rng.gen_range(ws.min[1]..=ws.max[1]);
            ObjectInstance {
                object_id: format!("obj_{i}"),
                label: e.label,
                position: [x, y, ws.min[2]],
                tags: e.tags,
            }
        })
        .collect();

    let ee_position = uniform_point(&mut rng, &ws);
    let gripper_open = task.carried.is_none();
    if let Some(carried) = &task.carried {
        objects.push(ObjectInstance {
            object_id: "carried_0".into(),
            label: carried.clone(),
            position: ws.clamp(geom::add(ee_position, [0.0, 0.0, -0.02])),
            tags: ["carried".to_string()].into_iter().collect(),
        });
    }
    Ok(SceneState {
        ee_position,
        ee_orientation: geom::IDENTITY_QUAT,
        gripper_open,
        objects,
        time_index: 0,
    })
}

/// Uniform goal position for scene `seed`.
pub fn sample_goal(task: &TaskSpec, seed: u64) -> Vec3 {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2]));
    uniform_point(&mut rng, &task.workspace)
}

fn attachments(scene: &SceneState, grasp_radius: f64) -> Vec<(usize, Vec3)> {
    if scene.gripper_open {
        return Vec::new();
    }
    scene
        .objects
        .iter()
        .enumerate()
        .filter(|(_, o)| geom::distance(o.position, scene.ee_position) <= grasp_radius)
        .map(|(i, o)| (i, geom::sub(o.position, scene.ee_position)))
        .collect()
}

fn check_goal(goal: Vec3, cfg: &GeneratorConfig) -> Result<(), WorldError> {
    if !cfg.workspace.contains(goal) || goal.iter().any(|v| !v.is_finite()) {
        return Err(WorldError::OutOfBounds {
            what: "goal",
            point: goal,
        });
    }
    Ok(())
}

/// Visits the states of a perturbed trajectory in order, reusing one state
/// buffer.
fn walk_states(
    scene: &SceneState,
    goal: Vec3,
    n_steps: usize,
    perturbation: &Perturbation,
    cfg: &GeneratorConfig,
    mut visit: impl FnMut(&SceneState),
) -> Result<(), WorldError> {
    if n_steps < 1 {
        return Err(WorldError::InvalidArgument("n_steps must be >= 1".into()));
    }
    check_goal(goal, cfg)?;
    let start = scene.ee_position;
    let attached = attachments(scene, cfg.grasp_radius);
    let mut state = scene.clone();
    for t in 0..=n_steps {
        let s = t as f64 / n_steps as f64;
        let ee = if t == n_steps {
            goal
        } else if t == 0 {
            start
        } else {
            cfg.workspace.clamp(geom::add(
                geom::lerp(start, goal, s),
                perturbation.offset(s),
            ))
        };
        let tilt = if t == 0 || t == n_steps {
            0.0
        } else {
            perturbation.tilt_angle * (std::f64::consts::PI * s).sin()
        };
        state.ee_orientation = if tilt == 0.0 {
            scene.ee_orientation
        } else {
            let q = geom::quat_mul(
                scene.ee_orientation,
                geom::quat_from_axis_angle(perturbation.tilt_axis, tilt),
            );
            let n = geom::quat_norm(q);
            [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
        };
        state.ee_position = ee;
        state.time_index = scene.time_index + t as u64;
        for &(i, offset) in &attached {
            state.objects[i].position = geom::add(ee, offset);
        }
        visit(&state);
    }
    Ok(())
}

/// Straight-line trajectory from the scene's end-effector position to `goal`
/// with the perturbation applied on top. Positions are clamped to the
/// workspace; attached objects follow the end effector rigidly.
pub fn perturbed_trajectory(
    task_id: &str,
    scene: &SceneState,
    goal: Vec3,
    n_steps: usize,
    perturbation: &Perturbation,
    cfg: &GeneratorConfig,
) -> Result<Trajectory, WorldError> {
    let mut states = Vec::with_capacity(n_steps + 1);
    walk_states(scene, goal, n_steps, perturbation, cfg, |s| {
        states.push(s.clone())
    })?;
    Ok(Trajectory {
        task_id: task_id.to_string(),
        states,
    })
}

/// Linear interpolation from the scene's end-effector position to `goal` in
/// `n_steps` equal segments; the last state sits exactly at `goal`.
pub fn nominal_trajectory(
    task_id: &str,
    scene: &SceneState,
    goal: Vec3,
    n_steps: usize,
    cfg: &GeneratorConfig,
) -> Result<Trajectory, WorldError> {
    perturbed_trajectory(task_id, scene, goal, n_steps, &Perturbation::none(), cfg)
}

/// `n` candidates for one scene: index 0 is the nominal trajectory, the rest
/// are independently perturbed copies.
pub fn candidate_trajectories(
    task_id: &str,
    scene: &SceneState,
    goal: Vec3,
    cfg: &GeneratorConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, WorldError> {
    (0..n)
        .map(|j| candidate_trajectory(task_id, scene, goal, cfg, j, seed))
        .collect()
}

/// Candidate `index` of [`candidate_trajectories`], built on its own.
pub fn candidate_trajectory(
    task_id: &str,
    scene: &SceneState,
    goal: Vec3,
    cfg: &GeneratorConfig,
    index: usize,
    seed: u64,
) -> Result<Trajectory, WorldError> {
    let perturbation = candidate_perturbation(cfg, index, seed);
    perturbed_trajectory(task_id, scene, goal, cfg.n_steps, &perturbation, cfg)
}

fn candidate_perturbation(cfg: &GeneratorConfig, index: usize, seed: u64) -> Perturbation {
    if index == 0 {
        Perturbation::none()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[index as u64]));
        Perturbation::sample(&mut rng, cfg)
    }
}

/// Mean features of candidate `index` without materializing its states;
/// equal to `trajectory_features` of [`candidate_trajectory`].
pub fn candidate_features(
    scene: &SceneState,
    goal: Vec3,
    cfg: &GeneratorConfig,
    index: usize,
    seed: u64,
    specs: &[FeatureSpec],
) -> Result<FeatureVector, WorldError> {
    let perturbation = candidate_perturbation(cfg, index, seed);
    let mut acc = vec![0.0; specs.len()];
    let mut n = 0usize;
    walk_states(scene, goal, cfg.n_steps, &perturbation, cfg, |s| {
        accumulate_state_features(s, specs, &mut acc);
        n += 1;
    })?;
    let n = n as f64;
    Ok(FeatureVector(acc.into_iter().map(|a| a / n).collect()))
}

/// Best of `cfg.n_candidates` candidates under an arbitrary scorer. Ties go
/// to the lowest candidate index, so a constant scorer returns the nominal
/// trajectory.
pub fn preferred_trajectory_by<F>(
    task_id: &str,
    scene: &SceneState,
    goal: Vec3,
    cfg: &GeneratorConfig,
    seed: u64,
    mut score: F,
) -> Result<Trajectory, WorldError>
where
    F: FnMut(&Trajectory) -> Result<f64, WorldError>,
{
    if cfg.n_candidates < 1 {
        return Err(WorldError::InvalidArgument(
            "n_candidates must be >= 1".into(),
        ));
    }
    let mut best = candidate_trajectory(task_id, scene, goal, cfg, 0, seed)?;
    let mut best_score = score(&best)?;
    for j in 1..cfg.n_candidates {
        let c = candidate_trajectory(task_id, scene, goal, cfg, j, seed)?;
        let r = score(&c)?;
        if r > best_score {
            best = c;
            best_score = r;
        }
    }
    Ok(best)
}

/// Best-of-N demonstration under linear weights `theta_star` over `specs`.
pub fn preferred_trajectory(
    task_id: &str,
    scene: &SceneState,
    goal: Vec3,
    theta_star: &[f64],
    specs: &[FeatureSpec],
    cfg: &GeneratorConfig,
    seed: u64,
) -> Result<Trajectory, WorldError> {
    if theta_star.len() != specs.len() {
        return Err(WorldError::InvalidArgument(format!(
            "theta has {} entries for {} features",
            theta_star.len(),
            specs.len()
        )));
    }
    preferred_trajectory_by(task_id, scene, goal, cfg, seed, |t| {
        let phi = trajectory_features(t, specs).map_err(|e| WorldError::Features(e.to_string()))?;
        Ok(phi.dot(theta_star))
    })
}

/// Paired preferred / nominal demonstrations over `n_scenes` training scenes.
pub fn generate_dataset(
    task: &TaskSpec,
    n_scenes: usize,
    seed: u64,
    cfg: &GeneratorConfig,
) -> Result<Dataset, WorldError> {
    if n_scenes < 1 {
        return Err(WorldError::InvalidArgument("n_scenes must be >= 1".into()));
    }
    let specs = task.feature_specs();
    let theta = task.theta_star(&specs);
    let mut preferred = Vec::with_capacity(n_scenes);
    let mut nominal = Vec::with_capacity(n_scenes);
    for i in 0..n_scenes as u64 {
        let scene_seed = derive_seed(seed, &[i]);
        let scene = sample_scene(task, Split::Train, scene_seed)?;
        let goal = sample_goal(task, scene_seed);
        preferred.push(preferred_trajectory(
            &task.name,
            &scene,
            goal,
            &theta,
            &specs,
            cfg,
            derive_seed(scene_seed, &[3]),
        )?);
        nominal.push(nominal_trajectory(
            &task.name,
            &scene,
            goal,
            cfg.n_steps,
            cfg,
        )?);
    }
    Ok(Dataset { preferred, nominal })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::geom::IDENTITY_QUAT;

    fn scene_at(p: Vec3) -> SceneState {
        SceneState {
            ee_position: p,
            ee_orientation: IDENTITY_QUAT,
            gripper_open: true,
            objects: vec![],
            time_index: 0,
        }
    }

    #[test]
    fn nominal_interpolates_linearly() {
        let cfg = GeneratorConfig::default();
        let t = nominal_trajectory("t", &scene_at([0.0; 3]), [1.0, 0.0, 0.0], 4, &cfg).unwrap();
        let xs: Vec<f64> = t.states.iter().map(|s| s.ee_position[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(t.last().ee_position, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn degenerate_start_equals_goal() {
        let cfg = GeneratorConfig::default();
        let p = [0.3, 0.4, 0.1];
        let t = nominal_trajectory("t", &scene_at(p), p, 5, &cfg).unwrap();
        assert!(t.states.iter().all(|s| s.ee_position == p));
    }

    #[test]
    fn goal_out_of_bounds_is_rejected() {
        let cfg = GeneratorConfig::default();
        let err = nominal_trajectory("t", &scene_at([0.0; 3]), [2.0, 0.0, 0.0], 4, &cfg);
        assert!(matches!(err, Err(WorldError::OutOfBounds { .. })));
    }

    #[test]
    fn closed_gripper_carries_nearby_object() {
        let cfg = GeneratorConfig::default();
        let mut scene = scene_at([0.2, 0.2, 0.2]);
        scene.gripper_open = false;
        scene.objects = vec![
            ObjectInstance {
                object_id: "a".into(),
                label: "mug".into(),
                position: [0.2, 0.2, 0.18],
                tags: Default::default(),
            },
            ObjectInstance {
                object_id: "b".into(),
                label: "laptop".into(),
                position: [0.8, 0.8, 0.0],
                tags: Default::default(),
            },
        ];
        let t = nominal_trajectory("t", &scene, [0.6, 0.2, 0.2], 4, &cfg).unwrap();
        let last = t.last();
        assert!((last.objects[0].position[0] - 0.6).abs() < 1e-12);
        assert!((last.objects[0].position[2] - 0.18).abs() < 1e-12);
        assert_eq!(last.objects[1].position, [0.8, 0.8, 0.0]);
    }

    #[test]
    fn perturbation_keeps_endpoints_and_bounds() {
        let cfg = GeneratorConfig::default();
        let scene = scene_at([0.1, 0.9, 0.2]);
        let goal = [0.9, 0.1, 0.4];
        let cands = candidate_trajectories("t", &scene, goal, &cfg, 8, 5).unwrap();
        for c in &cands {
            c.validate().unwrap();
            assert_eq!(c.first().ee_position, scene.ee_position);
            assert_eq!(c.last().ee_position, goal);
            assert!(c
                .states
                .iter()
                .all(|s| cfg.workspace.contains(s.ee_position)));
        }
        assert_ne!(cands[1], cands[2]);
    }
}
