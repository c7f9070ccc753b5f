use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{EvalOutput, EvalReport, MethodResult, PairRecord, WinRateSummary};
use super::{mean_stderr, pair_score, subset_metrics, EvalError, Preference};
use crate::align::{
    align_state, aligned_reward, calibration_samples, check_bound, embedding_align, lm_align,
    trajectory_kernels, AlignConfig, AlignMethod, AlignmentMap, BoundEvaluation, BoundReport,
    CalibrationSample, EmbeddingStore, ThresholdPolicy,
};
use crate::intent::{IntentEstimate, PromptSet};
use crate::lm::ChatBackend;
use crate::reward::{boltzmann_from_rewards, trajectory_reward, RewardModel};
use crate::world::{
    candidate_features, candidate_trajectory, derive_seed, geom, nominal_trajectory, sample_goal,
    sample_scene, GeneratorConfig, ObjectInstance, Perturbation, SceneState, Split, TaskSpec,
    Trajectory,
};

/// Where a method's alignment maps come from.
pub enum MethodSource<'a> {
    Lm {
        lm: &'a dyn ChatBackend,
        prompts: &'a PromptSet,
        /// `Some` conditions the alignment on an intent; `None` is the blind
        /// variant.
        intent: Option<&'a IntentEstimate>,
        config: AlignConfig,
    },
    Embedding {
        store: &'a EmbeddingStore,
        policy: ThresholdPolicy,
    },
    GroundTruth,
    AllDistractor,
}

pub struct MethodSpec<'a> {
    pub name: String,
    pub source: MethodSource<'a>,
}

impl MethodSpec<'_> {
    pub fn method(&self) -> AlignMethod {
        match &self.source {
            MethodSource::Lm {
                intent: Some(_), ..
            } => AlignMethod::Gift,
            MethodSource::Lm { intent: None, .. } => AlignMethod::LmNoIntent,
            MethodSource::Embedding { store, .. } => match store.space {
                crate::align::EmbeddingSpace::Vision => AlignMethod::VisionEmbedding,
                crate::align::EmbeddingSpace::Language => AlignMethod::LanguageEmbedding,
            },
            MethodSource::GroundTruth => AlignMethod::GroundTruth,
            MethodSource::AllDistractor => AlignMethod::AllDistractor,
        }
    }

    /// Map over `unseen` (plus the task's carried labels).
    pub fn build_map(&self, task: &TaskSpec, unseen: &[String]) -> Result<AlignmentMap, EvalError> {
        let seen = task.train_labels();
        let map = match &self.source {
            MethodSource::Lm {
                lm,
                prompts,
                intent,
                config,
            } => lm_align(*lm, prompts, &seen, unseen, *intent, config)?,
            MethodSource::Embedding { store, policy } => {
                embedding_align(store, &seen, unseen, *policy)?
            }
            MethodSource::GroundTruth => {
                let mut m = AlignmentMap::ground_truth(task);
                m.entries.retain(|k, _| unseen.contains(k));
                m
            }
            MethodSource::AllDistractor => AlignmentMap::all_distractor(unseen),
        };
        Ok(map.with_passthrough(task.passthrough_labels()))
    }
}

/// Granularity at which alignment maps are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapScope {
    /// One map per distinct scene label set (memoized).
    Scene,
    /// One map over the whole test catalog, reused for every scene.
    Catalog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Test labels placed in every selection scene, one trajectory each.
    pub items: Vec<String>,
    pub n_sets: usize,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_pairs: usize,
    pub seeds: Vec<u64>,
    pub tie_eps: f64,
    pub map_scope: MapScope,
    /// Overrides the task-derived generator settings.
    pub generator: Option<GeneratorConfig>,
    pub selection: Option<SelectionConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_pairs: 250,
            seeds: vec![0, 1, 2],
            tie_eps: 1e-9,
            map_scope: MapScope::Scene,
            generator: None,
            selection: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_pairs == 0 {
            return Err(EvalError::Config("n_pairs must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(EvalError::Config("seeds must be non-empty".into()));
        }
        if !(self.tie_eps >= 0.0 && self.tie_eps.is_finite()) {
            return Err(EvalError::InvalidTieEps);
        }
        Ok(())
    }

    pub fn generator_for(&self, task: &TaskSpec) -> GeneratorConfig {
        self.generator
            .clone()
            .unwrap_or_else(|| GeneratorConfig::for_task(task))
    }
}

/// The task's hidden reward `θ*` as a model.
pub fn ground_truth_model(task: &TaskSpec) -> Result<RewardModel, EvalError> {
    let specs = task.feature_specs();
    let theta = task.theta_star(&specs);
    Ok(RewardModel::new(theta, specs)?)
}

struct ScoredPair {
    xi_a: Trajectory,
    xi_b: Trajectory,
    truth: Preference,
    labels: Vec<String>,
}

const TRAIN_STREAM: u64 = 0x7a;
const TEST_STREAM: u64 = 0x7b;

/// One evaluation pair: the best of the scene's candidates under the
/// ground-truth reward against a different, randomly chosen candidate, in
/// random order. On test scenes candidates are scored after ground-truth
/// alignment of the scene.
fn make_pair(
    task: &TaskSpec,
    split: Split,
    seed: u64,
    index: usize,
    gen: &GeneratorConfig,
    gt_model: &RewardModel,
    gt_map: Option<&AlignmentMap>,
    tie_eps: f64,
) -> Result<ScoredPair, EvalError> {
    let stream = match split {
        Split::Train => TRAIN_STREAM,
        Split::Test => TEST_STREAM,
    };
    let scene_seed = derive_seed(seed, &[stream, index as u64]);
    let scene = sample_scene(task, split, scene_seed)?;
    let goal = sample_goal(task, scene_seed);
    let n = gen.n_candidates.max(2);
    let cand_seed = derive_seed(scene_seed, &[3]);
    // Alignment only relabels objects, so candidates built from the aligned
    // scene are exactly the aligned candidates.
    let scoring_scene = match gt_map {
        Some(map) => align_state(&scene, map)?,
        None => scene.clone(),
    };
    let scores = (0..n)
        .map(|j| {
            let phi = candidate_features(&scoring_scene, goal, gen, j, cand_seed, &gt_model.specs)?;
            Ok(gt_model.score_features(phi.as_slice()))
        })
        .collect::<Result<Vec<f64>, EvalError>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scene_seed, &[5]));
    let others: Vec<usize> = (0..n).filter(|&i| i != best).collect();
    let other = *others.choose(&mut rng).expect("at least two candidates");
    let mut truth = Preference::from_scores(scores[best], scores[other], tie_eps);
    let (mut a, mut b) = (best, other);
    if rng.gen_bool(0.5) {
        std::mem::swap(&mut a, &mut b);
        truth = truth.swapped();
    }
    let mut labels: Vec<String> = scene.labels().into_iter().collect();
    let passthrough = task.passthrough_labels();
    labels.retain(|l| !passthrough.contains(l));
    Ok(ScoredPair {
        xi_a: candidate_trajectory(&task.name, &scene, goal, gen, a, cand_seed)?,
        xi_b: candidate_trajectory(&task.name, &scene, goal, gen, b, cand_seed)?,
        truth,
        labels,
    })
}

struct MapCache<'m, 'a> {
    method: &'m MethodSpec<'a>,
    scope: MapScope,
    maps: BTreeMap<BTreeSet<String>, AlignmentMap>,
}

impl<'m, 'a> MapCache<'m, 'a> {
    fn get(&mut self, task: &TaskSpec, labels: &[String]) -> Result<&AlignmentMap, EvalError> {
        let key: BTreeSet<String> = match self.scope {
            MapScope::Scene => labels.iter().cloned().collect(),
            MapScope::Catalog => task.test_labels().into_iter().collect(),
        };
        if !self.maps.contains_key(&key) {
            let unseen: Vec<String> = key.iter().cloned().collect();
            let map = self.method.build_map(task, &unseen)?;
            self.maps.insert(key.clone(), map);
        }
        Ok(&self.maps[&key])
    }
}

fn preference_name(p: Preference) -> &'static str {
    match p {
        Preference::A => "a",
        Preference::B => "b",
        Preference::Tie => "tie",
    }
}

fn summarize(per_seed_scores: &[Vec<f64>]) -> WinRateSummary {
    let all: Vec<f64> = per_seed_scores.iter().flatten().copied().collect();
    let (rate, stderr) = mean_stderr(&all);
    WinRateSummary {
        rate,
        stderr,
        per_seed: per_seed_scores.iter().map(|s| mean_stderr(s).0).collect(),
        n_pairs: all.len(),
    }
}

/// Scores every method on fresh test-scene pairs (and the learned model on
/// training-scene pairs) for each seed, then computes alignment metrics and
/// optional Boltzmann selection tables.
pub fn run_experiment(
    task: &TaskSpec,
    model: &RewardModel,
    methods: &[MethodSpec<'_>],
    cfg: &ExperimentConfig,
) -> Result<EvalOutput, EvalError> {
    cfg.validate()?;
    if methods.is_empty() {
        return Err(EvalError::Config("no methods to evaluate".into()));
    }
    let gen = cfg.generator_for(task);
    let gt_model = ground_truth_model(task)?;
    let gt_map = AlignmentMap::ground_truth(task);

    let mut records = Vec::new();
    let mut in_dist: Vec<Vec<f64>> = Vec::new();
    let mut per_method: Vec<Vec<Vec<f64>>> = vec![Vec::new(); methods.len()];
    let mut caches: Vec<MapCache> = methods
        .iter()
        .map(|m| MapCache {
            method: m,
            scope: cfg.map_scope,
            maps: BTreeMap::new(),
        })
        .collect();

    for &seed in &cfg.seeds {
        let mut scores = Vec::with_capacity(cfg.n_pairs);
        for i in 0..cfg.n_pairs {
            let p = make_pair(
                task,
                Split::Train,
                seed,
                i,
                &gen,
                &gt_model,
                None,
                cfg.tie_eps,
            )?;
            let a = trajectory_reward(model, &p.xi_a)?;
            let b = trajectory_reward(model, &p.xi_b)?;
            let predicted = Preference::from_scores(a, b, cfg.tie_eps);
            let s = pair_score(predicted, p.truth);
            scores.push(s);
            records.push(PairRecord {
                seed,
                index: i,
                split: "train".into(),
                method: "in_distribution".into(),
                score_a: a,
                score_b: b,
                truth: preference_name(p.truth).into(),
                predicted: preference_name(predicted).into(),
                pair_score: s,
            });
        }
        in_dist.push(scores);

        let mut seed_scores: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.n_pairs); methods.len()];
        for i in 0..cfg.n_pairs {
            let p = make_pair(
                task,
                Split::Test,
                seed,
                i,
                &gen,
                &gt_model,
                Some(&gt_map),
                cfg.tie_eps,
            )?;
            for (k, cache) in caches.iter_mut().enumerate() {
                let map = cache.get(task, &p.labels)?;
                let a = aligned_reward(model, &p.xi_a, map)?;
                let b = aligned_reward(model, &p.xi_b, map)?;
                let predicted = Preference::from_scores(a, b, cfg.tie_eps);
                let s = pair_score(predicted, p.truth);
                seed_scores[k].push(s);
                records.push(PairRecord {
                    seed,
                    index: i,
                    split: "test".into(),
                    method: methods[k].name.clone(),
                    score_a: a,
                    score_b: b,
                    truth: preference_name(p.truth).into(),
                    predicted: preference_name(predicted).into(),
                    pair_score: s,
                });
            }
        }
        for (k, s) in seed_scores.into_iter().enumerate() {
            per_method[k].push(s);
        }
    }

    let test_labels = task.test_labels();
    let mut results = Vec::with_capacity(methods.len());
    for (k, m) in methods.iter().enumerate() {
        let full = caches[k].get(task, &test_labels)?.clone();
        results.push(MethodResult {
            name: m.name.clone(),
            method: m.method(),
            win_rate: summarize(&per_method[k]),
            subsets: subset_metrics(&full, task)?,
            map: full,
        });
    }

    let mut boltzmann = Vec::new();
    if let Some(sel) = &cfg.selection {
        let sets = selection_sets(task, &sel.items, sel.n_sets, cfg.seeds[0], &gen)?;
        let mut maps = Vec::with_capacity(methods.len());
        for cache in caches.iter_mut() {
            maps.push((
                cache.method.name.clone(),
                cache.get(task, &sel.items)?.clone(),
            ));
        }
        boltzmann = candidate_selection(model, &maps, &sets, sel.beta)?;
    }

    Ok(EvalOutput {
        report: EvalReport {
            task: task.name.clone(),
            n_pairs: cfg.n_pairs,
            seeds: cfg.seeds.clone(),
            tie_eps: cfg.tie_eps,
            in_distribution: summarize(&in_dist),
            methods: results,
            boltzmann,
            config: serde_json::to_value(cfg).map_err(|e| EvalError::Config(e.to_string()))?,
        },
        pairs: records,
    })
}

/// A selection scene with one reaching trajectory per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSet {
    pub items: Vec<String>,
    pub trajectories: Vec<Trajectory>,
}

/// `n_sets` scenes containing exactly `items`, each with one nominal
/// trajectory from the end effector to every item.
pub fn selection_sets(
    task: &TaskSpec,
    items: &[String],
    n_sets: usize,
    seed: u64,
    gen: &GeneratorConfig,
) -> Result<Vec<SelectionSet>, EvalError> {
    if items.len() < 2 {
        return Err(EvalError::Config(
            "selection needs at least two items".into(),
        ));
    }
    let known: BTreeSet<String> = task.test_labels().into_iter().collect();
    if let Some(bad) = items.iter().find(|i| !known.contains(*i)) {
        return Err(EvalError::Config(format!(
            "selection item `{bad}` is not a test label"
        )));
    }
    let ws = task.workspace;
    (0..n_sets)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5e, s as u64]));
            let mut objects: Vec<ObjectInstance> = items
                .iter()
                .enumerate()
                .map(|(i, label)| ObjectInstance {
                    object_id: format!("obj_{i}"),
                    label: label.clone(),
                    position: [
                        rng.gen_range(ws.min[0]..=ws.max[0]),
                        rng.gen_range(ws.min[1]..=ws.max[1]),
                        ws.min[2],
                    ],
                    tags: task
                        .test_catalog
                        .iter()
                        .find(|e| &e.label == label)
                        .map(|e| e.tags.clone())
                        .unwrap_or_default(),
                })
                .collect();
            let ee = [
                rng.gen_range(ws.min[0]..=ws.max[0]),
                rng.gen_range(ws.min[1]..=ws.max[1]),
                rng.gen_range(ws.min[2]..=ws.max[2]),
            ];
            let goals: Vec<_> = objects.iter().map(|o| o.position).collect();
            if let Some(c) = &task.carried {
                objects.push(ObjectInstance {
                    object_id: "carried_0".into(),
                    label: c.clone(),
                    position: ws.clamp(geom::add(ee, [0.0, 0.0, -0.02])),
                    tags: ["carried".to_string()].into_iter().collect(),
                });
            }
            let scene = SceneState {
                ee_position: ee,
                ee_orientation: geom::IDENTITY_QUAT,
                gripper_open: task.carried.is_none(),
                objects,
                time_index: 0,
            };
            let trajectories = goals
                .into_iter()
                .map(|g| nominal_trajectory(&task.name, &scene, g, gen.n_steps, gen))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SelectionSet {
                items: items.to_vec(),
                trajectories,
            })
        })
        .collect()
}

/// Mean Boltzmann mass per item (with standard error over sets).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoltzmannTable {
    pub method: String,
    pub items: Vec<String>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_sets: usize,
}

pub fn candidate_selection(
    model: &RewardModel,
    maps: &[(String, AlignmentMap)],
    sets: &[SelectionSet],
    beta: f64,
) -> Result<Vec<BoltzmannTable>, EvalError> {
    let first = sets
        .first()
        .ok_or_else(|| EvalError::Config("no selection sets".into()))?;
    if sets
        .iter()
        .any(|s| s.trajectories.len() < 2 || s.items != first.items)
    {
        return Err(EvalError::Config(
            "selection sets need the same items and at least two trajectories".into(),
        ));
    }
    maps.iter()
        .map(|(name, map)| {
            let mut per_item: Vec<Vec<f64>> =
                vec![Vec::with_capacity(sets.len()); first.items.len()];
            for set in sets {
                let rewards = set
                    .trajectories
                    .iter()
                    .map(|t| aligned_reward(model, t, map))
                    .collect::<Result<Vec<_>, _>>()?;
                for (slot, p) in per_item
                    .iter_mut()
                    .zip(boltzmann_from_rewards(&rewards, beta)?)
                {
                    slot.push(p);
                }
            }
            let stats: Vec<(f64, f64)> = per_item.iter().map(|v| mean_stderr(v)).collect();
            Ok(BoltzmannTable {
                method: name.clone(),
                items: first.items.clone(),
                mean: stats.iter().map(|s| s.0).collect(),
                stderr: stats.iter().map(|s| s.1).collect(),
                n_sets: sets.len(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundExperiment {
    /// Evaluation set equal to the calibration set.
    pub self_check: BoundReport,
    /// Held-out trajectories from fresh test scenes.
    pub held_out: BoundReport,
}

/// Calibrates `L̂` on `n_calibration` test-scene states and checks the bound
/// on `n_evaluation` held-out trajectories, comparing `method` against the
/// ground-truth binding of test labels.
pub fn bound_experiment(
    task: &TaskSpec,
    model: &RewardModel,
    method: &AlignmentMap,
    language: &EmbeddingStore,
    n_calibration: usize,
    n_evaluation: usize,
    seed: u64,
    gen: &GeneratorConfig,
) -> Result<BoundExperiment, EvalError> {
    let reference = AlignmentMap::ground_truth(task);
    let mut states = Vec::with_capacity(n_calibration);
    for i in 0..n_calibration {
        let scene_seed = derive_seed(seed, &[0xca, i as u64]);
        let scene = sample_scene(task, Split::Test, scene_seed)?;
        let goal = sample_goal(task, scene_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scene_seed, &[1]));
        let pert = Perturbation::sample(&mut rng, gen);
        let traj =
            crate::world::perturbed_trajectory(&task.name, &scene, goal, gen.n_steps, &pert, gen)?;
        let t = rng.gen_range(0..traj.states.len());
        states.push(traj.states[t].clone());
    }
    let calibration: Vec<CalibrationSample> =
        calibration_samples(model, language, &states, method, &reference)?;
    let self_eval: Vec<BoundEvaluation> = states
        .iter()
        .zip(&calibration)
        .map(|(s, c)| {
            let one = Trajectory {
                task_id: task.name.clone(),
                states: vec![s.clone()],
            };
            let score = |m: &AlignmentMap| -> Result<f64, EvalError> {
                let aligned = crate::align::align_trajectory(&one, m)?;
                let phi = crate::features::state_features(&aligned.states[0], &model.specs);
                Ok(model.score_features(&phi.0))
            };
            Ok(BoundEvaluation {
                aligned: score(method)?,
                reference: score(&reference)?,
                ks: vec![c.k],
            })
        })
        .collect::<Result<_, EvalError>>()?;
    let mut held_out = Vec::with_capacity(n_evaluation);
    for i in 0..n_evaluation {
        let scene_seed = derive_seed(seed, &[0xe7, i as u64]);
        let scene = sample_scene(task, Split::Test, scene_seed)?;
        let goal = sample_goal(task, scene_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scene_seed, &[1]));
        let pert = Perturbation::sample(&mut rng, gen);
        let traj =
            crate::world::perturbed_trajectory(&task.name, &scene, goal, gen.n_steps, &pert, gen)?;
        held_out.push(BoundEvaluation {
            aligned: aligned_reward(model, &traj, method)?,
            reference: aligned_reward(model, &traj, &reference)?,
            ks: trajectory_kernels(language, &traj, method, &reference)?,
        });
    }
    Ok(BoundExperiment {
        self_check: check_bound(&calibration, &self_eval)?,
        held_out: check_bound(&calibration, &held_out)?,
    })
}
