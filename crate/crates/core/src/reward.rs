//! Linear reward model, maximum-entropy IRL, and Boltzmann scoring.
//!
//! The MaxEnt partition function over the continuous trajectory space is
//! approximated by a fixed, pre-generated candidate set that contains every
//! demonstration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{trajectory_features, validate_specs, FeatureError, FeatureSpec};
use crate::world::{
    candidate_trajectories, derive_seed, Dataset, GeneratorConfig, Trajectory, WorldError,
};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("theta has {theta} entries but there are {specs} features")]
    DimensionMismatch { theta: usize, specs: usize },
    #[error("no demonstrations given")]
    EmptyDemos,
    #[error("no candidates given")]
    EmptyCandidates,
    #[error("demonstration {0} is not part of the candidate set")]
    DemoNotInCandidates(usize),
    #[error("loss became non-finite at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("non-finite reward for candidate {0}")]
    NonFiniteReward(usize),
    #[error("non-finite weight at index {0}")]
    NonFiniteTheta(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// `R(xi) = theta . phi(xi)` over a fixed feature list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub theta: Vec<f64>,
    pub specs: Vec<FeatureSpec>,
}

impl RewardModel {
    pub fn new(theta: Vec<f64>, specs: Vec<FeatureSpec>) -> Result<Self, RewardError> {
        if theta.len() != specs.len() {
            return Err(RewardError::DimensionMismatch {
                theta: theta.len(),
                specs: specs.len(),
            });
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(RewardError::NonFiniteTheta(i));
        }
        validate_specs(&specs)?;
        Ok(RewardModel { theta, specs })
    }

    pub fn zeros(specs: Vec<FeatureSpec>) -> Self {
        RewardModel {
            theta: vec![0.0; specs.len()],
            specs,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn score_features(&self, phi: &[f64]) -> f64 {
        self.theta.iter().zip(phi).map(|(a, b)| a * b).sum()
    }

    pub fn spec_names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    fn check(&self) -> Result<(), RewardError> {
        if self.theta.len() != self.specs.len() {
            return Err(RewardError::DimensionMismatch {
                theta: self.theta.len(),
                specs: self.specs.len(),
            });
        }
        Ok(())
    }
}

/// `theta . phi(traj)`.
pub fn trajectory_reward(model: &RewardModel, traj: &Trajectory) -> Result<f64, RewardError> {
    model.check()?;
    let phi = trajectory_features(traj, &model.specs)?;
    Ok(model.score_features(phi.as_slice()))
}

/// Numerically stable `log(sum(exp(x)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Value and gradient of the regularized MaxEnt objective.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxEntObjective {
    /// Mean negative log-likelihood of the demonstrations.
    pub nll: f64,
    /// `l2_reg / 2 * |theta|^2`.
    pub penalty: f64,
    /// Gradient of `nll + penalty`.
    pub grad: Vec<f64>,
}

impl MaxEntObjective {
    pub fn loss(&self) -> f64 {
        self.nll + self.penalty
    }
}

/// MaxEnt objective on precomputed feature vectors.
///
/// `nll = -(1/N) sum_demos [R(xi) - logsumexp_c R(c)]` and
/// `grad = E_p[phi] - mean_demos phi + l2_reg * theta`.
pub fn maxent_objective(
    theta: &[f64],
    demo_features: &[Vec<f64>],
    candidate_features: &[Vec<f64>],
    l2_reg: f64,
) -> MaxEntObjective {
    let d = theta.len();
    let score = |phi: &[f64]| -> f64 { theta.iter().zip(phi).map(|(a, b)| a * b).sum() };
    let cand_scores: Vec<f64> = candidate_features.iter().map(|p| score(p)).collect();
    let lse = log_sum_exp(&cand_scores);

    let n = demo_features.len() as f64;
    let demo_mean_reward = demo_features.iter().map(|p| score(p)).sum::<f64>() / n;
    let nll = lse - demo_mean_reward;

    let mut grad = vec![0.0; d];
    for (phi, s) in candidate_features.iter().zip(&cand_scores) {
        let p = (s - lse).exp();
        for (g, v) in grad.iter_mut().zip(phi) {
            *g += p * v;
        }
    }
    for phi in demo_features {
        for (g, v) in grad.iter_mut().zip(phi) {
            *g -= v / n;
        }
    }
    for (g, t) in grad.iter_mut().zip(theta) {
        *g += l2_reg * t;
    }
    let penalty = 0.5 * l2_reg * theta.iter().map(|t| t * t).sum::<f64>();
    MaxEntObjective { nll, penalty, grad }
}

fn features_of(trajs: &[Trajectory], specs: &[FeatureSpec]) -> Result<Vec<Vec<f64>>, RewardError> {
    trajs
        .iter()
        .map(|t| Ok(trajectory_features(t, specs)?.0))
        .collect()
}

fn check_membership(demos: &[Trajectory], candidates: &[Trajectory]) -> Result<(), RewardError> {
    if demos.is_empty() {
        return Err(RewardError::EmptyDemos);
    }
    if candidates.is_empty() {
        return Err(RewardError::EmptyCandidates);
    }
    for (i, d) in demos.iter().enumerate() {
        if !candidates.iter().any(|c| c == d) {
            return Err(RewardError::DemoNotInCandidates(i));
        }
    }
    Ok(())
}

/// MaxEnt negative log-likelihood and gradient for `model` on trajectories.
pub fn maxent_nll_and_grad(
    model: &RewardModel,
    demos: &[Trajectory],
    candidates: &[Trajectory],
    l2_reg: f64,
) -> Result<MaxEntObjective, RewardError> {
    model.check()?;
    check_membership(demos, candidates)?;
    let demo_features = features_of(demos, &model.specs)?;
    let cand_features = features_of(candidates, &model.specs)?;
    Ok(maxent_objective(
        &model.theta,
        &demo_features,
        &cand_features,
        l2_reg,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrlConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2_reg: f64,
    pub seed: u64,
    /// Perturbed trajectories added to the candidate set per scene.
    pub candidate_set_size: usize,
}

impl Default for IrlConfig {
    fn default() -> Self {
        IrlConfig {
            learning_rate: 0.1,
            iterations: 500,
            l2_reg: 1e-3,
            seed: 0,
            candidate_set_size: 64,
        }
    }
}

impl IrlConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(RewardError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if !(self.l2_reg >= 0.0 && self.l2_reg.is_finite()) {
            return Err(RewardError::InvalidConfig(
                "l2_reg must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// A trained model together with its training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedReward {
    pub model: RewardModel,
    pub config: IrlConfig,
    /// Regularized loss before each update, plus the final loss.
    pub loss_trace: Vec<f64>,
}

/// Plain gradient descent on the regularized MaxEnt loss from `theta = 0`.
pub fn train_irl(
    demos: &[Trajectory],
    candidates: &[Trajectory],
    specs: Vec<FeatureSpec>,
    config: &IrlConfig,
) -> Result<TrainedReward, RewardError> {
    config.validate()?;
    validate_specs(&specs)?;
    check_membership(demos, candidates)?;
    let demo_features = features_of(demos, &specs)?;
    let cand_features = features_of(candidates, &specs)?;

    let mut theta = vec![0.0; specs.len()];
    let mut loss_trace = Vec::with_capacity(config.iterations + 1);
    for it in 0..=config.iterations {
        let obj = maxent_objective(&theta, &demo_features, &cand_features, config.l2_reg);
        let loss = obj.loss();
        if !loss.is_finite() {
            return Err(RewardError::NonFiniteLoss(it));
        }
        loss_trace.push(loss);
        if it == config.iterations {
            break;
        }
        for (t, g) in theta.iter_mut().zip(&obj.grad) {
            *t -= config.learning_rate * g;
        }
    }
    Ok(TrainedReward {
        model: RewardModel { theta, specs },
        config: config.clone(),
        loss_trace,
    })
}

/// Candidate set for IRL: every demonstration, every nominal reference, and
/// `config.candidate_set_size` perturbed trajectories per scene.
pub fn irl_candidate_set(
    dataset: &Dataset,
    generator: &GeneratorConfig,
    config: &IrlConfig,
) -> Result<Vec<Trajectory>, RewardError> {
    let mut out = Vec::with_capacity(dataset.len() * (config.candidate_set_size + 2));
    out.extend(dataset.preferred.iter().cloned());
    out.extend(dataset.nominal.iter().cloned());
    for (i, demo) in dataset.preferred.iter().enumerate() {
        let scene = demo.first();
        let goal = demo.last().ee_position;
        // Index 0 would duplicate the nominal trajectory.
        let extra = candidate_trajectories(
            &demo.task_id,
            scene,
            goal,
            generator,
            config.candidate_set_size + 1,
            derive_seed(config.seed, &[0x1c, i as u64]),
        )?;
        out.extend(extra.into_iter().skip(1));
    }
    Ok(out)
}

/// `p_i ∝ exp(beta * r_i)`, max-subtracted.
pub fn boltzmann_from_rewards(rewards: &[f64], beta: f64) -> Result<Vec<f64>, RewardError> {
    if rewards.is_empty() {
        return Err(RewardError::EmptyCandidates);
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(RewardError::InvalidConfig("beta must be positive".into()));
    }
    if let Some(i) = rewards.iter().position(|r| !r.is_finite()) {
        return Err(RewardError::NonFiniteReward(i));
    }
    let m = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = rewards.iter().map(|r| (beta * (r - m)).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / z).collect())
}

/// Boltzmann distribution over candidates under the model's reward.
pub fn boltzmann(
    model: &RewardModel,
    candidates: &[Trajectory],
    beta: f64,
) -> Result<Vec<f64>, RewardError> {
    let rewards = candidates
        .iter()
        .map(|c| trajectory_reward(model, c))
        .collect::<Result<Vec<_>, _>>()?;
    boltzmann_from_rewards(&rewards, beta)
}
