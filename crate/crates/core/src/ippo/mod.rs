//! Independent PPO over categorical action heads.
//!
//! Every agent owns an actor network (one categorical head per action
//! dimension), a scalar value network of the same trunk shape, and optimizer
//! state. Agents never share parameters or gradients: an update consumes only
//! that agent's own trajectories.
//!
//! The update is the clipped surrogate objective with a value regression term
//! and an entropy bonus, differentiated by hand through [`nn::Mlp`]. The loss
//! is exposed both as a pure function ([`ppo_loss`]) and with its analytic
//! gradient ([`ppo_loss_and_grad`]) so tests can check the gradient against
//! central finite differences.

pub mod adam;
pub mod nn;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{EnvConfig, Offer};
use crate::scalar::Scalar;

pub use adam::AdamState;
pub use nn::{Mlp, MlpCache, MlpGrads};

/// Discrete bins for quantity and allocation fractions: 0.0, 0.1, ..., 1.0.
pub const FRACTION_BINS: usize = 11;

/// Hidden trunk shape shared by actor and value networks.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

const ACTOR_OUTPUT_GAIN: f64 = 0.01;
const CRITIC_OUTPUT_GAIN: f64 = 0.1;

/// Map a fraction bin index to its fraction in `[0, 1]`.
pub fn bin_fraction(bin: usize) -> f64 {
    bin as f64 / (FRACTION_BINS - 1) as f64
}

#[derive(Debug, Error)]
pub enum IppoError {
    #[error("observation has {actual} features, policy expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite value in {context}; aborting (training diverged)")]
    NonFinite { context: String },
    #[error("empty training batch")]
    EmptyBatch,
    #[error("inconsistent batch: {0}")]
    InconsistentBatch(String),
    #[error("invalid ppo hyperparameters: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Seller,
    Buyer,
}

/// PPO update hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoHyperparams {
    pub clip_epsilon: f64,
    pub learning_rate: f64,
    pub epochs_per_update: usize,
    pub minibatch_size: usize,
    /// Scored episodes collected between consecutive updates.
    pub batch_episodes: usize,
    pub value_loss_coef: f64,
    pub entropy_coef: f64,
    /// Discount factor. Episodes here hold a single decision per agent, so it
    /// is inert, but it is kept configurable for multi-round extensions.
    pub gamma: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoHyperparams {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            learning_rate: 3e-4,
            epochs_per_update: 4,
            minibatch_size: 64,
            batch_episodes: 128,
            value_loss_coef: 0.5,
            entropy_coef: 0.01,
            gamma: 0.95,
            normalize_advantages: true,
        }
    }
}

impl PpoHyperparams {
    pub fn validate(&self) -> Result<(), IppoError> {
        let err = |msg: String| Err(IppoError::InvalidConfig(msg));
        if !self.clip_epsilon.is_finite() || self.clip_epsilon <= 0.0 {
            return err("clip_epsilon must be > 0".into());
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return err("learning_rate must be > 0".into());
        }
        if self.epochs_per_update < 1 || self.minibatch_size < 1 || self.batch_episodes < 1 {
            return err("epochs, minibatch size and batch episodes must be >= 1".into());
        }
        if self.value_loss_coef < 0.0 || self.entropy_coef < 0.0 {
            return err("loss coefficients must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return err("gamma must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// One agent's parameters: actor, value head, and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<F: Scalar> {
    pub role: AgentRole,
    /// Category count per action head, in head order.
    pub head_sizes: Vec<usize>,
    pub actor: Mlp<F>,
    pub critic: Mlp<F>,
    pub optimizer: AdamState<F>,
}

impl<F: Scalar> PolicyParams<F> {
    /// Deterministic construction from a seed with the default trunk shape.
    pub fn new(role: AgentRole, obs_dim: usize, head_sizes: Vec<usize>, seed: u64) -> Self {
        Self::with_hidden(role, obs_dim, head_sizes, &DEFAULT_HIDDEN, seed)
    }

    /// Construction with an explicit hidden trunk (small nets for tests).
    pub fn with_hidden(
        role: AgentRole,
        obs_dim: usize,
        head_sizes: Vec<usize>,
        hidden: &[usize],
        seed: u64,
    ) -> Self {
        assert!(obs_dim > 0, "observation dimension must be positive");
        assert!(
            !head_sizes.is_empty() && head_sizes.iter().all(|&h| h >= 1),
            "every action head needs at least one category"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits_dim: usize = head_sizes.iter().sum();
        let mut actor_dims = vec![obs_dim];
        actor_dims.extend_from_slice(hidden);
        actor_dims.push(logits_dim);
        let mut critic_dims = vec![obs_dim];
        critic_dims.extend_from_slice(hidden);
        critic_dims.push(1);
        let actor = Mlp::orthogonal(&actor_dims, ACTOR_OUTPUT_GAIN, &mut rng);
        let critic = Mlp::orthogonal(&critic_dims, CRITIC_OUTPUT_GAIN, &mut rng);
        let optimizer = AdamState::new(actor.param_count() + critic.param_count());
        Self {
            role,
            head_sizes,
            actor,
            critic,
            optimizer,
        }
    }

    /// Seller policy for a market config: a price head over the admissible
    /// integer prices and a quantity-fraction head.
    pub fn for_seller(cfg: &EnvConfig, seed: u64) -> Self {
        Self::new(
            AgentRole::Seller,
            cfg.seller_obs_len(),
            vec![cfg.n_prices(), FRACTION_BINS],
            seed,
        )
    }

    /// Buyer policy for a market config: one fraction head per seller.
    pub fn for_buyer(cfg: &EnvConfig, seed: u64) -> Self {
        Self::new(
            AgentRole::Buyer,
            cfg.buyer_obs_len(),
            vec![FRACTION_BINS; cfg.n_sellers],
            seed,
        )
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn param_count(&self) -> usize {
        self.actor.param_count() + self.critic.param_count()
    }

    /// All parameters, actor first then critic, in the network flat order.
    pub fn flat_params(&self) -> Vec<F> {
        let mut flat = Vec::with_capacity(self.param_count());
        self.actor.extend_flat(&mut flat);
        self.critic.extend_flat(&mut flat);
        flat
    }

    pub fn set_flat_params(&mut self, flat: &[F]) {
        assert_eq!(flat.len(), self.param_count());
        let used = self.actor.load_flat(flat);
        self.critic.load_flat(&flat[used..]);
    }
}

/// A sampled (or greedy) action with its exact log-probability and the value
/// estimate at the observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample<F: Scalar> {
    /// Selected category per head, in head order.
    pub head_choices: Vec<usize>,
    pub log_prob: F,
    pub value: F,
}

impl<F: Scalar> ActionSample<F> {
    /// Interpret a seller sample: price category plus quantity fraction of
    /// current inventory, rounded to whole units.
    pub fn to_offer(&self, price_min: u32, inventory: u32) -> Offer {
        let price = price_min + self.head_choices[0] as u32;
        let quantity = (bin_fraction(self.head_choices[1]) * f64::from(inventory)).round() as u32;
        Offer { price, quantity }
    }

    /// Interpret a buyer sample: one desired demand fraction per seller.
    pub fn to_fractions(&self) -> Vec<f64> {
        self.head_choices.iter().map(|&b| bin_fraction(b)).collect()
    }
}

fn log_softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let sum_exp = logits
        .iter()
        .map(|&z| (z - max).exp())
        .fold(F::zero(), |a, b| a + b);
    let log_z = max + sum_exp.ln();
    logits.iter().map(|&z| z - log_z).collect()
}

fn check_finite<F: Scalar>(values: &[F], context: &str) -> Result<(), IppoError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(IppoError::NonFinite {
            context: context.to_string(),
        });
    }
    Ok(())
}

fn check_obs<F: Scalar>(policy: &PolicyParams<F>, observation: &[F]) -> Result<(), IppoError> {
    if observation.len() != policy.obs_dim() {
        return Err(IppoError::DimensionMismatch {
            expected: policy.obs_dim(),
            actual: observation.len(),
        });
    }
    Ok(())
}

/// Sample an action from each categorical head.
pub fn act<F: Scalar>(
    policy: &PolicyParams<F>,
    observation: &[F],
    rng: &mut impl Rng,
) -> Result<ActionSample<F>, IppoError> {
    check_obs(policy, observation)?;
    let logits = policy.actor.forward(observation);
    check_finite(&logits, "actor output")?;
    let mut head_choices = Vec::with_capacity(policy.head_sizes.len());
    let mut log_prob = F::zero();
    let mut offset = 0;
    for &size in &policy.head_sizes {
        let lsm = log_softmax(&logits[offset..offset + size]);
        let draw: f64 = rng.random();
        let mut cumulative = 0.0;
        let mut choice = size - 1;
        for (k, lp) in lsm.iter().enumerate() {
            cumulative += lp.exp().to_f64().expect("probability fits f64");
            if draw < cumulative {
                choice = k;
                break;
            }
        }
        log_prob += lsm[choice];
        head_choices.push(choice);
        offset += size;
    }
    let value = policy.critic.forward(observation)[0];
    check_finite(&[value], "value output")?;
    Ok(ActionSample {
        head_choices,
        log_prob,
        value,
    })
}

/// Greedy action: the argmax of every head, no randomness.
pub fn evaluate_policy<F: Scalar>(
    policy: &PolicyParams<F>,
    observation: &[F],
) -> Result<ActionSample<F>, IppoError> {
    check_obs(policy, observation)?;
    let logits = policy.actor.forward(observation);
    check_finite(&logits, "actor output")?;
    let mut head_choices = Vec::with_capacity(policy.head_sizes.len());
    let mut log_prob = F::zero();
    let mut offset = 0;
    for &size in &policy.head_sizes {
        let lsm = log_softmax(&logits[offset..offset + size]);
        let choice = lsm
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite log-probs"))
            .map(|(k, _)| k)
            .expect("non-empty head");
        log_prob += lsm[choice];
        head_choices.push(choice);
        offset += size;
    }
    let value = policy.critic.forward(observation)[0];
    check_finite(&[value], "value output")?;
    Ok(ActionSample {
        head_choices,
        log_prob,
        value,
    })
}

/// One agent's rollout data for a PPO update. Only episodes with a scored
/// critic verdict may be pushed here.
#[derive(Debug, Clone, Default)]
pub struct TrainBatch<F: Scalar> {
    pub observations: Vec<Vec<F>>,
    pub head_choices: Vec<Vec<usize>>,
    pub log_probs_old: Vec<F>,
    pub returns: Vec<F>,
    pub values_old: Vec<F>,
}

impl<F: Scalar> TrainBatch<F> {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn push(&mut self, observation: Vec<F>, sample: &ActionSample<F>, shaped_return: F) {
        self.observations.push(observation);
        self.head_choices.push(sample.head_choices.clone());
        self.log_probs_old.push(sample.log_prob);
        self.returns.push(shaped_return);
        self.values_old.push(sample.value);
    }

    pub fn clear(&mut self) {
        self.observations.clear();
        self.head_choices.clear();
        self.log_probs_old.clear();
        self.returns.clear();
        self.values_old.clear();
    }

    fn validate(&self, policy: &PolicyParams<F>) -> Result<(), IppoError> {
        if self.is_empty() {
            return Err(IppoError::EmptyBatch);
        }
        let n = self.len();
        if self.observations.len() != n
            || self.head_choices.len() != n
            || self.log_probs_old.len() != n
            || self.values_old.len() != n
        {
            return Err(IppoError::InconsistentBatch(
                "per-sample lists have differing lengths".into(),
            ));
        }
        for obs in &self.observations {
            if obs.len() != policy.obs_dim() {
                return Err(IppoError::InconsistentBatch(format!(
                    "observation has {} features, policy expects {}",
                    obs.len(),
                    policy.obs_dim()
                )));
            }
        }
        for choices in &self.head_choices {
            if choices.len() != policy.head_sizes.len()
                || choices
                    .iter()
                    .zip(&policy.head_sizes)
                    .any(|(&c, &size)| c >= size)
            {
                return Err(IppoError::InconsistentBatch(
                    "head choices do not match policy heads".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Single-decision advantages: shaped return minus the stored value
/// estimate, optionally standardized over the batch.
pub fn advantages<F: Scalar>(batch: &TrainBatch<F>, hp: &PpoHyperparams) -> Vec<F> {
    let mut adv: Vec<F> = batch
        .returns
        .iter()
        .zip(&batch.values_old)
        .map(|(&r, &v)| r - v)
        .collect();
    if hp.normalize_advantages && adv.len() > 1 {
        let n = F::of_usize(adv.len());
        let mean = adv.iter().fold(F::zero(), |a, &b| a + b) / n;
        let var = adv
            .iter()
            .fold(F::zero(), |a, &b| a + (b - mean) * (b - mean))
            / n;
        let denom = var.sqrt() + F::of_f64(1e-8);
        for a in &mut adv {
            *a = (*a - mean) / denom;
        }
    }
    adv
}

/// Loss components of one (mini)batch, all means over its samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<F: Scalar> {
    /// Negated clipped surrogate.
    pub policy_loss: F,
    /// Mean squared value error (before its coefficient).
    pub value_loss: F,
    /// Mean summed head entropy.
    pub entropy: F,
    /// Fraction of samples whose ratio left the clip band.
    pub clip_fraction: F,
    /// `policy + c_v * value - c_e * entropy`.
    pub total: F,
}

fn batch_loss<F: Scalar>(
    policy: &PolicyParams<F>,
    batch: &TrainBatch<F>,
    indices: &[usize],
    advantages: &[F],
    hp: &PpoHyperparams,
    mut grads: Option<(&mut MlpGrads<F>, &mut MlpGrads<F>)>,
) -> Result<LossBreakdown<F>, IppoError> {
    if indices.is_empty() {
        return Err(IppoError::EmptyBatch);
    }
    let n = F::of_usize(indices.len());
    let inv_n = F::one() / n;
    let clip = F::of_f64(hp.clip_epsilon);
    let value_coef = F::of_f64(hp.value_loss_coef);
    let entropy_coef = F::of_f64(hp.entropy_coef);
    let two = F::of_f64(2.0);

    let mut policy_sum = F::zero();
    let mut value_sum = F::zero();
    let mut entropy_sum = F::zero();
    let mut clipped = 0usize;

    for &idx in indices {
        let obs = &batch.observations[idx];
        let advantage = advantages[idx];
        let actor_cache = policy.actor.forward_cached(obs);
        let logits = actor_cache.output();

        // Per-head log-softmax; the joint log-prob is their sum.
        let mut log_prob_new = F::zero();
        let mut sample_entropy = F::zero();
        let mut head_lsm: Vec<Vec<F>> = Vec::with_capacity(policy.head_sizes.len());
        let mut offset = 0;
        for (h, &size) in policy.head_sizes.iter().enumerate() {
            let lsm = log_softmax(&logits[offset..offset + size]);
            let choice = batch.head_choices[idx][h];
            log_prob_new += lsm[choice];
            let head_entropy = lsm
                .iter()
                .fold(F::zero(), |acc, &lp| acc - lp.exp() * lp);
            sample_entropy += head_entropy;
            head_lsm.push(lsm);
            offset += size;
        }

        let ratio = (log_prob_new - batch.log_probs_old[idx]).exp();
        let surrogate_unclipped = ratio * advantage;
        let clipped_ratio = ratio.max(F::one() - clip).min(F::one() + clip);
        let surrogate_clipped = clipped_ratio * advantage;
        let surrogate = surrogate_unclipped.min(surrogate_clipped);
        policy_sum -= surrogate;
        if (ratio - F::one()).abs() > clip {
            clipped += 1;
        }
        entropy_sum += sample_entropy;

        let critic_cache = policy.critic.forward_cached(obs);
        let value = critic_cache.output()[0];
        let value_error = value - batch.returns[idx];
        value_sum += value_error * value_error;

        if let Some((actor_grads, critic_grads)) = grads.as_mut() {
            // Policy-loss gradient flows only through the unclipped branch.
            let d_log_prob = if surrogate_unclipped <= surrogate_clipped {
                -advantage * ratio * inv_n
            } else {
                F::zero()
            };
            let mut d_logits = vec![F::zero(); logits.len()];
            let mut offset = 0;
            for (h, &size) in policy.head_sizes.iter().enumerate() {
                let lsm = &head_lsm[h];
                let choice = batch.head_choices[idx][h];
                let head_entropy = lsm
                    .iter()
                    .fold(F::zero(), |acc, &lp| acc - lp.exp() * lp);
                for k in 0..size {
                    let p = lsm[k].exp();
                    let indicator = if k == choice { F::one() } else { F::zero() };
                    let from_policy = d_log_prob * (indicator - p);
                    // d(-c_e * H)/dz = c_e * p * (log p + H).
                    let from_entropy = entropy_coef * inv_n * p * (lsm[k] + head_entropy);
                    d_logits[offset + k] = from_policy + from_entropy;
                }
                offset += size;
            }
            policy.actor.backward(&actor_cache, &d_logits, actor_grads);
            let d_value = value_coef * two * value_error * inv_n;
            policy.critic.backward(&critic_cache, &[d_value], critic_grads);
        }
    }

    let policy_loss = policy_sum * inv_n;
    let value_loss = value_sum * inv_n;
    let entropy = entropy_sum * inv_n;
    let total = policy_loss + value_coef * value_loss - entropy_coef * entropy;
    if !total.is_finite() {
        return Err(IppoError::NonFinite {
            context: "loss".into(),
        });
    }
    Ok(LossBreakdown {
        policy_loss,
        value_loss,
        entropy,
        clip_fraction: F::of_usize(clipped) * inv_n,
        total,
    })
}

/// Pure loss over the given sample indices (no gradients). This is the
/// function the finite-difference gradient tests perturb.
pub fn ppo_loss<F: Scalar>(
    policy: &PolicyParams<F>,
    batch: &TrainBatch<F>,
    indices: &[usize],
    advantages: &[F],
    hp: &PpoHyperparams,
) -> Result<LossBreakdown<F>, IppoError> {
    batch_loss(policy, batch, indices, advantages, hp, None)
}

/// Loss plus its analytic gradient, flattened actor-then-critic in the same
/// order as [`PolicyParams::flat_params`].
pub fn ppo_loss_and_grad<F: Scalar>(
    policy: &PolicyParams<F>,
    batch: &TrainBatch<F>,
    indices: &[usize],
    advantages: &[F],
    hp: &PpoHyperparams,
) -> Result<(LossBreakdown<F>, Vec<F>), IppoError> {
    let mut actor_grads = MlpGrads::zeros_like(&policy.actor);
    let mut critic_grads = MlpGrads::zeros_like(&policy.critic);
    let breakdown = batch_loss(
        policy,
        batch,
        indices,
        advantages,
        hp,
        Some((&mut actor_grads, &mut critic_grads)),
    )?;
    let mut flat = Vec::with_capacity(policy.param_count());
    actor_grads.extend_flat(&mut flat);
    critic_grads.extend_flat(&mut flat);
    Ok((breakdown, flat))
}

/// Statistics from one PPO update, averaged over its minibatch steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats<F: Scalar> {
    pub policy_loss: F,
    pub value_loss: F,
    pub entropy: F,
    pub clip_fraction: F,
    pub minibatches: usize,
    pub samples: usize,
}

/// Update one agent's policy from its own batch: advantages once per batch,
/// then `epochs_per_update` shuffled passes of minibatch Adam steps.
pub fn ppo_update<F: Scalar>(
    policy: &mut PolicyParams<F>,
    batch: &TrainBatch<F>,
    hp: &PpoHyperparams,
    rng: &mut impl Rng,
) -> Result<UpdateStats<F>, IppoError> {
    hp.validate()?;
    batch.validate(policy)?;
    let adv = advantages(batch, hp);
    check_finite(&adv, "advantages")?;

    let mut indices: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats {
        policy_loss: F::zero(),
        value_loss: F::zero(),
        entropy: F::zero(),
        clip_fraction: F::zero(),
        minibatches: 0,
        samples: batch.len(),
    };
    let lr = F::of_f64(hp.learning_rate);
    for _epoch in 0..hp.epochs_per_update {
        indices.shuffle(rng);
        for chunk in indices.chunks(hp.minibatch_size) {
            let (breakdown, grads) = ppo_loss_and_grad(policy, batch, chunk, &adv, hp)?;
            let mut flat = policy.flat_params();
            policy.optimizer.update(&mut flat, &grads, lr);
            check_finite(&flat, "updated parameters")?;
            policy.set_flat_params(&flat);
            stats.policy_loss += breakdown.policy_loss;
            stats.value_loss += breakdown.value_loss;
            stats.entropy += breakdown.entropy;
            stats.clip_fraction += breakdown.clip_fraction;
            stats.minibatches += 1;
        }
    }
    let count = F::of_usize(stats.minibatches.max(1));
    stats.policy_loss /= count;
    stats.value_loss /= count;
    stats.entropy /= count;
    stats.clip_fraction /= count;
    Ok(stats)
}
