//! Scheduled blending of fairness scores into agent rewards.
//!
//! Two ramp coefficients gate the fairness bonuses over training: the buyer
//! coefficient rises over the first stretch of episodes, the peer coefficient
//! later, so agents internalise profitability before full fairness pressure
//! is applied. With shaping disabled both coefficients are identically zero
//! and shaped rewards equal raw rewards, which is the ablation baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::FairnessScores;

#[derive(Debug, Error)]
pub enum ShapingError {
    #[error("invalid shaping schedule: {0}")]
    InvalidConfig(String),
}

/// Ramp windows, bonus weights, and the training horizon they refer to.
///
/// Ramps are expressed as `[start, end]` fractions of `total_episodes`; a
/// coefficient is 0 before its window, 1 after it, and linear inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapingSchedule {
    pub total_episodes: u64,
    /// Buyer-fairness ramp window as fractions of the horizon.
    pub buy_ramp: [f64; 2],
    /// Peer-fairness ramp window as fractions of the horizon.
    pub peer_ramp: [f64; 2],
    /// Strength of the buyer-fairness bonus, in reward currency.
    pub buyer_fairness_weight: f64,
    /// Strength of the peer-fairness bonus, in reward currency.
    pub peer_fairness_weight: f64,
    /// When false, both coefficients are 0 everywhere (ablation baseline).
    pub enabled: bool,
}

impl Default for ShapingSchedule {
    /// Default weights put the fairness bonuses on the same scale as the raw
    /// economic rewards (hundreds of currency units at the reference market
    /// sizes); much smaller weights leave agent behaviour indistinguishable
    /// from the unshaped baseline.
    fn default() -> Self {
        Self {
            total_episodes: 20_000,
            buy_ramp: [0.0, 0.2],
            peer_ramp: [0.3, 0.8],
            buyer_fairness_weight: 400.0,
            peer_fairness_weight: 400.0,
            enabled: true,
        }
    }
}

impl ShapingSchedule {
    pub fn validate(&self) -> Result<(), ShapingError> {
        for (name, ramp) in [("buy_ramp", self.buy_ramp), ("peer_ramp", self.peer_ramp)] {
            if !(0.0 <= ramp[0] && ramp[0] < ramp[1] && ramp[1] <= 1.0) {
                return Err(ShapingError::InvalidConfig(format!(
                    "{name} must satisfy 0 <= start < end <= 1, got [{}, {}]",
                    ramp[0], ramp[1]
                )));
            }
        }
        if self.buyer_fairness_weight < 0.0 || self.peer_fairness_weight < 0.0 {
            return Err(ShapingError::InvalidConfig(
                "fairness weights must be >= 0".into(),
            ));
        }
        if !self.buyer_fairness_weight.is_finite() || !self.peer_fairness_weight.is_finite() {
            return Err(ShapingError::InvalidConfig(
                "fairness weights must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Disabled copy of this schedule, for the ablation arm.
    pub fn disabled(&self) -> Self {
        Self {
            enabled: false,
            ..self.clone()
        }
    }
}

/// Schedule parameters as they appear in the configuration file: everything
/// except the horizon, which is the run's `total_episodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapingConfig {
    pub buy_ramp: [f64; 2],
    pub peer_ramp: [f64; 2],
    pub buyer_fairness_weight: f64,
    pub peer_fairness_weight: f64,
    pub enabled: bool,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        let s = ShapingSchedule::default();
        Self {
            buy_ramp: s.buy_ramp,
            peer_ramp: s.peer_ramp,
            buyer_fairness_weight: s.buyer_fairness_weight,
            peer_fairness_weight: s.peer_fairness_weight,
            enabled: s.enabled,
        }
    }
}

impl ShapingConfig {
    /// Bind these parameters to a training horizon.
    pub fn schedule(&self, total_episodes: u64) -> ShapingSchedule {
        ShapingSchedule {
            total_episodes,
            buy_ramp: self.buy_ramp,
            peer_ramp: self.peer_ramp,
            buyer_fairness_weight: self.buyer_fairness_weight,
            peer_fairness_weight: self.peer_fairness_weight,
            enabled: self.enabled,
        }
    }
}

fn ramp(t: u64, window: [f64; 2], total: u64) -> f64 {
    let start = window[0] * total as f64;
    let end = window[1] * total as f64;
    let t = t as f64;
    if t <= start {
        0.0
    } else if t >= end {
        1.0
    } else {
        (t - start) / (end - start)
    }
}

/// Buyer-fairness coefficient at episode `t`.
pub fn lambda_buy(t: u64, sched: &ShapingSchedule) -> f64 {
    if !sched.enabled {
        return 0.0;
    }
    ramp(t, sched.buy_ramp, sched.total_episodes)
}

/// Peer-fairness coefficient at episode `t`.
pub fn lambda_peer(t: u64, sched: &ShapingSchedule) -> f64 {
    if !sched.enabled {
        return 0.0;
    }
    ramp(t, sched.peer_ramp, sched.total_episodes)
}

/// Seller reward with fairness bonuses: the mean-FTB bonus plus the FBS
/// bonus distributed in proportion to the seller's share of units sold.
pub fn shaped_seller_reward(
    raw: f64,
    scores: &FairnessScores,
    sales_share: f64,
    t: u64,
    sched: &ShapingSchedule,
) -> f64 {
    raw + lambda_buy(t, sched) * sched.buyer_fairness_weight * scores.mean_ftb()
        + lambda_peer(t, sched) * sched.peer_fairness_weight * scores.fbs * sales_share
}

/// Buyer reward with its own FTB bonus.
pub fn shaped_buyer_reward(raw: f64, ftb: f64, t: u64, sched: &ShapingSchedule) -> f64 {
    raw + lambda_buy(t, sched) * sched.buyer_fairness_weight * ftb
}
