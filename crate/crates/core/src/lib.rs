//! Turn-based peer-to-peer market game with fairness-critic reward shaping
//! and independent PPO training.
//!
//! The crate is organised around the stages of one training iteration:
//!
//! * [`market`] — the deterministic market game: episode sampling, offer and
//!   allocation legality, transitions, raw rewards, and the terminal
//!   [`market::EpisodeLedger`].
//! * [`critic`] — serialises a ledger into a deterministic prompt and obtains
//!   fairness scores (FTB per buyer, one global FBS) from either a remote
//!   chat-completion endpoint or a deterministic scripted critic.
//! * [`shaping`] — the scheduled blending of fairness scores into agent
//!   rewards.
//! * [`ippo`] — per-agent actor-critic policies with a from-scratch clipped
//!   surrogate update and a finite-difference-checkable gradient path.
//! * [`trainer`] — the closed rollout / score / shape / update loop, KPI
//!   reporting, and the no-shaping ablation.
//! * [`checkpoint`] — versioned binary policy snapshots.
//!
//! Numeric kernels (networks, optimizer, losses, inequality statistics) are
//! generic over a [`scalar::Scalar`] so they can run at `f32` or `f64`; the
//! training pipeline itself is pinned to [`Real`] for reproducibility.

pub mod checkpoint;
pub mod critic;
pub mod ippo;
pub mod market;
pub mod scalar;
pub mod shaping;
pub mod stats;
pub mod trainer;

/// Scalar type used by the training pipeline and all file formats.
pub type Real = f64;

/// Policy instantiation used by the trainer and checkpoints.
pub type Policy = ippo::PolicyParams<Real>;

/// Rollout batch instantiation used by the trainer.
pub type Batch = ippo::TrainBatch<Real>;

pub use critic::{CriticConfig, CriticVerdict, FairnessScores};
pub use ippo::PpoHyperparams;
pub use market::{EnvConfig, EpisodeLedger, MarketState, Offer};
pub use shaping::ShapingSchedule;
pub use trainer::{KpiReport, TrainingConfig, TrainingReport};
