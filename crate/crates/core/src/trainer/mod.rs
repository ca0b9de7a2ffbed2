//! The closed training loop: roll an episode, score it, shape rewards,
//! accumulate per-agent batches, and update each policy independently.
//!
//! Episodes with an invalid critic verdict are discarded: they advance the
//! episode counter and appear in the metrics stream, but contribute nothing
//! to any training batch or fairness average. The loop aborts if the critic
//! discards more than half of any recent thousand-episode window.
//!
//! Everything is single-threaded and seeded: per-episode and per-update RNG
//! streams are derived from the run seed alone, so a run is bitwise
//! reproducible.

mod kpi;
mod output;

use std::collections::VecDeque;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::critic::{
    build_critic, CriticConfig, CriticError, CriticVerdict, EpisodeCritic,
};
use crate::ippo::{
    act, evaluate_policy, ppo_update, ActionSample, IppoError, PpoHyperparams,
};
use crate::market::{
    raw_buyer_reward, raw_seller_reward, EnvConfig, EpisodeLedger, MarketError, MarketState,
};
use crate::shaping::{
    lambda_buy, lambda_peer, shaped_buyer_reward, shaped_seller_reward, ShapingConfig,
    ShapingError, ShapingSchedule,
};
use crate::{Batch, Policy, Real};

pub use kpi::{compute_kpis, relative_profit_gap, KpiReport};
pub use output::{moving_average_curves, CurvePoint};

/// Abort when more than this fraction of a sliding window is discarded.
const DISCARD_WINDOW: usize = 1_000;
const DISCARD_LIMIT_FRAC: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Ippo(#[from] IppoError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("kpi window is empty")]
    EmptyWindow,
    #[error(
        "critic outage: {discarded} of the last {window} episodes were discarded (at episode {episode})"
    )]
    CriticOutage {
        episode: u64,
        discarded: usize,
        window: usize,
    },
}

/// Full run configuration, as loaded from the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub env: EnvConfig,
    pub critic: CriticConfig,
    pub shaping: ShapingConfig,
    pub ppo: PpoHyperparams,
    pub total_episodes: u64,
    /// Final-window size for the KPI report.
    pub kpi_window: usize,
    /// Window for the moving-average learning curves.
    pub reward_ma_window: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            critic: CriticConfig::default(),
            shaping: ShapingConfig::default(),
            ppo: PpoHyperparams::default(),
            total_episodes: 20_000,
            kpi_window: 2_000,
            reward_ma_window: 500,
            seed: 1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.env.validate()?;
        self.critic.validate()?;
        self.schedule().validate()?;
        self.ppo.validate()?;
        if self.kpi_window < 1 || self.reward_ma_window < 1 {
            return Err(TrainError::InvalidConfig("windows must be >= 1".into()));
        }
        if self.total_episodes > 0 && self.kpi_window as u64 > self.total_episodes {
            return Err(TrainError::InvalidConfig(format!(
                "kpi_window {} exceeds total_episodes {}",
                self.kpi_window, self.total_episodes
            )));
        }
        Ok(())
    }

    /// The shaping schedule bound to this run's horizon.
    pub fn schedule(&self) -> ShapingSchedule {
        self.shaping.schedule(self.total_episodes)
    }
}

/// Everything recorded about one episode.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub t: u64,
    pub ledger: EpisodeLedger,
    pub verdict: CriticVerdict,
    pub lambda_buy: f64,
    pub lambda_peer: f64,
    /// Raw rewards per agent, sellers then buyers.
    pub raw_rewards: Vec<f64>,
    /// Shaped rewards per agent; absent iff the verdict was invalid.
    pub shaped_rewards: Option<Vec<f64>>,
}

/// One agent's decision within an episode.
#[derive(Debug, Clone)]
pub struct AgentTransition {
    pub observation: Vec<Real>,
    pub sample: ActionSample<Real>,
}

/// An episode's record plus the per-agent transitions feeding the batches.
#[derive(Debug, Clone)]
pub struct EpisodeRollout {
    pub record: EpisodeRecord,
    pub transitions: Vec<AgentTransition>,
}

/// Result of a full training run. `records` holds the complete per-episode
/// history (the on-disk CSVs are projections of it).
#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub total_episodes: u64,
    pub discarded_episodes: u64,
    pub update_count: u64,
    /// KPIs over the final `kpi_window` episodes.
    pub final_kpi: Option<KpiReport>,
    /// KPIs over consecutive `kpi_window`-sized chunks of the run.
    pub kpi_series: Vec<KpiReport>,
    pub checkpoint_paths: Vec<PathBuf>,
    pub records: Vec<EpisodeRecord>,
    pub curves: Vec<CurvePoint>,
}

/// Optional run wiring: output directory, warm-start policies, checkpoint
/// cadence.
#[derive(Debug, Default)]
pub struct RunOptions {
    pub output_dir: Option<PathBuf>,
    pub initial_policies: Option<Vec<Policy>>,
    /// Save a checkpoint every N episodes (in addition to the final one).
    pub save_every: Option<u64>,
}

fn mix_seed(base: u64, salt: u64) -> u64 {
    base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Independent stream for episode `t` of a run.
fn episode_rng(seed: u64, t: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + t);
    rng
}

/// Independent stream for one agent's PPO update.
fn update_rng(seed: u64, update_index: u64, agent: usize, n_agents: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x8000_0000_0000_0000 | (update_index * n_agents as u64 + agent as u64));
    rng
}

/// Fresh policies for every agent, seeded from the run seed.
pub fn init_policies(cfg: &TrainingConfig) -> Vec<Policy> {
    let mut policies = Vec::with_capacity(cfg.env.n_agents());
    for i in 0..cfg.env.n_sellers {
        policies.push(Policy::for_seller(&cfg.env, mix_seed(cfg.seed, i as u64)));
    }
    for j in 0..cfg.env.n_buyers {
        policies.push(Policy::for_buyer(
            &cfg.env,
            mix_seed(cfg.seed, (cfg.env.n_sellers + j) as u64),
        ));
    }
    policies
}

fn check_policies(cfg: &EnvConfig, policies: &[Policy]) -> Result<(), TrainError> {
    if policies.len() != cfg.n_agents() {
        return Err(TrainError::InvalidConfig(format!(
            "{} policies supplied for {} agents",
            policies.len(),
            cfg.n_agents()
        )));
    }
    Ok(())
}

/// Play one episode: sellers in index order, then buyers in index order,
/// then finalize, score, and (when scored) shape rewards.
pub fn run_episode(
    policies: &[Policy],
    cfg: &EnvConfig,
    critic: &dyn EpisodeCritic,
    schedule: &ShapingSchedule,
    t: u64,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeRollout, TrainError> {
    check_policies(cfg, policies)?;
    let mut state = MarketState::new_episode(cfg, t, rng);
    let mut transitions = Vec::with_capacity(cfg.n_agents());
    for i in 0..cfg.n_sellers {
        let observation = state.seller_observation(cfg, i)?;
        let sample = act(&policies[i], &observation, rng)?;
        let offer = sample.to_offer(cfg.price_min, state.inventories[i]);
        state = state.apply_seller_offer(cfg, i, offer)?;
        transitions.push(AgentTransition {
            observation,
            sample,
        });
    }
    for j in 0..cfg.n_buyers {
        let observation = state.buyer_observation(cfg, j)?;
        let sample = act(&policies[cfg.n_sellers + j], &observation, rng)?;
        let fractions = sample.to_fractions();
        let allocation = state.project_buyer_allocation(cfg, j, &fractions)?;
        state = state.apply_buyer_allocation(cfg, j, &allocation)?;
        transitions.push(AgentTransition {
            observation,
            sample,
        });
    }
    let ledger = state.finalize_episode(cfg)?;
    let verdict = critic.score(&ledger, cfg);

    let mut raw_rewards = Vec::with_capacity(cfg.n_agents());
    for i in 0..cfg.n_sellers {
        raw_rewards.push(raw_seller_reward(&ledger, i, cfg));
    }
    for j in 0..cfg.n_buyers {
        raw_rewards.push(raw_buyer_reward(&ledger, j, cfg));
    }
    let shaped_rewards = verdict.scores().map(|scores| {
        let mut shaped = Vec::with_capacity(cfg.n_agents());
        for i in 0..cfg.n_sellers {
            shaped.push(shaped_seller_reward(
                raw_rewards[i],
                scores,
                ledger.sales_share_per_seller[i],
                t,
                schedule,
            ));
        }
        for j in 0..cfg.n_buyers {
            shaped.push(shaped_buyer_reward(
                raw_rewards[cfg.n_sellers + j],
                scores.ftb_per_buyer[j],
                t,
                schedule,
            ));
        }
        shaped
    });

    Ok(EpisodeRollout {
        record: EpisodeRecord {
            t,
            ledger,
            verdict,
            lambda_buy: lambda_buy(t, schedule),
            lambda_peer: lambda_peer(t, schedule),
            raw_rewards,
            shaped_rewards,
        },
        transitions,
    })
}

/// Run a full training loop with the configured critic backend.
pub fn run_training(cfg: &TrainingConfig, opts: RunOptions) -> Result<TrainingReport, TrainError> {
    let critic = build_critic(&cfg.critic)?;
    run_training_with_critic(cfg, critic.as_ref(), opts)
}

/// Run a full training loop against an explicit critic (used by tests to
/// inject deterministic or failing critics).
pub fn run_training_with_critic(
    cfg: &TrainingConfig,
    critic: &dyn EpisodeCritic,
    opts: RunOptions,
) -> Result<TrainingReport, TrainError> {
    cfg.validate()?;
    let schedule = cfg.schedule();
    let mut policies = match opts.initial_policies {
        Some(policies) => {
            check_policies(&cfg.env, &policies)?;
            policies
        }
        None => init_policies(cfg),
    };
    let n_agents = cfg.env.n_agents();

    if let Some(dir) = &opts.output_dir {
        std::fs::create_dir_all(dir)?;
        output::write_resolved_config(&dir.join("resolved-config.json"), cfg)?;
    }

    let mut records: Vec<EpisodeRecord> = Vec::with_capacity(cfg.total_episodes as usize);
    let mut batches: Vec<Batch> = vec![Batch::default(); n_agents];
    let mut scored_in_batch = 0usize;
    let mut update_count = 0u64;
    let mut discarded_total = 0u64;
    let mut discard_window: VecDeque<bool> = VecDeque::with_capacity(DISCARD_WINDOW);
    let mut discards_in_window = 0usize;
    let mut checkpoint_paths = Vec::new();

    for t in 0..cfg.total_episodes {
        let mut rng = episode_rng(cfg.seed, t);
        let rollout = run_episode(&policies, &cfg.env, critic, &schedule, t, &mut rng)?;
        let scored = rollout.record.verdict.is_scored();

        if let Some(shaped) = &rollout.record.shaped_rewards {
            for (agent, transition) in rollout.transitions.iter().enumerate() {
                batches[agent].push(
                    transition.observation.clone(),
                    &transition.sample,
                    shaped[agent],
                );
            }
            scored_in_batch += 1;
        } else {
            discarded_total += 1;
        }

        discard_window.push_back(!scored);
        if !scored {
            discards_in_window += 1;
        }
        if discard_window.len() > DISCARD_WINDOW
            && discard_window.pop_front().expect("window non-empty")
        {
            discards_in_window -= 1;
        }
        if discard_window.len() == DISCARD_WINDOW
            && discards_in_window as f64 > DISCARD_LIMIT_FRAC * DISCARD_WINDOW as f64
        {
            return Err(TrainError::CriticOutage {
                episode: t,
                discarded: discards_in_window,
                window: DISCARD_WINDOW,
            });
        }

        records.push(rollout.record);

        if scored_in_batch == cfg.ppo.batch_episodes {
            for (agent, policy) in policies.iter_mut().enumerate() {
                let mut rng = update_rng(cfg.seed, update_count, agent, n_agents);
                let stats = ppo_update(policy, &batches[agent], &cfg.ppo, &mut rng)?;
                log::debug!(
                    "update {update_count} agent {agent}: policy={:.4} value={:.4} entropy={:.4} clip={:.3}",
                    stats.policy_loss,
                    stats.value_loss,
                    stats.entropy,
                    stats.clip_fraction
                );
                batches[agent].clear();
            }
            update_count += 1;
            scored_in_batch = 0;
        }

        if let (Some(dir), Some(every)) = (&opts.output_dir, opts.save_every) {
            if every > 0 && (t + 1) % every == 0 && t + 1 < cfg.total_episodes {
                let ckpt_dir = dir.join("checkpoints");
                std::fs::create_dir_all(&ckpt_dir)?;
                let path = ckpt_dir.join(format!("ckpt_ep{:07}.ckpt", t + 1));
                checkpoint::save_policies(&path, &policies)?;
                checkpoint_paths.push(path);
            }
        }

        if (t + 1) % 5_000 == 0 {
            log::info!(
                "episode {}/{}: {} updates, {} discarded",
                t + 1,
                cfg.total_episodes,
                update_count,
                discarded_total
            );
        }
    }

    let final_kpi = if records.is_empty() {
        None
    } else {
        let window_start = records.len().saturating_sub(cfg.kpi_window);
        Some(compute_kpis(&records[window_start..], &cfg.env)?)
    };
    let kpi_series = records
        .chunks(cfg.kpi_window)
        .map(|chunk| compute_kpis(chunk, &cfg.env))
        .collect::<Result<Vec<_>, _>>()?;
    let curves = moving_average_curves(&records, n_agents, cfg.reward_ma_window);

    if let Some(dir) = &opts.output_dir {
        output::write_metrics_csv(&dir.join("metrics.csv"), cfg, &records)?;
        output::write_curves_csv(&dir.join("curves.csv"), cfg, &curves)?;
        if let Some(kpi) = &final_kpi {
            output::write_kpi_json(&dir.join("kpi.json"), kpi)?;
        }
        let ckpt_dir = dir.join("checkpoints");
        std::fs::create_dir_all(&ckpt_dir)?;
        let final_path = ckpt_dir.join("final.ckpt");
        checkpoint::save_policies(&final_path, &policies)?;
        checkpoint_paths.push(final_path);
    }

    Ok(TrainingReport {
        total_episodes: cfg.total_episodes,
        discarded_episodes: discarded_total,
        update_count,
        final_kpi,
        kpi_series,
        checkpoint_paths,
        records,
        curves,
    })
}

/// The four headline contrasts between a shaped run and its ablation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationComparison {
    /// Shaped minus baseline final-window mean FTB.
    pub delta_mean_ftb: f64,
    /// Shaped minus baseline final-window mean FBS.
    pub delta_mean_fbs: f64,
    /// Shaped minus baseline full-demand episode fraction.
    pub delta_full_demand_frac: f64,
    /// Baseline minus shaped relative inter-seller profit gap (positive
    /// when shaping narrows the gap).
    pub delta_profit_gap: f64,
}

/// Paired shaped-vs-baseline reports with their headline deltas.
#[derive(Debug)]
pub struct AblationReport {
    pub shaped: TrainingReport,
    pub baseline: TrainingReport,
    pub comparison: AblationComparison,
}

fn kpi_or_err(report: &TrainingReport) -> Result<&KpiReport, TrainError> {
    report.final_kpi.as_ref().ok_or(TrainError::EmptyWindow)
}

pub fn compare_runs(
    shaped: &TrainingReport,
    baseline: &TrainingReport,
) -> Result<AblationComparison, TrainError> {
    let shaped_kpi = kpi_or_err(shaped)?;
    let baseline_kpi = kpi_or_err(baseline)?;
    Ok(AblationComparison {
        delta_mean_ftb: shaped_kpi.mean_ftb - baseline_kpi.mean_ftb,
        delta_mean_fbs: shaped_kpi.mean_fbs - baseline_kpi.mean_fbs,
        delta_full_demand_frac: shaped_kpi.full_demand_episode_frac
            - baseline_kpi.full_demand_episode_frac,
        delta_profit_gap: relative_profit_gap(&baseline_kpi.mean_profit_per_seller)
            - relative_profit_gap(&shaped_kpi.mean_profit_per_seller),
    })
}

/// Run the shaped configuration and its coefficients-held-at-zero ablation
/// with identical seeds, and compare final-window KPIs.
pub fn run_ablation(cfg: &TrainingConfig, opts: RunOptions) -> Result<AblationReport, TrainError> {
    let critic = build_critic(&cfg.critic)?;
    run_ablation_with_critic(cfg, critic.as_ref(), opts)
}

pub fn run_ablation_with_critic(
    cfg: &TrainingConfig,
    critic: &dyn EpisodeCritic,
    opts: RunOptions,
) -> Result<AblationReport, TrainError> {
    let mut shaped_cfg = cfg.clone();
    shaped_cfg.shaping.enabled = true;
    let mut baseline_cfg = cfg.clone();
    baseline_cfg.shaping.enabled = false;

    let shaped_opts = RunOptions {
        output_dir: opts.output_dir.as_ref().map(|d| d.join("shaped")),
        initial_policies: None,
        save_every: opts.save_every,
    };
    let baseline_opts = RunOptions {
        output_dir: opts.output_dir.as_ref().map(|d| d.join("baseline")),
        initial_policies: None,
        save_every: opts.save_every,
    };
    let shaped = run_training_with_critic(&shaped_cfg, critic, shaped_opts)?;
    let baseline = run_training_with_critic(&baseline_cfg, critic, baseline_opts)?;
    let comparison = compare_runs(&shaped, &baseline)?;

    if let Some(dir) = &opts.output_dir {
        std::fs::create_dir_all(dir)?;
        let summary = serde_json::json!({
            "shaped_kpi": shaped.final_kpi,
            "baseline_kpi": baseline.final_kpi,
            "comparison": comparison,
        });
        std::fs::write(
            dir.join("ablation.json"),
            format!("{}\n", serde_json::to_string_pretty(&summary).expect("serializes")),
        )?;
    }

    Ok(AblationReport {
        shaped,
        baseline,
        comparison,
    })
}

/// Play `episodes` greedy (argmax) episodes with fixed policies and report
/// KPIs over all of them.
pub fn evaluate_policies(
    cfg: &TrainingConfig,
    policies: &[Policy],
    episodes: u64,
    critic: &dyn EpisodeCritic,
) -> Result<(KpiReport, Vec<EpisodeRecord>), TrainError> {
    check_policies(&cfg.env, policies)?;
    let schedule = cfg.schedule();
    let env = &cfg.env;
    let mut records = Vec::with_capacity(episodes as usize);
    for t in 0..episodes {
        let mut rng = {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(0x4000_0000_0000_0000 | t);
            r
        };
        let mut state = MarketState::new_episode(env, t, &mut rng);
        for i in 0..env.n_sellers {
            let observation = state.seller_observation(env, i)?;
            let sample = evaluate_policy(&policies[i], &observation)?;
            let offer = sample.to_offer(env.price_min, state.inventories[i]);
            state = state.apply_seller_offer(env, i, offer)?;
        }
        for j in 0..env.n_buyers {
            let observation = state.buyer_observation(env, j)?;
            let sample = evaluate_policy(&policies[env.n_sellers + j], &observation)?;
            let allocation = state.project_buyer_allocation(env, j, &sample.to_fractions())?;
            state = state.apply_buyer_allocation(env, j, &allocation)?;
        }
        let ledger = state.finalize_episode(env)?;
        let verdict = critic.score(&ledger, env);
        let mut raw_rewards = Vec::with_capacity(env.n_agents());
        for i in 0..env.n_sellers {
            raw_rewards.push(raw_seller_reward(&ledger, i, env));
        }
        for j in 0..env.n_buyers {
            raw_rewards.push(raw_buyer_reward(&ledger, j, env));
        }
        records.push(EpisodeRecord {
            t,
            lambda_buy: lambda_buy(t, &schedule),
            lambda_peer: lambda_peer(t, &schedule),
            shaped_rewards: None,
            ledger,
            verdict,
            raw_rewards,
        });
    }
    let kpi = compute_kpis(&records, env)?;
    Ok((kpi, records))
}
