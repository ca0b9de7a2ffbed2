//! Windowed key-performance indicators over episode records.

use serde::Serialize;

use crate::market::{budget_limit, EnvConfig};

use super::{EpisodeRecord, TrainError};

/// KPIs over one window of episodes.
///
/// Fairness means cover scored episodes only; ledger-derived indicators
/// (demand, margins, shares, budget audit) cover every episode in the
/// window. `max_sales_share` aggregates units over the whole window, while
/// `mean_episode_max_share` summarises the per-episode distribution of the
/// dominant seller's share (traded episodes only).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KpiReport {
    pub episodes: usize,
    /// Fraction of episodes ending with zero unmet demand.
    pub full_demand_episode_frac: f64,
    /// FTB averaged over buyers, then over scored episodes.
    pub mean_ftb: f64,
    pub mean_fbs: f64,
    /// `[min, max]` across sellers of quantity-weighted margins.
    pub margin_range_per_seller: [f64; 2],
    pub max_sales_share: f64,
    pub mean_episode_max_share: f64,
    /// Ledger audit of the spending cap; independent of the projection that
    /// enforces it, and required to be zero.
    pub budget_violations: u64,
    pub mean_profit_per_seller: Vec<f64>,
    pub discarded_episode_count: u64,
}

/// Relative gap between the best- and worst-earning seller, in `[0, 1]`.
/// Zero when no seller earned a positive mean profit.
pub fn relative_profit_gap(mean_profits: &[f64]) -> f64 {
    let hi = mean_profits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = mean_profits.iter().copied().fold(f64::INFINITY, f64::min);
    if !hi.is_finite() || !lo.is_finite() || hi <= 0.0 {
        return 0.0;
    }
    (hi - lo) / hi
}

pub fn compute_kpis(records: &[EpisodeRecord], env: &EnvConfig) -> Result<KpiReport, TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptyWindow);
    }
    let n = records.len();
    let n_sellers = env.n_sellers;

    let full_demand = records
        .iter()
        .filter(|r| r.ledger.total_unmet == 0)
        .count() as f64
        / n as f64;

    let mut ftb_sum = 0.0;
    let mut fbs_sum = 0.0;
    let mut scored = 0usize;
    for record in records {
        if let Some(scores) = record.verdict.scores() {
            ftb_sum += scores.mean_ftb();
            fbs_sum += scores.fbs;
            scored += 1;
        }
    }
    let (mean_ftb, mean_fbs) = if scored > 0 {
        (ftb_sum / scored as f64, fbs_sum / scored as f64)
    } else {
        (0.0, 0.0)
    };

    // Quantity-weighted margin and units share per seller over the window.
    let mut units_by_seller = vec![0u64; n_sellers];
    let mut margin_weight = vec![0.0f64; n_sellers];
    let mut profit_sum = vec![0.0f64; n_sellers];
    let mut episode_max_share_sum = 0.0;
    let mut traded_episodes = 0usize;
    let mut budget_violations = 0u64;
    for record in records {
        let ledger = &record.ledger;
        for i in 0..n_sellers {
            let sold = u64::from(ledger.units_sold_by(i));
            units_by_seller[i] += sold;
            margin_weight[i] += ledger.margin_per_seller[i] * sold as f64;
            profit_sum[i] += ledger.profit_per_seller[i];
        }
        if !ledger.no_trade {
            traded_episodes += 1;
            episode_max_share_sum += ledger
                .sales_share_per_seller
                .iter()
                .copied()
                .fold(0.0, f64::max);
        }
        for j in 0..env.n_buyers {
            if ledger.spend_per_buyer[j] > budget_limit(env, ledger.initial_demands[j]) {
                budget_violations += 1;
            }
        }
    }
    let total_units: u64 = units_by_seller.iter().sum();
    let margins: Vec<f64> = (0..n_sellers)
        .map(|i| {
            if units_by_seller[i] == 0 {
                0.0
            } else {
                margin_weight[i] / units_by_seller[i] as f64
            }
        })
        .collect();
    let margin_range_per_seller = [
        margins.iter().copied().fold(f64::INFINITY, f64::min),
        margins.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    ];
    let max_sales_share = if total_units == 0 {
        0.0
    } else {
        units_by_seller
            .iter()
            .map(|&u| u as f64 / total_units as f64)
            .fold(0.0, f64::max)
    };
    let mean_episode_max_share = if traded_episodes == 0 {
        0.0
    } else {
        episode_max_share_sum / traded_episodes as f64
    };
    let mean_profit_per_seller: Vec<f64> =
        profit_sum.iter().map(|&p| p / n as f64).collect();
    let discarded_episode_count =
        records.iter().filter(|r| !r.verdict.is_scored()).count() as u64;

    Ok(KpiReport {
        episodes: n,
        full_demand_episode_frac: full_demand,
        mean_ftb,
        mean_fbs,
        margin_range_per_seller,
        max_sales_share,
        mean_episode_max_share,
        budget_violations,
        mean_profit_per_seller,
        discarded_episode_count,
    })
}
