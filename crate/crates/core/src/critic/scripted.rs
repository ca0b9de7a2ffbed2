//! Deterministic critic used for tests, ablations, and offline runs.
//!
//! It targets the same behaviours a language-model critic is asked to judge:
//! meeting buyer demand at reasonable prices (FTB) and balancing profits and
//! market share across sellers (FBS). Being a pure function of the ledger, it
//! also serves as the reference oracle for the deterministic test suites.

use crate::market::{EnvConfig, EpisodeLedger};
use crate::stats::{clamp_unit, gini};

use super::{CriticVerdict, EpisodeCritic, FairnessScores};

/// Scripted stand-in for the language-model critic. Always scores.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedCritic;

impl EpisodeCritic for ScriptedCritic {
    fn score(&self, ledger: &EpisodeLedger, env: &EnvConfig) -> CriticVerdict {
        CriticVerdict::Scored(score_scripted(ledger, env))
    }
}

/// Score one episode deterministically.
///
/// Per buyer: `FTB = 0.5 * fulfillment + 0.5 * price_term`, where
/// `fulfillment` is the fraction of initial demand purchased and
/// `price_term` rescales the quantity-weighted paid price from
/// `[price_min, price_max]` onto `[1, 0]`. A buyer who bought nothing
/// despite having demand is treated as having paid `price_max`; a buyer
/// with zero demand is trivially satisfied.
///
/// Globally: `FBS = (1 - G) * (1 - max(0, s_max - 1/N) / (1 - 1/N))`, where
/// `G` is the Gini coefficient of sellers' non-negative clipped profits and
/// `s_max` the largest sales share. No-trade episodes score `FBS = 0`.
pub fn score_scripted(ledger: &EpisodeLedger, cfg: &EnvConfig) -> FairnessScores {
    let price_span = f64::from(cfg.price_max - cfg.price_min);
    let ftb_per_buyer: Vec<f64> = (0..ledger.n_buyers())
        .map(|j| {
            let demand = ledger.initial_demands[j];
            if demand == 0 {
                return 1.0;
            }
            let fulfillment = f64::from(ledger.purchased_per_buyer[j]) / f64::from(demand);
            let price_term = match ledger.mean_paid_price(j) {
                None => 0.0,
                Some(_) if price_span == 0.0 => 1.0,
                Some(mean_price) => {
                    1.0 - (mean_price - f64::from(cfg.price_min)) / price_span
                }
            };
            clamp_unit(0.5 * fulfillment + 0.5 * clamp_unit(price_term))
        })
        .collect();

    let fbs = if ledger.no_trade {
        0.0
    } else {
        let clipped_profits: Vec<f64> = ledger
            .profit_per_seller
            .iter()
            .map(|&p| p.max(0.0))
            .collect();
        let equality = 1.0 - gini(&clipped_profits);
        let n = ledger.n_sellers();
        let monopoly_factor = if n == 1 {
            1.0
        } else {
            let uniform = 1.0 / n as f64;
            let s_max = ledger
                .sales_share_per_seller
                .iter()
                .copied()
                .fold(0.0, f64::max);
            1.0 - (s_max - uniform).max(0.0) / (1.0 - uniform)
        };
        clamp_unit(equality * monopoly_factor)
    };

    FairnessScores { ftb_per_buyer, fbs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Offer;
    use approx::assert_abs_diff_eq;

    /// Hand-built two-seller / one-buyer ledger.
    fn ledger(
        prices: [u32; 2],
        sold: [u32; 2],
        offered: [u32; 2],
        demand: u32,
        unit_cost: f64,
    ) -> EpisodeLedger {
        let profit: Vec<f64> = (0..2)
            .map(|i| (f64::from(prices[i]) - unit_cost) * f64::from(sold[i]))
            .collect();
        let total_sold = sold[0] + sold[1];
        let no_trade = total_sold == 0;
        let shares = if no_trade {
            vec![0.5, 0.5]
        } else {
            sold.iter()
                .map(|&s| f64::from(s) / f64::from(total_sold))
                .collect()
        };
        let spend = f64::from(prices[0] * sold[0] + prices[1] * sold[1]);
        EpisodeLedger {
            offers: vec![
                Offer { price: prices[0], quantity: offered[0] },
                Offer { price: prices[1], quantity: offered[1] },
            ],
            sales_matrix: vec![vec![sold[0]], vec![sold[1]]],
            initial_inventories: vec![offered[0], offered[1]],
            initial_demands: vec![demand],
            profit_per_seller: profit,
            spend_per_buyer: vec![spend],
            purchased_per_buyer: vec![total_sold],
            unsold_per_seller: vec![offered[0] - sold[0], offered[1] - sold[1]],
            unmet_demand_per_buyer: vec![demand - total_sold],
            total_unmet: demand - total_sold,
            margin_per_seller: vec![0.0, 0.0],
            sales_share_per_seller: shares,
            no_trade,
        }
    }

    #[test]
    fn perfect_symmetry_scores_full_fbs() {
        // Equal profits (10, 10) at equal shares: G = 0, monopoly factor 1.
        let cfg = EnvConfig::default();
        let scores = score_scripted(&ledger([4, 4], [5, 5], [5, 5], 10, 2.0), &cfg);
        assert_abs_diff_eq!(scores.fbs, 1.0);
    }

    #[test]
    fn monopoly_with_unequal_profits_scores_zero_fbs() {
        // Profits (20, 0) with shares (1, 0): G = 0.5, monopoly factor 0.
        let cfg = EnvConfig::default();
        let scores = score_scripted(&ledger([4, 4], [10, 0], [10, 5], 10, 2.0), &cfg);
        assert_abs_diff_eq!(scores.fbs, 0.0);
    }

    #[test]
    fn fully_served_at_minimum_price_scores_full_ftb() {
        let cfg = EnvConfig::default();
        let scores = score_scripted(&ledger([1, 1], [5, 5], [5, 5], 10, 2.0), &cfg);
        assert_abs_diff_eq!(scores.ftb_per_buyer[0], 1.0);
    }

    #[test]
    fn starved_buyer_scores_zero_ftb() {
        let cfg = EnvConfig::default();
        let scores = score_scripted(&ledger([9, 9], [0, 0], [5, 5], 10, 2.0), &cfg);
        assert_abs_diff_eq!(scores.ftb_per_buyer[0], 0.0);
        // No trade also zeroes FBS.
        assert_abs_diff_eq!(scores.fbs, 0.0);
    }

    #[test]
    fn zero_demand_buyer_is_trivially_satisfied() {
        let cfg = EnvConfig::default();
        let scores = score_scripted(&ledger([5, 5], [0, 0], [5, 5], 0, 2.0), &cfg);
        assert_abs_diff_eq!(scores.ftb_per_buyer[0], 1.0);
    }

    #[test]
    fn identical_ledgers_give_identical_scores() {
        let cfg = EnvConfig::default();
        let l = ledger([5, 3], [4, 6], [7, 8], 12, 2.0);
        assert_eq!(score_scripted(&l, &cfg), score_scripted(&l.clone(), &cfg));
    }

    #[test]
    fn ftb_monotone_in_fulfillment_at_fixed_price() {
        let cfg = EnvConfig::default();
        let mut last = -1.0;
        for sold in 0..=10u32 {
            // All purchases at price 5; fulfillment rises with units sold.
            let l = ledger([5, 5], [sold, 0], [10, 0], 10, 2.0);
            let ftb = score_scripted(&l, &cfg).ftb_per_buyer[0];
            assert!(
                ftb >= last - 1e-12,
                "FTB decreased from {last} to {ftb} at sold={sold}"
            );
            last = ftb;
        }
    }

    #[test]
    fn ftb_nonincreasing_in_mean_price_at_fixed_fulfillment() {
        let cfg = EnvConfig::default();
        let mut last = 2.0;
        for price in 1..=10u32 {
            let l = ledger([price, price], [5, 5], [5, 5], 10, 2.0);
            let ftb = score_scripted(&l, &cfg).ftb_per_buyer[0];
            assert!(
                ftb <= last + 1e-12,
                "FTB increased from {last} to {ftb} at price={price}"
            );
            last = ftb;
        }
    }

    #[test]
    fn fbs_decreases_as_profit_gap_or_share_grows() {
        let cfg = EnvConfig::default();
        // Fix total sales, shift share toward seller 1.
        let mut last = 2.0;
        for s0 in 5..=10u32 {
            let l = ledger([5, 5], [s0, 10 - s0], [10, 10], 20, 2.0);
            let fbs = score_scripted(&l, &cfg).fbs;
            assert!(fbs <= last + 1e-12, "FBS rose as dominance grew");
            last = fbs;
        }
        // Equal shares but widening profit gap via price difference.
        let balanced = score_scripted(&ledger([5, 5], [5, 5], [5, 5], 10, 2.0), &cfg).fbs;
        let skewed = score_scripted(&ledger([9, 3], [5, 5], [5, 5], 10, 2.0), &cfg).fbs;
        assert!(skewed < balanced);
    }

    #[test]
    fn scores_stay_in_unit_interval_under_fuzzing() {
        use rand::{Rng, SeedableRng};
        let cfg = EnvConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5_000 {
            let offered = [rng.random_range(0..=20u32), rng.random_range(0..=20u32)];
            let sold = [
                rng.random_range(0..=offered[0]),
                rng.random_range(0..=offered[1]),
            ];
            let demand = rng.random_range((sold[0] + sold[1])..=60);
            let prices = [rng.random_range(1..=10u32), rng.random_range(1..=10u32)];
            let scores = score_scripted(&ledger(prices, sold, offered, demand, 2.0), &cfg);
            for &f in &scores.ftb_per_buyer {
                assert!((0.0..=1.0).contains(&f));
            }
            assert!((0.0..=1.0).contains(&scores.fbs));
        }
    }
}
