//! Deterministic turn-based market game.
//!
//! One episode is a single trading round: sellers post price/quantity offers
//! in index order without seeing earlier offers, then buyers allocate their
//! demand over the posted offers in index order. Inventories, residual
//! demands and remaining offered quantities update deterministically, and the
//! terminal [`EpisodeLedger`] records everything downstream consumers need
//! (sales matrix, profits, spends, margins, shares, shortfalls).
//!
//! States are value-semantic: every operation takes `&self` and returns a new
//! state, so episodes can run concurrently with independent RNG streams.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Contract violations in the market game. These indicate caller bugs
/// (acting out of turn, illegal offers), not runtime conditions.
#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("invalid market config: {0}")]
    InvalidConfig(String),
    #[error("agent acted out of turn: stage is {stage}, expected {expected}")]
    WrongStage { stage: usize, expected: usize },
    #[error("offer price {price} outside [{min}, {max}]")]
    PriceOutOfRange { price: u32, min: u32, max: u32 },
    #[error("offer quantity {quantity} exceeds inventory {inventory}")]
    QuantityExceedsInventory { quantity: u32, inventory: u32 },
    #[error("infeasible allocation: {0}")]
    InfeasibleAllocation(String),
    #[error("episode finalized at stage {stage}, before all {n_agents} agents acted")]
    PrematureFinalize { stage: usize, n_agents: usize },
}

/// Market game parameters. Integer unit ranges are inclusive `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub n_sellers: usize,
    pub n_buyers: usize,
    /// Per-seller inventory sampling range, one `[lo, hi]` pair per seller.
    pub inventory_range_per_seller: Vec<[u32; 2]>,
    /// Per-buyer demand sampling range, one `[lo, hi]` pair per buyer.
    pub demand_range_per_buyer: Vec<[u32; 2]>,
    /// Unit production cost subtracted from the sale price in seller profit.
    pub unit_cost: f64,
    pub price_min: u32,
    pub price_max: u32,
    /// A buyer may spend at most `budget_multiplier * demand` per episode.
    pub budget_multiplier: f64,
    /// Penalty per unit of episode-wide unmet demand, applied to every agent.
    pub shortfall_penalty: f64,
    /// Penalty per offered-but-unsold unit, applied to the posting seller.
    pub unsold_penalty: f64,
}

impl Default for EnvConfig {
    /// Two competing sellers with asymmetric stock and one budget-constrained
    /// buyer; the reference case study configuration.
    ///
    /// The shortfall penalty sits inside the price range: high enough that
    /// trading is individually rational at typical prices (values well below
    /// the price band collapse the market into an absorbing no-trade
    /// equilibrium early in training), low enough that raw incentives alone
    /// do not already enforce demand satisfaction at every price.
    fn default() -> Self {
        Self {
            n_sellers: 2,
            n_buyers: 1,
            inventory_range_per_seller: vec![[8, 25], [10, 30]],
            demand_range_per_buyer: vec![[20, 50]],
            unit_cost: 2.0,
            price_min: 1,
            price_max: 10,
            budget_multiplier: 7.6,
            shortfall_penalty: 8.0,
            unsold_penalty: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), MarketError> {
        let err = |msg: String| Err(MarketError::InvalidConfig(msg));
        if self.n_sellers < 1 {
            return err("n_sellers must be >= 1".into());
        }
        if self.n_buyers < 1 {
            return err("n_buyers must be >= 1".into());
        }
        if self.inventory_range_per_seller.len() != self.n_sellers {
            return err(format!(
                "inventory_range_per_seller has {} entries, expected {}",
                self.inventory_range_per_seller.len(),
                self.n_sellers
            ));
        }
        if self.demand_range_per_buyer.len() != self.n_buyers {
            return err(format!(
                "demand_range_per_buyer has {} entries, expected {}",
                self.demand_range_per_buyer.len(),
                self.n_buyers
            ));
        }
        for (i, r) in self.inventory_range_per_seller.iter().enumerate() {
            if r[0] > r[1] {
                return err(format!("inventory range for seller {i} has lo > hi"));
            }
        }
        for (j, r) in self.demand_range_per_buyer.iter().enumerate() {
            if r[0] > r[1] {
                return err(format!("demand range for buyer {j} has lo > hi"));
            }
        }
        if self.price_min < 1 || self.price_min > self.price_max {
            return err(format!(
                "require 1 <= price_min <= price_max, got [{}, {}]",
                self.price_min, self.price_max
            ));
        }
        if !self.budget_multiplier.is_finite() || self.budget_multiplier <= 0.0 {
            return err("budget_multiplier must be positive and finite".into());
        }
        for (name, v) in [
            ("unit_cost", self.unit_cost),
            ("shortfall_penalty", self.shortfall_penalty),
            ("unsold_penalty", self.unsold_penalty),
        ] {
            if !v.is_finite() {
                return err(format!("{name} must be finite"));
            }
        }
        if self.shortfall_penalty < 0.0 || self.unsold_penalty < 0.0 {
            return err("penalties must be >= 0".into());
        }
        Ok(())
    }

    /// Number of agents acting per episode (sellers then buyers).
    pub fn n_agents(&self) -> usize {
        self.n_sellers + self.n_buyers
    }

    /// Observation length for any seller: own inventory plus all demands.
    pub fn seller_obs_len(&self) -> usize {
        1 + self.n_buyers
    }

    /// Observation length for any buyer: all inventories, all residual
    /// demands, and one (price, quantity) pair per posted offer.
    pub fn buyer_obs_len(&self) -> usize {
        self.n_sellers * 2 + self.n_sellers + self.n_buyers
    }

    /// Number of admissible integer prices.
    pub fn n_prices(&self) -> usize {
        (self.price_max - self.price_min + 1) as usize
    }
}

/// A posted price/quantity offer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offer {
    pub price: u32,
    pub quantity: u32,
}

/// A buyer's feasible purchase, in units per seller.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub per_seller_units: Vec<u32>,
}

impl Allocation {
    pub fn total_units(&self) -> u32 {
        self.per_seller_units.iter().sum()
    }
}

/// Global state of one episode.
///
/// `stage` is 1-based: sellers act at stages `1..=n_sellers`, buyer `j`
/// (0-based) acts at stage `n_sellers + j + 1`, and the episode is ready to
/// finalize once `stage == n_sellers + n_buyers + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketState {
    /// Remaining physical inventory per seller.
    pub inventories: Vec<u32>,
    /// Residual demand per buyer.
    pub demands: Vec<u32>,
    /// Offers as posted; `None` until the seller's turn has passed.
    pub offers: Vec<Option<Offer>>,
    /// Offered units still available for purchase, per seller.
    pub offer_remaining: Vec<u32>,
    /// Units sold so far, `[seller][buyer]`.
    pub sales: Vec<Vec<u32>>,
    pub stage: usize,
    /// Training-loop episode index, recorded for provenance.
    pub episode: u64,
    pub initial_inventories: Vec<u32>,
    pub initial_demands: Vec<u32>,
}

fn norm(value: u32, max: u32) -> f64 {
    if max == 0 {
        0.0
    } else {
        f64::from(value) / f64::from(max)
    }
}

/// Spend allowed to buyer `j` this episode. Both the projection and the
/// ledger audit must use this exact expression so boundary allocations are
/// classified identically.
pub fn budget_limit(cfg: &EnvConfig, demand: u32) -> f64 {
    cfg.budget_multiplier * f64::from(demand)
}

impl MarketState {
    /// Sample a fresh episode: inventories and demands drawn uniformly
    /// (integer, inclusive) from the per-agent ranges, no offers, stage 1.
    pub fn new_episode(cfg: &EnvConfig, episode: u64, rng: &mut impl Rng) -> Self {
        let inventories: Vec<u32> = cfg
            .inventory_range_per_seller
            .iter()
            .map(|r| rng.random_range(r[0]..=r[1]))
            .collect();
        let demands: Vec<u32> = cfg
            .demand_range_per_buyer
            .iter()
            .map(|r| rng.random_range(r[0]..=r[1]))
            .collect();
        Self {
            initial_inventories: inventories.clone(),
            initial_demands: demands.clone(),
            offers: vec![None; cfg.n_sellers],
            offer_remaining: vec![0; cfg.n_sellers],
            sales: vec![vec![0; cfg.n_buyers]; cfg.n_sellers],
            stage: 1,
            episode,
            inventories,
            demands,
        }
    }

    pub fn is_done(&self, cfg: &EnvConfig) -> bool {
        self.stage > cfg.n_agents()
    }

    fn require_stage(&self, expected: usize) -> Result<(), MarketError> {
        if self.stage != expected {
            return Err(MarketError::WrongStage {
                stage: self.stage,
                expected,
            });
        }
        Ok(())
    }

    /// Seller `i`'s observation at its turn: own inventory and every buyer's
    /// demand, each normalized by its configured range maximum. Deliberately
    /// excludes other sellers' offers.
    ///
    /// Layout: `[I_i / inv_max_i, D_1 / dem_max_1, ..., D_NB / dem_max_NB]`.
    pub fn seller_observation(&self, cfg: &EnvConfig, i: usize) -> Result<Vec<f64>, MarketError> {
        self.require_stage(i + 1)?;
        let mut obs = Vec::with_capacity(cfg.seller_obs_len());
        obs.push(norm(self.inventories[i], cfg.inventory_range_per_seller[i][1]));
        for (j, &d) in self.demands.iter().enumerate() {
            obs.push(norm(d, cfg.demand_range_per_buyer[j][1]));
        }
        Ok(obs)
    }

    /// Buyer `j`'s observation at its turn: the full state.
    ///
    /// Layout: all inventories normalized by their range maxima, then all
    /// residual demands normalized by theirs, then per seller the pair
    /// `(price / price_max, remaining_quantity / inv_max_i)`.
    pub fn buyer_observation(&self, cfg: &EnvConfig, j: usize) -> Result<Vec<f64>, MarketError> {
        self.require_stage(cfg.n_sellers + j + 1)?;
        let mut obs = Vec::with_capacity(cfg.buyer_obs_len());
        for (i, &inv) in self.inventories.iter().enumerate() {
            obs.push(norm(inv, cfg.inventory_range_per_seller[i][1]));
        }
        for (jj, &d) in self.demands.iter().enumerate() {
            obs.push(norm(d, cfg.demand_range_per_buyer[jj][1]));
        }
        for i in 0..cfg.n_sellers {
            let offer = self.offers[i].expect("all offers posted once buyer stages begin");
            obs.push(norm(offer.price, cfg.price_max));
            obs.push(norm(self.offer_remaining[i], cfg.inventory_range_per_seller[i][1]));
        }
        Ok(obs)
    }

    /// Record seller `i`'s offer and advance the stage. The policy layer must
    /// already have clamped the action; violations here are contract errors.
    pub fn apply_seller_offer(
        &self,
        cfg: &EnvConfig,
        i: usize,
        offer: Offer,
    ) -> Result<Self, MarketError> {
        self.require_stage(i + 1)?;
        if offer.price < cfg.price_min || offer.price > cfg.price_max {
            return Err(MarketError::PriceOutOfRange {
                price: offer.price,
                min: cfg.price_min,
                max: cfg.price_max,
            });
        }
        if offer.quantity > self.inventories[i] {
            return Err(MarketError::QuantityExceedsInventory {
                quantity: offer.quantity,
                inventory: self.inventories[i],
            });
        }
        let mut next = self.clone();
        next.offers[i] = Some(offer);
        next.offer_remaining[i] = offer.quantity;
        next.stage += 1;
        Ok(next)
    }

    /// Project desired per-seller demand fractions onto a feasible purchase.
    ///
    /// Deterministic procedure: take `floor(fraction_i * D_j)` units per
    /// seller, clamp to the remaining offered quantity, then while the volume
    /// or budget constraint is violated remove one unit at a time from the
    /// highest-priced seller still allocated units (ties broken toward the
    /// higher seller index). Always yields a feasible, possibly all-zero,
    /// allocation.
    pub fn project_buyer_allocation(
        &self,
        cfg: &EnvConfig,
        j: usize,
        desired_fractions: &[f64],
    ) -> Result<Allocation, MarketError> {
        self.require_stage(cfg.n_sellers + j + 1)?;
        let demand = self.demands[j];
        let mut units: Vec<u32> = (0..cfg.n_sellers)
            .map(|i| {
                let frac = desired_fractions[i].clamp(0.0, 1.0);
                let desired = (frac * f64::from(demand)).floor() as u32;
                desired.min(self.offer_remaining[i])
            })
            .collect();

        let price = |i: usize| self.offers[i].expect("all offers posted").price;
        // Highest price wins removal; ties go to the higher seller index.
        let removal_target = |units: &[u32]| -> Option<usize> {
            let mut best: Option<usize> = None;
            for i in 0..units.len() {
                if units[i] == 0 {
                    continue;
                }
                best = match best {
                    None => Some(i),
                    Some(b) if price(i) >= price(b) => Some(i),
                    keep => keep,
                };
            }
            best
        };

        while units.iter().sum::<u32>() > demand {
            let i = removal_target(&units).expect("positive total implies a target");
            units[i] -= 1;
        }
        let cost = |units: &[u32]| -> f64 {
            units
                .iter()
                .enumerate()
                .map(|(i, &u)| f64::from(price(i)) * f64::from(u))
                .sum()
        };
        let budget = budget_limit(cfg, demand);
        while cost(&units) > budget {
            let i = removal_target(&units).expect("positive cost implies a target");
            units[i] -= 1;
        }
        Ok(Allocation {
            per_seller_units: units,
        })
    }

    /// Apply a feasible allocation for buyer `j`: decrement inventories,
    /// remaining offered quantities and the buyer's residual demand, record
    /// the sales, and advance the stage.
    pub fn apply_buyer_allocation(
        &self,
        cfg: &EnvConfig,
        j: usize,
        alloc: &Allocation,
    ) -> Result<Self, MarketError> {
        self.require_stage(cfg.n_sellers + j + 1)?;
        let infeasible = |msg: String| Err(MarketError::InfeasibleAllocation(msg));
        if alloc.per_seller_units.len() != cfg.n_sellers {
            return infeasible(format!(
                "allocation has {} entries, expected {}",
                alloc.per_seller_units.len(),
                cfg.n_sellers
            ));
        }
        let mut cost = 0.0;
        for (i, &u) in alloc.per_seller_units.iter().enumerate() {
            if u > self.offer_remaining[i] {
                return infeasible(format!(
                    "buys {u} units from seller {i} but only {} remain offered",
                    self.offer_remaining[i]
                ));
            }
            cost += f64::from(self.offers[i].expect("all offers posted").price) * f64::from(u);
        }
        let total = alloc.total_units();
        if total > self.demands[j] {
            return infeasible(format!(
                "buys {total} units against residual demand {}",
                self.demands[j]
            ));
        }
        if cost > budget_limit(cfg, self.demands[j]) {
            return infeasible(format!(
                "cost {cost} exceeds budget {}",
                budget_limit(cfg, self.demands[j])
            ));
        }
        let mut next = self.clone();
        for (i, &u) in alloc.per_seller_units.iter().enumerate() {
            next.inventories[i] -= u;
            next.offer_remaining[i] -= u;
            next.sales[i][j] += u;
        }
        next.demands[j] -= total;
        next.stage += 1;
        Ok(next)
    }

    /// Close the episode and compute the terminal ledger. Requires every
    /// agent to have acted.
    pub fn finalize_episode(&self, cfg: &EnvConfig) -> Result<EpisodeLedger, MarketError> {
        if !self.is_done(cfg) {
            return Err(MarketError::PrematureFinalize {
                stage: self.stage,
                n_agents: cfg.n_agents(),
            });
        }
        let offers: Vec<Offer> = self
            .offers
            .iter()
            .map(|o| o.expect("all offers posted in a finished episode"))
            .collect();
        let sold_per_seller: Vec<u32> = self.sales.iter().map(|row| row.iter().sum()).collect();
        let unsold_per_seller: Vec<u32> = offers
            .iter()
            .zip(&sold_per_seller)
            .map(|(o, &sold)| o.quantity - sold)
            .collect();
        let purchased_per_buyer: Vec<u32> = (0..cfg.n_buyers)
            .map(|j| self.sales.iter().map(|row| row[j]).sum())
            .collect();
        let spend_per_buyer: Vec<f64> = (0..cfg.n_buyers)
            .map(|j| {
                self.sales
                    .iter()
                    .enumerate()
                    .map(|(i, row)| f64::from(offers[i].price) * f64::from(row[j]))
                    .sum()
            })
            .collect();
        let unmet_demand_per_buyer: Vec<u32> = self.demands.clone();
        let total_unmet: u32 = unmet_demand_per_buyer.iter().sum();
        let profit_per_seller: Vec<f64> = offers
            .iter()
            .zip(&sold_per_seller)
            .map(|(o, &sold)| (f64::from(o.price) - cfg.unit_cost) * f64::from(sold))
            .collect();
        // Quantity-weighted margin; with one price per seller per episode
        // this reduces to (p - c) / p on any actual sales.
        let margin_per_seller: Vec<f64> = offers
            .iter()
            .zip(&sold_per_seller)
            .map(|(o, &sold)| {
                if sold == 0 {
                    0.0
                } else {
                    (f64::from(o.price) - cfg.unit_cost) / f64::from(o.price)
                }
            })
            .collect();
        let total_sold: u32 = sold_per_seller.iter().sum();
        let no_trade = total_sold == 0;
        let sales_share_per_seller: Vec<f64> = if no_trade {
            vec![1.0 / cfg.n_sellers as f64; cfg.n_sellers]
        } else {
            sold_per_seller
                .iter()
                .map(|&s| f64::from(s) / f64::from(total_sold))
                .collect()
        };
        Ok(EpisodeLedger {
            offers,
            sales_matrix: self.sales.clone(),
            initial_inventories: self.initial_inventories.clone(),
            initial_demands: self.initial_demands.clone(),
            profit_per_seller,
            spend_per_buyer,
            purchased_per_buyer,
            unsold_per_seller,
            unmet_demand_per_buyer,
            total_unmet,
            margin_per_seller,
            sales_share_per_seller,
            no_trade,
        })
    }
}

/// Terminal record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLedger {
    /// Final offer per seller, as posted.
    pub offers: Vec<Offer>,
    /// Units sold, `[seller][buyer]`.
    pub sales_matrix: Vec<Vec<u32>>,
    pub initial_inventories: Vec<u32>,
    pub initial_demands: Vec<u32>,
    /// Gross trading profit `(p - c) * units sold` per seller; shortfall and
    /// unsold penalties are applied by the reward functions, not here.
    pub profit_per_seller: Vec<f64>,
    pub spend_per_buyer: Vec<f64>,
    pub purchased_per_buyer: Vec<u32>,
    /// Offered-but-unsold units per seller.
    pub unsold_per_seller: Vec<u32>,
    pub unmet_demand_per_buyer: Vec<u32>,
    /// Episode-wide demand shortfall, shared by every agent's reward.
    pub total_unmet: u32,
    pub margin_per_seller: Vec<f64>,
    pub sales_share_per_seller: Vec<f64>,
    /// True when no units traded anywhere; shares are then defined as equal.
    pub no_trade: bool,
}

impl EpisodeLedger {
    pub fn n_sellers(&self) -> usize {
        self.offers.len()
    }

    pub fn n_buyers(&self) -> usize {
        self.initial_demands.len()
    }

    pub fn units_sold_by(&self, i: usize) -> u32 {
        self.sales_matrix[i].iter().sum()
    }

    pub fn total_units_sold(&self) -> u32 {
        self.sales_matrix.iter().flatten().sum()
    }

    /// Quantity-weighted average price paid by buyer `j`, if they bought
    /// anything.
    pub fn mean_paid_price(&self, j: usize) -> Option<f64> {
        if self.purchased_per_buyer[j] == 0 {
            None
        } else {
            Some(self.spend_per_buyer[j] / f64::from(self.purchased_per_buyer[j]))
        }
    }
}

/// Raw economic reward for seller `i`: unit margin on units sold, minus the
/// shared shortfall penalty, minus the unsold-offer penalty.
pub fn raw_seller_reward(ledger: &EpisodeLedger, i: usize, cfg: &EnvConfig) -> f64 {
    let sold = f64::from(ledger.units_sold_by(i));
    let price = f64::from(ledger.offers[i].price);
    (price - cfg.unit_cost) * sold
        - cfg.shortfall_penalty * f64::from(ledger.total_unmet)
        - cfg.unsold_penalty * f64::from(ledger.unsold_per_seller[i])
}

/// Raw economic reward for buyer `j`: negative spending minus the shared
/// shortfall penalty.
pub fn raw_buyer_reward(ledger: &EpisodeLedger, j: usize, cfg: &EnvConfig) -> f64 {
    let spend: f64 = ledger
        .sales_matrix
        .iter()
        .enumerate()
        .map(|(i, row)| f64::from(ledger.offers[i].price) * f64::from(row[j]))
        .sum();
    -spend - cfg.shortfall_penalty * f64::from(ledger.total_unmet)
}
