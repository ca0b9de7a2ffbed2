//! Fairness scoring of finished episodes.
//!
//! A finished [`EpisodeLedger`] is serialised into a deterministic prompt and
//! scored by a critic backend: either a remote chat-completion endpoint
//! ([`llm::LlmCritic`]) or the deterministic [`scripted::ScriptedCritic`]
//! used for tests and offline runs. A critic produces one FTB
//! (fairness-to-buyer) score per buyer and one global FBS
//! (fairness-between-sellers) score, all in `[0, 1]`.
//!
//! Responses that do not match the required JSON schema yield an
//! [`InvalidReason`]; invalid episodes are discarded upstream, never patched
//! with substitute scores.

pub mod llm;
pub mod scripted;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{EnvConfig, EpisodeLedger};

pub use llm::{score_llm, LlmCritic};
pub use scripted::{score_scripted, ScriptedCritic};

/// Fairness scores for one episode. Serialises to the wire schema
/// `{"ftb": [...], "fbs": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessScores {
    #[serde(rename = "ftb")]
    pub ftb_per_buyer: Vec<f64>,
    pub fbs: f64,
}

impl FairnessScores {
    /// Mean FTB over buyers, the quantity entering seller reward shaping.
    pub fn mean_ftb(&self) -> f64 {
        crate::stats::mean(&self.ftb_per_buyer)
    }

    /// Render to the exact JSON schema a critic is asked to reply with.
    pub fn render_json(&self) -> String {
        serde_json::to_string(self).expect("scores always serialize")
    }
}

/// Why a critic response was rejected.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum InvalidReason {
    /// No parseable JSON object, or fields of the wrong type.
    MalformedJson,
    /// The `ftb` array length does not match the buyer count.
    WrongFtbCount { expected: usize, actual: usize },
    /// A score fell outside `[0, 1]`.
    OutOfRange,
    /// A required key (`ftb` or `fbs`) is absent.
    MissingKey { key: String },
    /// Request kept failing after all retries.
    Transport { detail: String },
    /// Request timed out after all retries.
    Timeout,
}

impl InvalidReason {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            InvalidReason::MalformedJson => "malformed-json",
            InvalidReason::WrongFtbCount { .. } => "wrong-ftb-count",
            InvalidReason::OutOfRange => "out-of-range",
            InvalidReason::MissingKey { .. } => "missing-key",
            InvalidReason::Transport { .. } => "transport",
            InvalidReason::Timeout => "timeout",
        }
    }
}

/// Outcome of scoring one episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CriticVerdict {
    Scored(FairnessScores),
    Invalid(InvalidReason),
}

impl CriticVerdict {
    pub fn is_scored(&self) -> bool {
        matches!(self, CriticVerdict::Scored(_))
    }

    pub fn scores(&self) -> Option<&FairnessScores> {
        match self {
            CriticVerdict::Scored(s) => Some(s),
            CriticVerdict::Invalid(_) => None,
        }
    }
}

/// Which scoring backend to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticBackend {
    Llm,
    Scripted,
}

/// Critic backend configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriticConfig {
    pub backend: CriticBackend,
    /// Full URL of a chat-completion-compatible endpoint.
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default)]
    pub model_name: String,
    /// Name of the environment variable holding the API key. Empty means no
    /// Authorization header (local or mock endpoints). The key itself is
    /// never logged.
    #[serde(default)]
    pub api_key_env_var: String,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
}

fn default_timeout_secs() -> f64 {
    30.0
}

fn default_max_retries() -> u32 {
    2
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            backend: CriticBackend::Scripted,
            endpoint_url: String::new(),
            model_name: String::new(),
            api_key_env_var: String::new(),
            request_timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            temperature: 0.0,
        }
    }
}

impl CriticConfig {
    pub fn validate(&self) -> Result<(), CriticError> {
        if self.backend == CriticBackend::Llm {
            if self.endpoint_url.is_empty() {
                return Err(CriticError::InvalidConfig(
                    "llm backend requires endpoint_url".into(),
                ));
            }
            if self.model_name.is_empty() {
                return Err(CriticError::InvalidConfig(
                    "llm backend requires model_name".into(),
                ));
            }
        }
        if !self.request_timeout_secs.is_finite() || self.request_timeout_secs <= 0.0 {
            return Err(CriticError::InvalidConfig(
                "request_timeout_secs must be positive".into(),
            ));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(CriticError::InvalidConfig(
                "temperature must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Construction-time critic failures. Scoring failures are expressed as
/// [`CriticVerdict::Invalid`], never as errors.
#[derive(Debug, Error)]
pub enum CriticError {
    #[error("invalid critic config: {0}")]
    InvalidConfig(String),
    #[error("api key environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("http client: {0}")]
    Http(#[from] reqwest::Error),
}

/// A scoring backend. Implementations must be pure per ledger or manage
/// their own I/O; the trainer treats every verdict identically.
pub trait EpisodeCritic: Send + Sync {
    fn score(&self, ledger: &EpisodeLedger, env: &EnvConfig) -> CriticVerdict;
}

/// Build the backend named by the config.
pub fn build_critic(cfg: &CriticConfig) -> Result<Box<dyn EpisodeCritic>, CriticError> {
    cfg.validate()?;
    match cfg.backend {
        CriticBackend::Scripted => Ok(Box::new(ScriptedCritic)),
        CriticBackend::Llm => Ok(Box::new(LlmCritic::new(cfg.clone())?)),
    }
}

/// Serialise a finished ledger into the scoring prompt.
///
/// The output is byte-identical for equal ledgers: a fixed header describing
/// the two scores and the required response schema, then one line per seller
/// (price, offered, sold, profit, margin, unsold) and one per buyer (demand,
/// purchased, spend, unmet), every number rendered with two decimals.
pub fn serialize_prompt(ledger: &EpisodeLedger, cfg: &EnvConfig) -> String {
    let n_buyers = ledger.n_buyers();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "You are auditing one episode of a peer-to-peer market with {} sellers and {} buyers.",
        ledger.n_sellers(),
        n_buyers
    );
    out.push_str(
        "Score the episode on two fairness metrics, each a number in [0, 1]:\n\
         - FTB (fairness-to-buyer): one score per buyer; high when that buyer's demand \
         was satisfied at reasonable prices.\n\
         - FBS (fairness-between-sellers): one global score; high when seller profits \
         are balanced and no seller dominates sales.\n",
    );
    let _ = writeln!(
        out,
        "Respond with exactly one JSON object of the form {{\"ftb\": [f_1, ..., f_{n_buyers}], \
         \"fbs\": f}} where \"ftb\" has one entry per buyer in index order. No other text."
    );
    out.push_str("\nEpisode outcome:\n");
    for (i, offer) in ledger.offers.iter().enumerate() {
        let _ = writeln!(
            out,
            "Seller {}: price={:.2} offered={:.2} sold={:.2} profit={:.2} margin={:.2} unsold={:.2}",
            i + 1,
            f64::from(offer.price),
            f64::from(offer.quantity),
            f64::from(ledger.units_sold_by(i)),
            ledger.profit_per_seller[i],
            ledger.margin_per_seller[i],
            f64::from(ledger.unsold_per_seller[i]),
        );
    }
    for j in 0..n_buyers {
        let _ = writeln!(
            out,
            "Buyer {}: demand={:.2} purchased={:.2} spend={:.2} unmet={:.2}",
            j + 1,
            f64::from(ledger.initial_demands[j]),
            f64::from(ledger.purchased_per_buyer[j]),
            ledger.spend_per_buyer[j],
            f64::from(ledger.unmet_demand_per_buyer[j]),
        );
    }
    let _ = writeln!(
        out,
        "Total unmet demand: {:.2}. Budget limit per buyer: {:.2} times demand.",
        f64::from(ledger.total_unmet),
        cfg.budget_multiplier
    );
    out
}

/// Find the first balanced `{...}` region in free-form text.
fn first_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=start + offset]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Validate a critic response against the required schema.
///
/// Extracts the first JSON object from the text; `Scored` iff it carries an
/// `ftb` array of `n_buyers` numbers and a numeric `fbs`, all within
/// `[0, 1]`. Every failure mode is an [`InvalidReason`], never an error.
pub fn parse_scores(response_text: &str, n_buyers: usize) -> CriticVerdict {
    let invalid = CriticVerdict::Invalid;
    let Some(candidate) = first_json_object(response_text) else {
        return invalid(InvalidReason::MalformedJson);
    };
    let Ok(value) = serde_json::from_str::<serde_json::Value>(candidate) else {
        return invalid(InvalidReason::MalformedJson);
    };
    let Some(object) = value.as_object() else {
        return invalid(InvalidReason::MalformedJson);
    };
    for key in ["ftb", "fbs"] {
        if !object.contains_key(key) {
            return invalid(InvalidReason::MissingKey { key: key.into() });
        }
    }
    let Some(ftb_array) = object["ftb"].as_array() else {
        return invalid(InvalidReason::MalformedJson);
    };
    let mut ftb = Vec::with_capacity(ftb_array.len());
    for v in ftb_array {
        match v.as_f64() {
            Some(f) => ftb.push(f),
            None => return invalid(InvalidReason::MalformedJson),
        }
    }
    let Some(fbs) = object["fbs"].as_f64() else {
        return invalid(InvalidReason::MalformedJson);
    };
    if ftb.len() != n_buyers {
        return invalid(InvalidReason::WrongFtbCount {
            expected: n_buyers,
            actual: ftb.len(),
        });
    }
    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
    if !ftb.iter().copied().all(in_unit) || !in_unit(fbs) {
        return invalid(InvalidReason::OutOfRange);
    }
    CriticVerdict::Scored(FairnessScores {
        ftb_per_buyer: ftb,
        fbs,
    })
}
