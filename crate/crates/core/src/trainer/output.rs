//! Run-directory file writers: per-episode metrics, moving-average curves,
//! the final KPI report, and the resolved configuration.
//!
//! All values are written with Rust's shortest round-trip float formatting,
//! so identical runs produce byte-identical files.

use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{EpisodeRecord, KpiReport, TrainError, TrainingConfig};

/// One row of the moving-average curves.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub t: u64,
    /// Moving-average shaped reward per agent (sellers then buyers), present
    /// once at least one scored episode has been seen.
    pub reward_ma: Vec<Option<f64>>,
    pub mean_ftb_ma: Option<f64>,
    pub fbs_ma: Option<f64>,
}

/// Moving averages over the last `window` *scored* episodes; discarded
/// episodes carry the averages forward unchanged.
pub fn moving_average_curves(
    records: &[EpisodeRecord],
    n_agents: usize,
    window: usize,
) -> Vec<CurvePoint> {
    let window = window.max(1);
    let mut reward_windows: Vec<VecDeque<f64>> = vec![VecDeque::new(); n_agents];
    let mut reward_sums = vec![0.0f64; n_agents];
    let mut ftb_window: VecDeque<f64> = VecDeque::new();
    let mut ftb_sum = 0.0;
    let mut fbs_window: VecDeque<f64> = VecDeque::new();
    let mut fbs_sum = 0.0;
    let mut curves = Vec::with_capacity(records.len());
    for record in records {
        if let (Some(shaped), Some(scores)) = (&record.shaped_rewards, record.verdict.scores()) {
            for (a, &reward) in shaped.iter().enumerate() {
                reward_windows[a].push_back(reward);
                reward_sums[a] += reward;
                if reward_windows[a].len() > window {
                    reward_sums[a] -= reward_windows[a].pop_front().expect("non-empty window");
                }
            }
            ftb_window.push_back(scores.mean_ftb());
            ftb_sum += scores.mean_ftb();
            if ftb_window.len() > window {
                ftb_sum -= ftb_window.pop_front().expect("non-empty window");
            }
            fbs_window.push_back(scores.fbs);
            fbs_sum += scores.fbs;
            if fbs_window.len() > window {
                fbs_sum -= fbs_window.pop_front().expect("non-empty window");
            }
        }
        let reward_ma = reward_windows
            .iter()
            .zip(&reward_sums)
            .map(|(w, &sum)| {
                if w.is_empty() {
                    None
                } else {
                    Some(sum / w.len() as f64)
                }
            })
            .collect();
        curves.push(CurvePoint {
            t: record.t,
            reward_ma,
            mean_ftb_ma: if ftb_window.is_empty() {
                None
            } else {
                Some(ftb_sum / ftb_window.len() as f64)
            },
            fbs_ma: if fbs_window.is_empty() {
                None
            } else {
                Some(fbs_sum / fbs_window.len() as f64)
            },
        });
    }
    curves
}

fn agent_columns(cfg: &TrainingConfig, suffix: &str) -> Vec<String> {
    let mut cols = Vec::new();
    for i in 0..cfg.env.n_sellers {
        cols.push(format!("seller{}_{}", i + 1, suffix));
    }
    for j in 0..cfg.env.n_buyers {
        cols.push(format!("buyer{}_{}", j + 1, suffix));
    }
    cols
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write the per-episode metrics table.
pub fn write_metrics_csv(
    path: &Path,
    cfg: &TrainingConfig,
    records: &[EpisodeRecord],
) -> Result<(), TrainError> {
    let mut out = String::new();
    let mut header = vec!["t".to_string(), "lambda_buy".into(), "lambda_peer".into()];
    let raw_cols = agent_columns(cfg, "raw");
    let shaped_cols = agent_columns(cfg, "shaped");
    for (raw, shaped) in raw_cols.iter().zip(&shaped_cols) {
        header.push(raw.clone());
        header.push(shaped.clone());
    }
    for j in 0..cfg.env.n_buyers {
        header.push(format!("ftb_buyer{}", j + 1));
    }
    header.push("fbs".into());
    header.push("d_unsat".into());
    header.push("discarded".into());
    out.push_str(&header.join(","));
    out.push('\n');

    let n_agents = cfg.env.n_agents();
    for record in records {
        let mut row = vec![
            record.t.to_string(),
            record.lambda_buy.to_string(),
            record.lambda_peer.to_string(),
        ];
        for a in 0..n_agents {
            row.push(record.raw_rewards[a].to_string());
            row.push(fmt_opt(record.shaped_rewards.as_ref().map(|s| s[a])));
        }
        match record.verdict.scores() {
            Some(scores) => {
                for &f in &scores.ftb_per_buyer {
                    row.push(f.to_string());
                }
                row.push(scores.fbs.to_string());
            }
            None => {
                for _ in 0..cfg.env.n_buyers {
                    row.push(String::new());
                }
                row.push(String::new());
            }
        }
        row.push(record.ledger.total_unmet.to_string());
        row.push(if record.verdict.is_scored() { "0" } else { "1" }.to_string());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write the moving-average curves table.
pub fn write_curves_csv(
    path: &Path,
    cfg: &TrainingConfig,
    curves: &[CurvePoint],
) -> Result<(), TrainError> {
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    header.extend(agent_columns(cfg, "reward_ma"));
    header.push("mean_ftb_ma".into());
    header.push("fbs_ma".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for point in curves {
        let mut row = vec![point.t.to_string()];
        for &ma in &point.reward_ma {
            row.push(fmt_opt(ma));
        }
        row.push(fmt_opt(point.mean_ftb_ma));
        row.push(fmt_opt(point.fbs_ma));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_kpi_json(path: &Path, kpi: &KpiReport) -> Result<(), TrainError> {
    let mut file = fs::File::create(path)?;
    let text = serde_json::to_string_pretty(kpi).expect("kpi serializes");
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Persist every effective configuration value, defaults included, so a run
/// directory fully documents how it was produced.
pub fn write_resolved_config(path: &Path, cfg: &TrainingConfig) -> Result<(), TrainError> {
    let mut file = fs::File::create(path)?;
    let text = serde_json::to_string_pretty(cfg).expect("config serializes");
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}
