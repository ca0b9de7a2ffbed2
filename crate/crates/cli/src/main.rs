//! `souk` command-line interface: configuration loading with dotted-path
//! overrides, subcommand dispatch, and run-directory outputs.
//!
//! Exit codes: 0 on success, 2 for configuration/usage errors (including
//! unparseable flags), 3 for runtime aborts (training divergence, critic
//! outage, I/O failures mid-run).

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use souk_core::checkpoint;
use souk_core::critic::{build_critic, serialize_prompt, CriticBackend};
use souk_core::market::EpisodeLedger;
use souk_core::trainer::{
    self, evaluate_policies, run_ablation, run_training, RunOptions, TrainingConfig,
};

#[derive(Parser)]
#[command(
    name = "souk",
    version,
    about = "Peer-to-peer market game with fairness-critic reward shaping and independent PPO"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train seller and buyer policies and write metrics, curves, KPIs and
    /// checkpoints to the output directory.
    Train(RunArgs),
    /// Run the shaped configuration and its no-shaping ablation with the
    /// same seeds, then print the comparison.
    Ablate(RunArgs),
    /// Load a checkpoint and run greedy episodes, reporting KPIs.
    Evaluate(EvaluateArgs),
    /// Read an episode ledger (JSON) and print the critic prompt and
    /// verdict. Debugging aid for the scoring pipeline.
    ScoreEpisode(ScoreEpisodeArgs),
    /// Write the default configuration file (the reference two-seller,
    /// one-buyer case study).
    ConfigInit(ConfigInitArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (JSON). Defaults to the built-in configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Critic backend override.
    #[arg(long, value_parser = parse_backend)]
    critic: Option<CriticBackend>,
    /// Force shaping off (ablation baseline).
    #[arg(long)]
    no_shaping: bool,
    /// Episode-count override.
    #[arg(long)]
    episodes: Option<u64>,
    /// Dotted-path overrides applied after the file, e.g.
    /// `shaping.buyer_fairness_weight=5` or `env.price_max=8`.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for metrics.csv, curves.csv, kpi.json,
    /// resolved-config.json and checkpoints.
    #[arg(long, default_value = "souk-run")]
    output: PathBuf,
    /// Guarantee a single-threaded, bitwise-reproducible run. The trainer is
    /// single-threaded by construction, so this is always in effect.
    #[arg(long)]
    single_thread: bool,
    /// Warm-start policies from a checkpoint.
    #[arg(long)]
    load_checkpoint: Option<PathBuf>,
    /// Also write a checkpoint every N episodes.
    #[arg(long, value_name = "N")]
    save_every: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint holding the policies to evaluate.
    #[arg(long, required = true)]
    load_checkpoint: PathBuf,
    /// Optional directory for kpi.json.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreEpisodeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Ledger JSON file; standard input when omitted.
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Args)]
struct ConfigInitArgs {
    /// Where to write the configuration file.
    #[arg(long, default_value = "souk-config.json")]
    output: PathBuf,
}

fn parse_backend(s: &str) -> Result<CriticBackend, String> {
    match s {
        "llm" => Ok(CriticBackend::Llm),
        "scripted" => Ok(CriticBackend::Scripted),
        other => Err(format!("unknown critic backend '{other}' (llm|scripted)")),
    }
}

/// Error classification driving the exit code.
enum AppError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

fn config_error(e: impl Into<anyhow::Error>) -> AppError {
    AppError::Config(e.into())
}

fn runtime_error(e: impl Into<anyhow::Error>) -> AppError {
    AppError::Runtime(e.into())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

/// Set one `a.b.c=value` override inside a JSON tree. Values parse as JSON
/// when possible (numbers, booleans, arrays) and fall back to strings.
fn apply_override(root: &mut serde_json::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{spec}' is not KEY=VALUE"))?;
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    let (last, ancestors) = parts.split_last().ok_or_else(|| anyhow!("empty override key"))?;
    for part in ancestors {
        node = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("override path '{path}' crosses a non-object"))?
            .entry(part.to_string())
            .or_insert_with(|| serde_json::json!({}));
    }
    node.as_object_mut()
        .ok_or_else(|| anyhow!("override path '{path}' crosses a non-object"))?
        .insert(last.to_string(), value);
    Ok(())
}

/// Load, override, deserialize, and validate the run configuration.
/// `horizon_override` rewrites `total_episodes` (train/ablate); commands
/// that reuse `--episodes` for other counts pass `None`.
fn load_config(args: &ConfigArgs, horizon_override: Option<u64>) -> Result<TrainingConfig, AppError> {
    let mut value = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(config_error)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .map_err(config_error)?
        }
        None => serde_json::to_value(TrainingConfig::default()).expect("default serializes"),
    };
    for spec in &args.overrides {
        apply_override(&mut value, spec).map_err(config_error)?;
    }
    if let Some(seed) = args.seed {
        value["seed"] = seed.into();
    }
    if let Some(backend) = args.critic {
        value["critic"]["backend"] = serde_json::to_value(backend).expect("backend serializes");
    }
    if args.no_shaping {
        value["shaping"]["enabled"] = false.into();
    }
    if let Some(episodes) = horizon_override {
        value["total_episodes"] = episodes.into();
    }
    let cfg: TrainingConfig = serde_json::from_value(value)
        .context("config does not match the expected schema")
        .map_err(config_error)?;
    cfg.validate().map_err(config_error)?;
    Ok(cfg)
}

fn load_checkpoint_policies(
    path: &Path,
    cfg: &TrainingConfig,
) -> Result<Vec<souk_core::Policy>, AppError> {
    let policies = checkpoint::load_policies(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))
        .map_err(config_error)?;
    if policies.len() != cfg.env.n_agents() {
        return Err(config_error(anyhow!(
            "checkpoint holds {} policies but the config has {} agents",
            policies.len(),
            cfg.env.n_agents()
        )));
    }
    Ok(policies)
}

fn print_kpi(label: &str, kpi: &trainer::KpiReport) {
    println!("{label}:");
    println!(
        "  episodes {}  full-demand {:.3}  mean FTB {:.3}  mean FBS {:.3}",
        kpi.episodes, kpi.full_demand_episode_frac, kpi.mean_ftb, kpi.mean_fbs
    );
    println!(
        "  margins [{:.3}, {:.3}]  max share {:.3}  budget violations {}  discarded {}",
        kpi.margin_range_per_seller[0],
        kpi.margin_range_per_seller[1],
        kpi.max_sales_share,
        kpi.budget_violations,
        kpi.discarded_episode_count
    );
    let profits: Vec<String> = kpi
        .mean_profit_per_seller
        .iter()
        .map(|p| format!("{p:.2}"))
        .collect();
    println!(
        "  mean profit per seller [{}]  profit gap {:.3}",
        profits.join(", "),
        trainer::relative_profit_gap(&kpi.mean_profit_per_seller)
    );
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Train(args) => {
            let cfg = load_config(&args.config, args.config.episodes)?;
            if args.single_thread {
                log::info!("single-thread mode requested; runs are always single-threaded");
            }
            let initial_policies = match &args.load_checkpoint {
                Some(path) => Some(load_checkpoint_policies(path, &cfg)?),
                None => None,
            };
            let opts = RunOptions {
                output_dir: Some(args.output.clone()),
                initial_policies,
                save_every: args.save_every,
            };
            let report = run_training(&cfg, opts).map_err(runtime_error)?;
            println!(
                "trained {} episodes ({} updates, {} discarded) -> {}",
                report.total_episodes,
                report.update_count,
                report.discarded_episodes,
                args.output.display()
            );
            if let Some(kpi) = &report.final_kpi {
                print_kpi("final-window KPIs", kpi);
            }
            Ok(())
        }
        Command::Ablate(args) => {
            let cfg = load_config(&args.config, args.config.episodes)?;
            let opts = RunOptions {
                output_dir: Some(args.output.clone()),
                initial_policies: None,
                save_every: args.save_every,
            };
            let report = run_ablation(&cfg, opts).map_err(runtime_error)?;
            if let Some(kpi) = &report.shaped.final_kpi {
                print_kpi("shaped", kpi);
            }
            if let Some(kpi) = &report.baseline.final_kpi {
                print_kpi("baseline (no shaping)", kpi);
            }
            let c = &report.comparison;
            println!("shaped vs baseline:");
            println!("  delta mean FTB         {:+.3}", c.delta_mean_ftb);
            println!("  delta mean FBS         {:+.3}", c.delta_mean_fbs);
            println!("  delta full-demand frac {:+.3}", c.delta_full_demand_frac);
            println!("  profit-gap reduction   {:+.3}", c.delta_profit_gap);
            Ok(())
        }
        Command::Evaluate(args) => {
            let cfg = load_config(&args.config, None)?;
            let policies = load_checkpoint_policies(&args.load_checkpoint, &cfg)?;
            let critic = build_critic(&cfg.critic).map_err(config_error)?;
            let episodes = args.config.episodes.unwrap_or(1_000);
            let (kpi, _records) =
                evaluate_policies(&cfg, &policies, episodes, critic.as_ref())
                    .map_err(runtime_error)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&kpi).expect("kpi serializes")
            );
            if let Some(dir) = &args.output {
                std::fs::create_dir_all(dir).map_err(runtime_error)?;
                std::fs::write(
                    dir.join("kpi.json"),
                    format!(
                        "{}\n",
                        serde_json::to_string_pretty(&kpi).expect("kpi serializes")
                    ),
                )
                .map_err(runtime_error)?;
                std::fs::write(
                    dir.join("resolved-config.json"),
                    format!(
                        "{}\n",
                        serde_json::to_string_pretty(&cfg).expect("config serializes")
                    ),
                )
                .map_err(runtime_error)?;
            }
            Ok(())
        }
        Command::ScoreEpisode(args) => {
            let cfg = load_config(&args.config, None)?;
            let text = match &args.ledger {
                Some(path) => std::fs::read_to_string(path)
                    .with_context(|| format!("reading ledger {}", path.display()))
                    .map_err(config_error)?,
                None => {
                    let mut buf = String::new();
                    std::io::stdin()
                        .read_to_string(&mut buf)
                        .context("reading ledger from stdin")
                        .map_err(config_error)?;
                    buf
                }
            };
            let ledger: EpisodeLedger = serde_json::from_str(&text)
                .context("ledger JSON does not match the episode-ledger schema")
                .map_err(config_error)?;
            let critic = build_critic(&cfg.critic).map_err(config_error)?;
            println!("--- prompt ---");
            print!("{}", serialize_prompt(&ledger, &cfg.env));
            println!("--- verdict ---");
            let verdict = critic.score(&ledger, &cfg.env);
            println!(
                "{}",
                serde_json::to_string_pretty(&verdict).expect("verdict serializes")
            );
            Ok(())
        }
        Command::ConfigInit(args) => {
            let cfg = TrainingConfig::default();
            let text = serde_json::to_string_pretty(&cfg).expect("default config serializes");
            std::fs::write(&args.output, format!("{text}\n"))
                .with_context(|| format!("writing {}", args.output.display()))
                .map_err(runtime_error)?;
            println!("wrote default configuration to {}", args.output.display());
            Ok(())
        }
    }
}
