//! End-to-end tests of the `souk` binary: exit codes, run-directory
//! contents, and subcommand behavior.

use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use souk_core::critic::ScriptedCritic;
use souk_core::market::{EnvConfig, MarketState, Offer};
use souk_core::trainer::TrainingConfig;

fn souk(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_souk"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

#[test]
fn config_init_writes_the_reference_case_study() {
    let dir = tempfile::tempdir().unwrap();
    let out = souk(&["config-init", "--output", "cfg.json"], dir.path());
    assert!(out.status.success());
    let text = std::fs::read_to_string(dir.path().join("cfg.json")).unwrap();
    let cfg: TrainingConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg.env.n_sellers, 2);
    assert_eq!(cfg.env.n_buyers, 1);
    assert_eq!(cfg.env.inventory_range_per_seller, vec![[8, 25], [10, 30]]);
    assert_eq!(cfg.env.demand_range_per_buyer, vec![[20, 50]]);
    assert_eq!(cfg.ppo.gamma, 0.95);
    assert_eq!(cfg.total_episodes, 20_000);
    cfg.validate().unwrap();
}

#[test]
fn train_smoke_writes_the_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    assert!(souk(&["config-init", "--output", "cfg.json"], dir.path())
        .status
        .success());
    let out = souk(
        &[
            "train",
            "--config",
            "cfg.json",
            "--critic",
            "scripted",
            "--seed",
            "7",
            "--episodes",
            "300",
            "--output",
            "run",
            "--save-every",
            "200",
            "kpi_window=100",
            "reward_ma_window=50",
            "ppo.batch_episodes=64",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for file in ["metrics.csv", "curves.csv", "kpi.json", "resolved-config.json"] {
        assert!(run.join(file).is_file(), "missing {file}");
    }
    assert!(run.join("checkpoints/final.ckpt").is_file());
    assert!(run.join("checkpoints/ckpt_ep0000200.ckpt").is_file());

    let resolved: TrainingConfig =
        serde_json::from_str(&std::fs::read_to_string(run.join("resolved-config.json")).unwrap())
            .unwrap();
    assert_eq!(resolved.seed, 7);
    assert_eq!(resolved.total_episodes, 300);
    assert_eq!(resolved.kpi_window, 100);
    assert_eq!(resolved.ppo.batch_episodes, 64);

    let kpi: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("kpi.json")).unwrap()).unwrap();
    assert!(kpi["mean_ftb"].is_number());
    assert_eq!(kpi["budget_violations"], 0);

    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 301);

    // Evaluate greedily from the final checkpoint.
    let out = souk(
        &[
            "evaluate",
            "--config",
            "cfg.json",
            "--load-checkpoint",
            "run/checkpoints/final.ckpt",
            "--episodes",
            "40",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let kpi: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(kpi["episodes"], 40);
}

#[test]
fn malformed_config_is_a_config_error_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    let out = souk(
        &["train", "--config", "bad.json", "--output", "run"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("run").exists(), "output dir must not be created");

    // Schema-valid JSON with an invalid value is also a config error.
    std::fs::write(
        dir.path().join("invalid.json"),
        r#"{"env": {"n_sellers": 0}}"#,
    )
    .unwrap();
    let out = souk(
        &["train", "--config", "invalid.json", "--output", "run"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("run").exists());
}

#[test]
fn unknown_flags_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = souk(&["train", "--definitely-not-a-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr).to_lowercase();
    assert!(err.contains("usage") || err.contains("unexpected"), "stderr: {err}");
}

#[test]
fn score_episode_prints_deterministic_prompt_and_verdict() {
    let dir = tempfile::tempdir().unwrap();
    // Build a finished episode through the real market path.
    let cfg = EnvConfig::default();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let state = MarketState::new_episode(&cfg, 0, &mut rng);
    let state = state
        .apply_seller_offer(&cfg, 0, Offer { price: 5, quantity: 8 })
        .unwrap();
    let state = state
        .apply_seller_offer(&cfg, 1, Offer { price: 4, quantity: 10 })
        .unwrap();
    let alloc = state
        .project_buyer_allocation(&cfg, 0, &[0.4, 0.6])
        .unwrap();
    let state = state.apply_buyer_allocation(&cfg, 0, &alloc).unwrap();
    let ledger = state.finalize_episode(&cfg).unwrap();
    std::fs::write(
        dir.path().join("ledger.json"),
        serde_json::to_string_pretty(&ledger).unwrap(),
    )
    .unwrap();

    let args = ["score-episode", "--ledger", "ledger.json"];
    let first = souk(&args, dir.path());
    assert!(first.status.success(), "stderr: {}", String::from_utf8_lossy(&first.stderr));
    let second = souk(&args, dir.path());
    assert_eq!(stdout(&first), stdout(&second), "scoring must be deterministic");
    let text = stdout(&first);
    assert!(text.contains("--- prompt ---"));
    assert!(text.contains("Seller 1:"));
    assert!(text.contains("\"Scored\""));

    // The verdict matches scoring the ledger directly.
    use souk_core::critic::EpisodeCritic;
    let expected = ScriptedCritic.score(&ledger, &cfg);
    let fbs = expected.scores().unwrap().fbs;
    assert!(text.contains(&format!("{fbs}")));

    // The ledger can also arrive on standard input.
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_souk"))
        .args(["score-episode"])
        .current_dir(dir.path())
        .env("RUST_LOG", "warn")
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(serde_json::to_string(&ledger).unwrap().as_bytes())
        .unwrap();
    let piped = child.wait_with_output().unwrap();
    assert!(piped.status.success());
    assert_eq!(String::from_utf8_lossy(&piped.stdout), stdout(&first));
}

#[test]
fn no_shaping_flag_disables_the_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let out = souk(
        &[
            "train",
            "--no-shaping",
            "--episodes",
            "60",
            "--output",
            "run",
            "kpi_window=20",
            "ppo.batch_episodes=32",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let resolved: TrainingConfig = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("run/resolved-config.json")).unwrap(),
    )
    .unwrap();
    assert!(!resolved.shaping.enabled);
    // With shaping disabled every logged lambda is zero.
    let metrics = std::fs::read_to_string(dir.path().join("run/metrics.csv")).unwrap();
    for line in metrics.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1], "0");
        assert_eq!(fields[2], "0");
    }
}

#[test]
fn ablate_smoke_writes_both_arms_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let out = souk(
        &[
            "ablate",
            "--episodes",
            "200",
            "--seed",
            "3",
            "--output",
            "ab",
            "kpi_window=50",
            "ppo.batch_episodes=64",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    for file in [
        "ab/shaped/metrics.csv",
        "ab/baseline/metrics.csv",
        "ab/ablation.json",
    ] {
        assert!(dir.path().join(file).is_file(), "missing {file}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ab/ablation.json")).unwrap())
            .unwrap();
    let comparison = &summary["comparison"];
    for key in [
        "delta_mean_ftb",
        "delta_mean_fbs",
        "delta_full_demand_frac",
        "delta_profit_gap",
    ] {
        assert!(comparison[key].is_number(), "missing comparison entry {key}");
    }
    assert!(stdout(&out).contains("shaped vs baseline"));
}
