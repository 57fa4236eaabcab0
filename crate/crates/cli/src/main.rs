use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ppnlab::experiment::{self, ExperimentConfig, ExperimentError, DEMOS_FILE, IL_CHECKPOINT};
use ppnlab::ppo::Granularity;

#[derive(Parser)]
#[command(name = "ppnlab", version, about = "Post-processing policy experiments on a simulated dialogue pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Checkpoint to start from or evaluate (`none` evaluates the bare pipeline).
    #[arg(long, global = true)]
    checkpoint: Option<String>,
    /// Value and advantage granularity, overriding the configuration.
    #[arg(long, global = true, value_parser = ["module", "turn"])]
    granularity: Option<String>,
    /// Demonstration dataset for train-il.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect pipeline histories and build the demonstration dataset.
    GenDemos,
    /// Fit the policy to the demonstrations.
    TrainIl,
    /// Fine-tune an imitation checkpoint with PPO.
    TrainRl,
    /// Evaluate a checkpoint, or the raw pipeline.
    Evaluate,
    /// Train and compare module-level and turn-level estimation over several seeds.
    Ablate,
    /// Print the effective configuration as TOML.
    Config,
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.display().to_string();
    }
    if let Some(g) = &cli.granularity {
        cfg.rl.value_granularity = g.parse::<Granularity>()?;
    }
    let out = PathBuf::from(&cfg.out_dir);
    let checkpoint = |default: &str| -> PathBuf {
        cli.checkpoint.as_ref().map_or_else(|| out.join(default), PathBuf::from)
    };
    match cli.command {
        Command::GenDemos => {
            let s = experiment::gen_demos(&cfg, &out)?;
            println!("{}", serde_json::to_string(&s)?);
        }
        Command::TrainIl => {
            let dataset = cli.dataset.clone().unwrap_or_else(|| out.join(DEMOS_FILE));
            let r = experiment::train_imitation(&cfg, &dataset, &out)?;
            println!(
                "{}",
                serde_json::json!({
                    "copy_exact_match": r.copy_exact_match,
                    "reconstruction_exact_match": r.reconstruction_exact_match,
                    "held_out_instances": r.held_out_instances,
                })
            );
        }
        Command::TrainRl => {
            let r = experiment::train_rl(&cfg, &checkpoint(IL_CHECKPOINT), &out)?;
            let last = r.history.last();
            println!(
                "{}",
                serde_json::json!({
                    "granularity": r.granularity,
                    "seed": r.seed,
                    "iterations": r.history.len(),
                    "final_rollout_success": last.map(|m| m.success_rate),
                    "checkpoint": r.checkpoint,
                })
            );
        }
        Command::Evaluate => {
            let target = cli.checkpoint.as_deref().unwrap_or("none");
            let (ckpt, name) = if target == "none" {
                (None, "eval-none.json".to_string())
            } else {
                let stem = Path::new(target).file_stem().map_or("checkpoint".into(), |s| s.to_string_lossy());
                (Some(Path::new(target)), format!("eval-{stem}.json"))
            };
            let e = experiment::evaluate(&cfg, ckpt)?;
            experiment::write_evaluation(&out, &name, &e)?;
            println!("{}", serde_json::to_string(&e)?);
        }
        Command::Ablate => {
            let r = experiment::ablate(&cfg, &checkpoint(IL_CHECKPOINT), &out)?;
            println!(
                "{}",
                serde_json::json!({
                    "baseline_success": r.baseline_success,
                    "module_mean_success": r.module_mean_success,
                    "turn_mean_success": r.turn_mean_success,
                    "module_tail_advantage_std": r.module_tail_advantage_std,
                    "turn_tail_advantage_std": r.turn_tail_advantage_std,
                })
            );
        }
        Command::Config => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error code={} message={}", e.code(), serde_json::to_string(&msg).unwrap_or_default());
            ExitCode::FAILURE
        }
    }
}
