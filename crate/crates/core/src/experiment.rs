//! Seeded end-to-end experiment pipelines behind the command-line driver.
//!
//! Every command is a pure function of the configuration and master seed;
//! outputs are line-delimited JSON so repeated runs are byte-identical.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Env, EnvConfig, EnvError};
use crate::imitation::{
    build_demo_dataset, collect_io_history, encode_dataset, exact_match, mean_nll, train_il, DatasetHeader, DemoConfig,
    DemoDataset, ExactMatch, ImitationError, TrainIlConfig,
};
use crate::model::{build_vocabulary, ModelConfig, ModelError, PolicyModel, SampleConfig, Vocabulary};
use crate::ppo::{evaluate_policy, run_training, Decoding, EvalReport, Granularity, IterationMetrics, PpoError, TrainConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Unwritable { path: String, source: std::io::Error },
    #[error("{0}")]
    VocabMismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Imitation(#[from] ImitationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlRead(#[from] toml::de::Error),
    #[error(transparent)]
    TomlWrite(#[from] toml::ser::Error),
}

impl ExperimentError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ExperimentError::Config(_) | ExperimentError::TomlRead(_) | ExperimentError::TomlWrite(_) => "config",
            ExperimentError::Unwritable { .. } => "unwritable",
            ExperimentError::VocabMismatch(_) => "vocab_mismatch",
            ExperimentError::Env(_) => "env",
            ExperimentError::Imitation(_) => "imitation",
            ExperimentError::Model(_) => "model",
            ExperimentError::Ppo(PpoError::NonFinite { .. }) => "non_finite",
            ExperimentError::Ppo(_) => "training",
            ExperimentError::Io(_) => "io",
            ExperimentError::Json(_) => "format",
        }
    }
}

type Result<T> = std::result::Result<T, ExperimentError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlSection {
    pub n_turns: usize,
    pub alpha: f64,
    pub k: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub final_lr_fraction: f64,
    pub holdout_fraction: f64,
}

impl Default for IlSection {
    fn default() -> Self {
        let t = TrainIlConfig::default();
        let d = DemoConfig::default();
        Self {
            n_turns: 5000,
            alpha: d.alpha,
            k: d.k,
            epochs: t.epochs,
            batch: t.batch,
            lr: t.lr,
            final_lr_fraction: t.final_lr_fraction,
            holdout_fraction: 0.1,
        }
    }
}

impl IlSection {
    pub fn demo(&self) -> DemoConfig {
        DemoConfig {
            alpha: self.alpha,
            k: self.k,
        }
    }

    pub fn train(&self) -> TrainIlConfig {
        TrainIlConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            final_lr_fraction: self.final_lr_fraction,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub n_dialogues: usize,
    /// Dialogue `i` is seeded with `goal_seed_base + i`.
    pub goal_seed_base: u64,
    /// Sample actions instead of decoding greedily.
    pub sample: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_dialogues: 512,
            goal_seed_base: 1_000_000,
            sample: false,
        }
    }
}

impl EvalSection {
    pub fn decoding(&self) -> Decoding {
        if self.sample {
            Decoding::Sample(SampleConfig::default())
        } else {
            Decoding::Greedy
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateSection {
    /// Training seeds are `seed + i` for `i` below this count.
    pub n_seeds: usize,
    /// Iterations at the end of training whose advantage spread is pooled.
    pub tail_iterations: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            n_seeds: 3,
            tail_iterations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: String,
    pub env: EnvConfig,
    pub model: ModelConfig,
    pub il: IlSection,
    pub rl: TrainConfig,
    pub eval: EvalSection,
    pub ablate: AblateSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: "runs".into(),
            env: EnvConfig::default(),
            model: ModelConfig::default(),
            il: IlSection::default(),
            rl: TrainConfig::default(),
            eval: EvalSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(toml::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.rl.validate()?;
        if !(0.0..1.0).contains(&self.il.holdout_fraction) {
            return Err(ExperimentError::Config("il.holdout_fraction must lie in [0, 1)".into()));
        }
        if self.model.embed_dim == 0 || self.model.hidden == 0 {
            return Err(ExperimentError::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Environment and vocabulary shared by every command.
pub struct Setup {
    pub env: Env,
    pub vocab: Vocabulary,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let env = Env::new(&cfg.env)?;
        let vocab = build_vocabulary(&env.world.schema, env.module_count())?;
        Ok(Self { env, vocab })
    }
}

/// Creates the output directory and checks each file can be created, before
/// any computation.
fn prepare(out: &Path, files: &[&str]) -> Result<Vec<PathBuf>> {
    let unwritable = |path: &Path, source| ExperimentError::Unwritable {
        path: path.display().to_string(),
        source,
    };
    fs::create_dir_all(out).map_err(|e| unwritable(out, e))?;
    files
        .iter()
        .map(|f| {
            let p = out.join(f);
            File::create(&p).map_err(|e| unwritable(&p, e))?;
            Ok(p)
        })
        .collect()
}

fn write_json_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    writeln!(w)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_json_line(&mut w, value)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub instances: usize,
    pub per_module: Vec<usize>,
    pub copy_fraction: f64,
    pub dialogues: usize,
}

pub const DEMOS_FILE: &str = "demos.jsonl";
pub const IL_CHECKPOINT: &str = "il.ckpt";

pub fn gen_demos(cfg: &ExperimentConfig, out: &Path) -> Result<DemoSummary> {
    let files = prepare(out, &[DEMOS_FILE, "demos_summary.json"])?;
    let s = Setup::new(cfg)?;
    let h = collect_io_history(&s.env, cfg.il.n_turns, cfg.seed);
    let d = build_demo_dataset(&h, &cfg.il.demo(), cfg.seed)?;
    let header = DatasetHeader {
        vocab_hash: s.vocab.hash(),
        module_count: s.env.module_count(),
        instances: d.len(),
        alpha: cfg.il.alpha,
        k: cfg.il.k,
        seed: cfg.seed,
    };
    let mut w = BufWriter::new(File::create(&files[0])?);
    d.write_jsonl(&mut w, &header)?;
    w.flush()?;
    let summary = DemoSummary {
        instances: d.len(),
        per_module: d.per_module_counts(s.env.module_count()),
        copy_fraction: d.copy_fraction(),
        dialogues: h.dialogues,
    };
    write_json(&files[1], &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub held_out_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlReport {
    pub train_instances: usize,
    pub held_out_instances: usize,
    pub held_out: ExactMatch,
    pub copy_exact_match: f64,
    pub reconstruction_exact_match: f64,
}

pub fn read_dataset(path: &Path, vocab: &Vocabulary) -> Result<(DatasetHeader, DemoDataset)> {
    let (header, data) = DemoDataset::read_jsonl(BufReader::new(File::open(path)?))?;
    if header.vocab_hash != vocab.hash() {
        return Err(ExperimentError::VocabMismatch(format!(
            "dataset {} was built for vocabulary {}, the schema gives {}",
            path.display(),
            header.vocab_hash,
            vocab.hash()
        )));
    }
    Ok((header, data))
}

pub fn train_imitation(cfg: &ExperimentConfig, dataset: &Path, out: &Path) -> Result<IlReport> {
    let files = prepare(out, &[IL_CHECKPOINT, "il_loss.jsonl", "il_report.json"])?;
    let s = Setup::new(cfg)?;
    let (_, data) = read_dataset(dataset, &s.vocab)?;
    let (train, held) = data.split(cfg.il.holdout_fraction, cfg.seed);
    let train = encode_dataset(&s.vocab, &train)?;
    let held = encode_dataset(&s.vocab, &held)?;
    let mut model = PolicyModel::new(&s.vocab, &cfg.model);
    let mut curve = vec![IlEpoch {
        epoch: 0,
        train_loss: mean_nll(&model, &train),
        held_out_loss: mean_nll(&model, &held),
    }];
    train_il(&mut model, &train, &cfg.il.train(), cfg.seed, |epoch, m, loss| {
        curve.push(IlEpoch {
            epoch,
            train_loss: loss,
            held_out_loss: mean_nll(m, &held),
        })
    })?;
    model.save(&files[0], &s.vocab)?;
    let mut w = BufWriter::new(File::create(&files[1])?);
    for e in &curve {
        write_json_line(&mut w, e)?;
    }
    w.flush()?;
    let em = exact_match(&model, &held, s.env.module_count());
    let report = IlReport {
        train_instances: train.len(),
        held_out_instances: held.len(),
        copy_exact_match: em.copy_rate(),
        reconstruction_exact_match: em.reconstruction_rate(),
        held_out: em,
    };
    write_json(&files[2], &report)?;
    Ok(report)
}

pub fn run_label(granularity: Granularity, seed: u64) -> String {
    format!("{}-seed{seed}", granularity.label())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlOutcome {
    pub granularity: Granularity,
    pub seed: u64,
    pub history: Vec<IterationMetrics>,
    pub checkpoint: String,
}

/// Trains from the imitation checkpoint with `cfg.rl` and `cfg.seed`,
/// writing `metrics-<run>.jsonl` and `rl-<run>.ckpt`.
pub fn train_rl(cfg: &ExperimentConfig, il_checkpoint: &Path, out: &Path) -> Result<RlOutcome> {
    let s = Setup::new(cfg)?;
    let il = PolicyModel::load(il_checkpoint, &s.vocab)?;
    train_rl_with(cfg, &s, &il, out)
}

fn train_rl_with(cfg: &ExperimentConfig, s: &Setup, il: &PolicyModel, out: &Path) -> Result<RlOutcome> {
    let label = run_label(cfg.rl.value_granularity, cfg.seed);
    let ckpt = format!("rl-{label}.ckpt");
    let files = prepare(out, &[&format!("metrics-{label}.jsonl"), &ckpt])?;
    let mut w = BufWriter::new(File::create(&files[0])?);
    let (state, history) = run_training(&s.env, &s.vocab, il, &cfg.rl, cfg.seed, &mut w, Some(out.to_path_buf()))?;
    w.flush()?;
    state.policy.save(&files[1], &s.vocab)?;
    Ok(RlOutcome {
        granularity: cfg.rl.value_granularity,
        seed: cfg.seed,
        history,
        checkpoint: files[1].display().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub checkpoint: String,
    pub decoding: String,
    #[serde(flatten)]
    pub report: EvalReport,
}

/// Evaluates a checkpoint, or the bare pipeline when `checkpoint` is `None`.
pub fn evaluate(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<EvalOutput> {
    let s = Setup::new(cfg)?;
    let policy = checkpoint.map(|p| PolicyModel::load(p, &s.vocab)).transpose()?;
    evaluate_with(cfg, &s, policy.as_ref(), checkpoint.map_or("none".into(), checkpoint_name))
}

/// File name only, so records do not depend on where the run directory lives.
fn checkpoint_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn evaluate_with(cfg: &ExperimentConfig, s: &Setup, policy: Option<&PolicyModel>, label: String) -> Result<EvalOutput> {
    let report = evaluate_policy(
        &s.env,
        policy.map(|p| (p, &s.vocab)),
        cfg.eval.decoding(),
        cfg.eval.n_dialogues,
        cfg.eval.goal_seed_base,
    )?;
    Ok(EvalOutput {
        checkpoint: label,
        decoding: if cfg.eval.sample { "sample" } else { "greedy" }.into(),
        report,
    })
}

pub fn write_evaluation(out: &Path, name: &str, e: &EvalOutput) -> Result<PathBuf> {
    let files = prepare(out, &[name])?;
    write_json(&files[0], e)?;
    Ok(files[0].clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub granularity: Granularity,
    pub seed: u64,
    pub final_success: f64,
    pub final_eval: EvalReport,
    /// Root mean square of the per-module advantage standard deviations over
    /// the last `tail_iterations` iterations.
    pub tail_advantage_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub baseline_success: f64,
    pub runs: Vec<AblationRun>,
    pub module_mean_success: f64,
    pub turn_mean_success: f64,
    pub module_tail_advantage_std: f64,
    pub turn_tail_advantage_std: f64,
}

/// Root mean square of `adv_std` over the last `tail` records and all modules.
pub fn pooled_advantage_std(history: &[IterationMetrics], tail: usize) -> f64 {
    let start = history.len().saturating_sub(tail);
    let vars: Vec<f64> = history[start..]
        .iter()
        .flat_map(|m| m.adv_std.iter().map(|s| s * s))
        .collect();
    if vars.is_empty() {
        return 0.0;
    }
    (vars.iter().sum::<f64>() / vars.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub success_rate: f64,
    pub mean_turns: f64,
    pub adv_mean: Vec<f64>,
    pub adv_std: Vec<f64>,
}

/// Trains both granularities on seeds `seed, seed+1, …`, evaluates every
/// final checkpoint and writes metrics, advantage traces and a report.
pub fn ablate(cfg: &ExperimentConfig, il_checkpoint: &Path, out: &Path) -> Result<AblationReport> {
    prepare(out, &["ablation.json"])?;
    let s = Setup::new(cfg)?;
    let il = PolicyModel::load(il_checkpoint, &s.vocab)?;
    let baseline = evaluate_with(cfg, &s, None, "none".into())?;
    let mut runs = Vec::new();
    for granularity in [Granularity::Module, Granularity::Turn] {
        for i in 0..cfg.ablate.n_seeds {
            let mut c = cfg.clone();
            c.seed = cfg.seed + i as u64;
            c.rl.value_granularity = granularity;
            let outcome = train_rl_with(&c, &s, &il, out)?;
            let label = run_label(granularity, c.seed);
            let trace = prepare(out, &[&format!("trace-{label}.jsonl")])?;
            let mut w = BufWriter::new(File::create(&trace[0])?);
            for m in &outcome.history {
                write_json_line(
                    &mut w,
                    &TraceRecord {
                        iteration: m.iteration,
                        success_rate: m.success_rate,
                        mean_turns: m.mean_turns,
                        adv_mean: m.adv_mean.clone(),
                        adv_std: m.adv_std.clone(),
                    },
                )?;
            }
            w.flush()?;
            let policy = PolicyModel::load(Path::new(&outcome.checkpoint), &s.vocab)?;
            let eval = evaluate_with(&c, &s, Some(&policy), checkpoint_name(Path::new(&outcome.checkpoint)))?;
            runs.push(AblationRun {
                granularity,
                seed: c.seed,
                final_success: eval.report.summary.success_rate,
                final_eval: eval.report,
                tail_advantage_std: pooled_advantage_std(&outcome.history, cfg.ablate.tail_iterations),
            });
        }
    }
    let of = |g: Granularity| runs.iter().filter(move |r| r.granularity == g);
    let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    let pooled = |g: Granularity| {
        let histories: Vec<f64> = of(g).map(|r| r.tail_advantage_std.powi(2)).collect();
        mean(histories).sqrt()
    };
    let report = AblationReport {
        baseline_success: baseline.report.summary.success_rate,
        module_mean_success: mean(of(Granularity::Module).map(|r| r.final_success).collect()),
        turn_mean_success: mean(of(Granularity::Turn).map(|r| r.final_success).collect()),
        module_tail_advantage_std: pooled(Granularity::Module),
        turn_tail_advantage_std: pooled(Granularity::Turn),
        runs,
    };
    write_json(&out.join("ablation.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let mut c = ExperimentConfig::default();
        c.seed = 17;
        c.rl.value_granularity = Granularity::Turn;
        c.env.schema_path = Some("schema.json".into());
        c.eval.sample = true;
        let text = c.to_toml().unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        let empty: ExperimentConfig = toml::from_str("").unwrap();
        assert_eq!(empty, ExperimentConfig::default());
    }

    #[test]
    fn defaults_carry_the_published_hyperparameters() {
        let c = ExperimentConfig::default();
        assert_eq!((c.rl.gamma, c.rl.lambda, c.rl.beta_kl), (0.99, 0.95, 0.01));
        assert_eq!((c.il.alpha, c.il.batch, c.rl.inner_epochs), (0.1, 64, 4));
        assert_eq!((c.rl.sample.temperature, c.rl.sample.top_p), (1.0, 1.0));
        assert_eq!(c.env.turn_cap, 20);
        assert_eq!(c.eval.n_dialogues, 512);
        assert!(c.rl.terminal_replaces_step_penalty);
    }

    #[test]
    fn unwritable_output_fails_before_work() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = gen_demos(&ExperimentConfig::default(), &blocker.join("sub")).unwrap_err();
        assert_eq!(err.code(), "unwritable");
    }

    #[test]
    fn pooled_std_uses_the_tail() {
        let rec = |s: f64| IterationMetrics {
            iteration: 0,
            seed: 0,
            granularity: "module".into(),
            dialogues: 0,
            module_steps: 0,
            success_rate: 0.0,
            mean_turns: 0.0,
            mean_reward: 0.0,
            adv_mean: vec![0.0; 2],
            adv_std: vec![s, s],
            mean_kl: 0.0,
            fallback_rate: 0.0,
            policy_loss: 0.0,
            value_loss: 0.0,
        };
        let h = vec![rec(100.0), rec(3.0), rec(4.0)];
        assert!((pooled_advantage_std(&h, 2) - 12.5f64.sqrt()).abs() < 1e-12);
    }
}
