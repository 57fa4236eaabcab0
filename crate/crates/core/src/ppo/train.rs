use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::advantage::compute_advantages;
use super::buffer::{ReplayBuffer, Transition};
use super::config::TrainConfig;
use super::loss::{ppo_policy_loss, value_loss};
use super::rollout::{collect_rollouts, RolloutModels};
use super::PpoError;
use crate::env::{Env, MetricsSummary};
use crate::model::{optimizer_step, Gradients, PolicyModel, ValueModel, Vocabulary};
use crate::seed::derive_seed;

pub const ITERATION_STREAM: u64 = 0x4954_4552;
pub const SHUFFLE_STREAM: u64 = 0x5348_5546;

pub struct TrainState {
    pub policy: PolicyModel,
    pub value: ValueModel,
    /// Frozen imitation policy anchoring the KL penalty.
    pub reference: PolicyModel,
    pub iteration: usize,
    pub seed: u64,
    pub buffer: ReplayBuffer,
    /// Where a minibatch is written when a loss turns non-finite.
    pub dump_dir: Option<PathBuf>,
}

impl TrainState {
    /// Trainable and reference policy both start from `il`; the critic
    /// starts from its encoder.
    pub fn from_imitation(il: &PolicyModel, seed: u64) -> Self {
        Self {
            policy: il.clone(),
            value: ValueModel::from_policy_encoder(il),
            reference: il.clone(),
            iteration: 0,
            seed,
            buffer: ReplayBuffer::default(),
            dump_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub seed: u64,
    pub granularity: String,
    pub dialogues: usize,
    pub module_steps: usize,
    pub success_rate: f64,
    pub mean_turns: f64,
    /// Mean per-episode sum of rewards before the KL penalty.
    pub mean_reward: f64,
    /// Pre-normalization advantage mean and standard deviation per module.
    pub adv_mean: Vec<f64>,
    pub adv_std: Vec<f64>,
    /// Mean of `logp_rl - logp_il` over the sampled actions.
    pub mean_kl: f64,
    pub fallback_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsHeader {
    pub kind: String,
    pub seed: u64,
    pub granularity: String,
    pub config: TrainConfig,
}

fn dump(state: &TrainState, batch: &[&Transition], what: &'static str) -> PpoError {
    let dir = state.dump_dir.clone().unwrap_or_else(std::env::temp_dir);
    let path = dir.join(format!("nonfinite-{what}-iter{}.jsonl", state.iteration));
    let written = std::fs::File::create(&path).map_err(PpoError::from).and_then(|f| {
        let mut w = std::io::BufWriter::new(f);
        for t in batch {
            serde_json::to_writer(&mut w, t)?;
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    });
    PpoError::NonFinite {
        what,
        iteration: state.iteration,
        dump: match written {
            Ok(()) => path.display().to_string(),
            Err(e) => format!("<dump failed: {e}>"),
        },
    }
}

fn finite(loss: f64, grads: &Gradients) -> bool {
    loss.is_finite() && grads.all_finite()
}

/// Collect, estimate advantages, then `inner_epochs` passes of shuffled
/// minibatches, each updating the critic and then the policy.
pub fn train_iteration(
    state: &mut TrainState,
    env: &Env,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<IterationMetrics, PpoError> {
    cfg.validate()?;
    let it_seed = derive_seed(state.seed, ITERATION_STREAM, state.iteration as u64);
    let models = RolloutModels {
        vocab,
        policy: &state.policy,
        reference: &state.reference,
        value: &state.value,
    };
    let mut buffer = std::mem::take(&mut state.buffer);
    let dialogues = collect_rollouts(env, models, cfg, it_seed, &mut buffer)?;
    let stats = compute_advantages(&mut buffer, cfg)?;

    let transitions: Vec<&Transition> = buffer.transitions().collect();
    let n = transitions.len().max(1) as f64;
    let episodes = buffer.episodes().len().max(1) as f64;
    let summary = MetricsSummary::from_metrics(&dialogues);
    let mut metrics = IterationMetrics {
        iteration: state.iteration,
        seed: state.seed,
        granularity: cfg.value_granularity.label().to_string(),
        dialogues: dialogues.len(),
        module_steps: transitions.len(),
        success_rate: summary.success_rate,
        mean_turns: summary.mean_turns,
        mean_reward: transitions.iter().map(|t| t.base_reward).sum::<f64>() / episodes,
        adv_mean: stats.module_mean,
        adv_std: stats.module_std,
        mean_kl: transitions.iter().map(|t| t.logp_behavior - t.logp_reference).sum::<f64>() / n,
        fallback_rate: transitions.iter().filter(|t| t.fallback).count() as f64 / n,
        policy_loss: 0.0,
        value_loss: 0.0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(it_seed, SHUFFLE_STREAM, 0));
    let mut order: Vec<usize> = (0..transitions.len()).collect();
    let (mut pl_sum, mut vl_sum, mut batches) = (0.0, 0.0, 0usize);
    for _ in 0..cfg.inner_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch) {
            let batch: Vec<&Transition> = chunk.iter().map(|&i| transitions[i]).collect();
            let (vl, vg) = value_loss(&batch, &state.value);
            if !finite(vl, &vg) {
                return Err(dump(state, &batch, "value-loss"));
            }
            optimizer_step(&mut state.value.store, &vg, cfg.value_lr, &cfg.adam)?;
            let (pl, pg) = ppo_policy_loss(&batch, &state.policy, cfg.clip_eps);
            if !finite(pl, &pg) {
                return Err(dump(state, &batch, "policy-loss"));
            }
            optimizer_step(&mut state.policy.store, &pg, cfg.lr, &cfg.adam)?;
            pl_sum += pl;
            vl_sum += vl;
            batches += 1;
        }
    }
    if batches > 0 {
        metrics.policy_loss = pl_sum / batches as f64;
        metrics.value_loss = vl_sum / batches as f64;
    }
    drop(transitions);
    state.buffer = buffer;
    state.iteration += 1;
    Ok(metrics)
}

/// Runs `cfg.iterations` iterations from the imitation policy, writing a
/// header line and then one JSON record per iteration to `metrics_out`.
pub fn run_training(
    env: &Env,
    vocab: &Vocabulary,
    il: &PolicyModel,
    cfg: &TrainConfig,
    seed: u64,
    metrics_out: &mut dyn Write,
    dump_dir: Option<PathBuf>,
) -> Result<(TrainState, Vec<IterationMetrics>), PpoError> {
    cfg.validate()?;
    let header = MetricsHeader {
        kind: "ppo-metrics".into(),
        seed,
        granularity: cfg.value_granularity.label().into(),
        config: cfg.clone(),
    };
    serde_json::to_writer(&mut *metrics_out, &header)?;
    writeln!(metrics_out)?;
    let mut state = TrainState::from_imitation(il, seed);
    state.dump_dir = dump_dir;
    let mut history = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let m = train_iteration(&mut state, env, vocab, cfg)?;
        serde_json::to_writer(&mut *metrics_out, &m)?;
        writeln!(metrics_out)?;
        metrics_out.flush()?;
        history.push(m);
    }
    Ok((state, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;
    use crate::model::policy::N_FEATURES;
    use crate::model::{build_vocabulary, ModelConfig};
    use crate::ppo::rollout::{evaluate_policy, Decoding};

    fn setup() -> (Env, Vocabulary, PolicyModel) {
        let env = Env::new(&EnvConfig::default()).unwrap();
        let vocab = build_vocabulary(&env.world.schema, env.module_count()).unwrap();
        let policy = PolicyModel::new(
            &vocab,
            &ModelConfig {
                embed_dim: 8,
                hidden: 8,
                ..Default::default()
            },
        );
        (env, vocab, policy)
    }

    fn small(b: usize) -> TrainConfig {
        TrainConfig {
            turns_per_iter: b,
            minibatch: 16,
            inner_epochs: 2,
            sample: crate::model::SampleConfig {
                max_len: 12,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    /// Emits `<copy>` first and `<eos>` right after, whatever the input.
    fn copier(vocab: &Vocabulary, mut p: PolicyModel) -> PolicyModel {
        let sp = vocab.specials();
        let b = p.store.get_mut("out.b").unwrap();
        b.data[sp.copy as usize] = 100.0;
        b.data[sp.eos as usize] = 50.0;
        p.store.get_mut("out.gate_k").unwrap().data[N_FEATURES - 1] = -200.0;
        p
    }

    fn models<'a>(vocab: &'a Vocabulary, state: &'a TrainState) -> RolloutModels<'a> {
        RolloutModels {
            vocab,
            policy: &state.policy,
            reference: &state.reference,
            value: &state.value,
        }
    }

    #[test]
    fn buffer_holds_whole_episodes_past_capacity() {
        let (env, vocab, policy) = setup();
        let state = TrainState::from_imitation(&policy, 1);
        let cfg = small(8);
        let mut buf = ReplayBuffer::default();
        let dialogues = collect_rollouts(&env, models(&vocab, &state), &cfg, 7, &mut buf).unwrap();
        assert!(buf.len() >= 32);
        assert_eq!(buf.capacity, 32);
        let last = buf.episodes().last().unwrap().len();
        assert!(buf.len() - last < 32, "kept collecting after the buffer was full");
        assert!(dialogues.len() >= buf.episodes().len());
        for ep in buf.episodes() {
            assert!(ep.last().unwrap().is_terminal);
        }
    }

    #[test]
    fn same_seed_same_buffer() {
        let (env, vocab, policy) = setup();
        let state = TrainState::from_imitation(&policy, 1);
        let cfg = small(4);
        let (mut a, mut b) = (ReplayBuffer::default(), ReplayBuffer::default());
        collect_rollouts(&env, models(&vocab, &state), &cfg, 3, &mut a).unwrap();
        collect_rollouts(&env, models(&vocab, &state), &cfg, 3, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn copy_policy_matches_no_post_processing() {
        let (env, vocab, policy) = setup();
        let p = copier(&vocab, policy);
        let none = evaluate_policy(&env, None, Decoding::Greedy, 64, 1_000_000).unwrap();
        for decoding in [Decoding::Greedy, Decoding::Sample(Default::default())] {
            let with = evaluate_policy(&env, Some((&p, &vocab)), decoding, 64, 1_000_000).unwrap();
            assert_eq!(with.summary, none.summary);
            assert_eq!(with.module_steps, none.module_steps);
            assert_eq!(with.fallback_rate, 0.0);
        }
    }

    #[test]
    fn first_iteration_starts_at_unit_ratios_and_zero_penalty() {
        let (env, vocab, policy) = setup();
        let state = TrainState::from_imitation(&policy, 1);
        let cfg = small(8);
        let mut buf = ReplayBuffer::default();
        collect_rollouts(&env, models(&vocab, &state), &cfg, 11, &mut buf).unwrap();
        for t in buf.transitions() {
            assert_eq!(t.logp_behavior, t.logp_reference);
            assert_eq!(t.reward, t.base_reward);
            assert_eq!(t.logp_behavior, state.policy.sequence_log_prob(&t.x, &t.y).0);
        }
        compute_advantages(&mut buf, &cfg).unwrap();
        let all: Vec<&Transition> = buf.transitions().collect();
        let (loss, _) = ppo_policy_loss(&all, &state.policy, cfg.clip_eps);
        assert!(loss.abs() < 1e-9);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let (env, vocab, policy) = setup();
        let mut state = TrainState::from_imitation(&policy, 2);
        let cfg = TrainConfig {
            lr: 0.0,
            value_lr: 0.0,
            ..small(4)
        };
        let value = state.value.store.tensors.clone();
        let m = train_iteration(&mut state, &env, &vocab, &cfg).unwrap();
        assert_eq!(state.policy.store.tensors, policy.store.tensors);
        assert_eq!(state.value.store.tensors, value);
        assert_eq!(m.iteration, 0);
        assert_eq!(m.adv_mean.len(), 4);
        assert_eq!(m.mean_kl, 0.0);
        assert_eq!(state.iteration, 1);
    }

    #[test]
    fn training_updates_and_records() {
        let (env, vocab, policy) = setup();
        let cfg = TrainConfig {
            iterations: 2,
            ..small(4)
        };
        let mut out = Vec::new();
        let (state, history) = run_training(&env, &vocab, &policy, &cfg, 5, &mut out, None).unwrap();
        assert_ne!(state.policy.store.tensors, policy.store.tensors);
        assert_eq!(state.reference.store.tensors, policy.store.tensors);
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines.len(), 3);
        let header: MetricsHeader = serde_json::from_str(lines[0]).unwrap();
        assert_eq!((header.seed, header.granularity.as_str()), (5, "module"));
        assert_eq!(lines[2], serde_json::to_string(&history[1]).unwrap());
        assert!(history[1].mean_kl.is_finite());
    }

    #[test]
    fn zero_iterations_write_only_the_header() {
        let (env, vocab, policy) = setup();
        let cfg = TrainConfig {
            iterations: 0,
            ..small(4)
        };
        let mut out = Vec::new();
        let (state, history) = run_training(&env, &vocab, &policy, &cfg, 5, &mut out, None).unwrap();
        assert!(history.is_empty());
        assert_eq!(std::str::from_utf8(&out).unwrap().lines().count(), 1);
        assert_eq!(state.policy, policy);
    }

    #[test]
    fn successful_episodes_earn_the_bonus() {
        let (env, vocab, policy) = setup();
        let state = TrainState::from_imitation(&copier(&vocab, policy), 1);
        let cfg = small(16);
        let mut buf = ReplayBuffer::default();
        let dialogues = collect_rollouts(&env, models(&vocab, &state), &cfg, 4, &mut buf).unwrap();
        let mut seen = 0;
        for (ep, d) in buf.episodes().iter().zip(dialogues.iter().filter(|d| d.turns > 0)) {
            let total: f64 = ep.iter().map(|t| t.base_reward).sum();
            if d.success {
                seen += 1;
                assert!((total - (8.0 - 0.1 * (ep.len() - 1) as f64)).abs() < 1e-9);
            } else {
                assert!((total + 0.1 * ep.len() as f64).abs() < 1e-9);
            }
        }
        assert!(seen > 0);
    }
}
