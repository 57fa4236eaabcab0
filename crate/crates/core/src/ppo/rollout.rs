use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::buffer::{ReplayBuffer, Transition};
use super::config::TrainConfig;
use super::loss::kl_penalized_reward;
use super::PpoError;
use crate::env::metrics::STEP_PENALTY;
use crate::env::{
    evaluate_dialogue, generate_goal, run_dialogue, step_reward, DialogueMetrics, Env, MetricsSummary, ModuleCall,
    NoPostProcessing, PostProcessor, Processed, World,
};
use crate::mdp::ModuleStep;
use crate::model::{
    decode_output, encode_ppn_input, ModelError, PolicyModel, SampleConfig, ValueModel, Vocabulary, MAX_OUTPUT_LEN,
};
use crate::seed::derive_seed;

pub const ROLLOUT_ENV_STREAM: u64 = 0x524f_4c45;
pub const ROLLOUT_POLICY_STREAM: u64 = 0x524f_4c50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    Greedy,
    Sample(SampleConfig),
}

/// One action of the installed policy.
#[derive(Debug, Clone)]
pub struct Action {
    pub step: ModuleStep,
    pub x: Vec<u32>,
    pub y: Vec<u32>,
    pub fallback: bool,
}

/// Post-processor that rewrites every module output with the policy. Its
/// random stream is separate from the dialogue's, so a policy that always
/// copies leaves the dialogue exactly as without post-processing.
pub struct PolicyPostProcessor<'a> {
    vocab: &'a Vocabulary,
    policy: &'a PolicyModel,
    decoding: Decoding,
    rng: ChaCha8Rng,
    pub actions: Vec<Action>,
    pub error: Option<ModelError>,
}

impl<'a> PolicyPostProcessor<'a> {
    pub fn new(vocab: &'a Vocabulary, policy: &'a PolicyModel, decoding: Decoding, seed: u64) -> Self {
        Self {
            vocab,
            policy,
            decoding,
            rng: ChaCha8Rng::seed_from_u64(seed),
            actions: Vec::new(),
            error: None,
        }
    }
}

impl PostProcessor for PolicyPostProcessor<'_> {
    fn post_process(&mut self, world: &World, call: &ModuleCall<'_>) -> Processed {
        let keep = Processed {
            output: call.output.clone(),
            fallback: false,
        };
        if self.error.is_some() {
            return keep;
        }
        let x = match encode_ppn_input(self.vocab, call.context, call.input, call.output_tokens, call.step.module) {
            Ok(x) => x,
            Err(e) => {
                self.error = Some(e);
                return keep;
            }
        };
        let y = match &self.decoding {
            Decoding::Greedy => self.policy.greedy(&x, MAX_OUTPUT_LEN).0,
            Decoding::Sample(cfg) => self.policy.sample_sequence(&x, cfg, &mut self.rng).0,
        };
        let processed = decode_output(world, self.vocab, &y, call.output);
        self.actions.push(Action {
            step: call.step,
            x,
            y,
            fallback: processed.fallback,
        });
        processed
    }
}

/// The trainable policy, the frozen imitation policy and the critic.
#[derive(Clone, Copy)]
pub struct RolloutModels<'a> {
    pub vocab: &'a Vocabulary,
    pub policy: &'a PolicyModel,
    pub reference: &'a PolicyModel,
    pub value: &'a ValueModel,
}

fn base_reward(step: ModuleStep, terminal: bool, success: bool, cfg: &TrainConfig) -> f64 {
    let r = step_reward(step, terminal, success, step.module_count);
    if terminal && success && !cfg.terminal_replaces_step_penalty {
        r + STEP_PENALTY
    } else {
        r
    }
}

fn run_episode(
    env: &Env,
    models: RolloutModels<'_>,
    cfg: &TrainConfig,
    seed: u64,
    index: u64,
) -> Result<(Vec<Transition>, DialogueMetrics), PpoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ROLLOUT_ENV_STREAM, index));
    let goal = generate_goal(&env.world, env.user.p_two_domains, &mut rng);
    let mut pp = PolicyPostProcessor::new(
        models.vocab,
        models.policy,
        Decoding::Sample(cfg.sample),
        derive_seed(seed, ROLLOUT_POLICY_STREAM, index),
    );
    let log = run_dialogue(env, &goal, &mut rng, &mut pp);
    if let Some(e) = pp.error {
        return Err(e.into());
    }
    let metrics = evaluate_dialogue(&env.world, &log, &goal);
    let n = pp.actions.len();
    let episode = pp
        .actions
        .into_iter()
        .enumerate()
        .map(|(k, a)| {
            let terminal = k + 1 == n;
            let base = base_reward(a.step, terminal, metrics.success, cfg);
            let logp_behavior = models.policy.sequence_log_prob(&a.x, &a.y).0;
            let logp_reference = models.reference.sequence_log_prob(&a.x, &a.y).0;
            Transition {
                step: a.step,
                value: models.value.estimate_value(&a.x),
                reward: kl_penalized_reward(base, logp_behavior, logp_reference, cfg.beta_kl),
                base_reward: base,
                logp_behavior,
                logp_reference,
                is_terminal: terminal,
                fallback: a.fallback,
                x: a.x,
                y: a.y,
                advantage: 0.0,
                raw_advantage: 0.0,
                return_target: 0.0,
                trains_value: true,
            }
        })
        .collect();
    Ok((episode, metrics))
}

/// Clears `buffer` and fills it with whole sampled episodes until it holds
/// at least `B * M` module steps. Dialogue `i` draws from seeds derived from
/// `(seed, i)`; waves of dialogues run in parallel and are merged in index
/// order, so the result does not depend on the thread count.
pub fn collect_rollouts(
    env: &Env,
    models: RolloutModels<'_>,
    cfg: &TrainConfig,
    seed: u64,
    buffer: &mut ReplayBuffer,
) -> Result<Vec<DialogueMetrics>, PpoError> {
    buffer.clear();
    buffer.capacity = cfg.turns_per_iter * env.module_count();
    let mut metrics = Vec::new();
    let mut next = 0u64;
    while !buffer.is_full() {
        let wave: Vec<_> = (next..next + cfg.rollout_workers as u64)
            .into_par_iter()
            .map(|i| run_episode(env, models, cfg, seed, i))
            .collect();
        next += cfg.rollout_workers as u64;
        for r in wave {
            if buffer.is_full() {
                break;
            }
            let (episode, m) = r?;
            if !episode.is_empty() {
                buffer.push_episode(episode)?;
            }
            metrics.push(m);
        }
    }
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: MetricsSummary,
    pub fallback_rate: f64,
    pub module_steps: usize,
}

/// Runs `n_dialogues` dialogues, dialogue `i` seeded with `seed_base + i`,
/// with the policy installed (or none).
pub fn evaluate_policy(
    env: &Env,
    policy: Option<(&PolicyModel, &Vocabulary)>,
    decoding: Decoding,
    n_dialogues: usize,
    seed_base: u64,
) -> Result<EvalReport, PpoError> {
    let results: Vec<Result<(DialogueMetrics, usize, usize), PpoError>> = (0..n_dialogues as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_base.wrapping_add(i));
            let goal = generate_goal(&env.world, env.user.p_two_domains, &mut rng);
            let log = match policy {
                None => run_dialogue(env, &goal, &mut rng, &mut NoPostProcessing),
                Some((p, vocab)) => {
                    let seed = derive_seed(seed_base, ROLLOUT_POLICY_STREAM, i);
                    let mut pp = PolicyPostProcessor::new(vocab, p, decoding, seed);
                    let log = run_dialogue(env, &goal, &mut rng, &mut pp);
                    if let Some(e) = pp.error {
                        return Err(e.into());
                    }
                    log
                }
            };
            let fallbacks = log.turns.iter().flat_map(|t| &t.modules).filter(|m| m.fallback).count();
            Ok((evaluate_dialogue(&env.world, &log, &goal), log.module_steps(), fallbacks))
        })
        .collect();
    let mut all = Vec::with_capacity(n_dialogues);
    let (mut steps, mut fallbacks) = (0, 0);
    for r in results {
        let (m, s, f) = r?;
        all.push(m);
        steps += s;
        fallbacks += f;
    }
    Ok(EvalReport {
        summary: MetricsSummary::from_metrics(&all),
        fallback_rate: if steps == 0 { 0.0 } else { fallbacks as f64 / steps as f64 },
        module_steps: steps,
    })
}
