use super::buffer::Transition;
use crate::model::{Gradients, PolicyModel, ValueModel};

/// Base reward minus `beta` times the single-sample sequence KL estimate
/// `logp_rl - logp_il`.
pub fn kl_penalized_reward(base_reward: f64, logp_rl: f64, logp_il: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return base_reward;
    }
    base_reward - beta * (logp_rl - logp_il)
}

/// `min(ζÂ, clip(ζ, 1-ε, 1+ε)Â)` and its derivative with respect to `log ζ`.
pub fn clipped_objective(ratio: f64, advantage: f64, eps: f64) -> (f64, f64) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * advantage;
    if unclipped <= clipped {
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

/// Negative mean clipped surrogate over `batch` and its gradient. Samples are
/// accumulated module by module, one pass per module index.
pub fn ppo_policy_loss(batch: &[&Transition], policy: &PolicyModel, clip_eps: f64) -> (f64, Gradients) {
    let mut grads = policy.store.zero_grads();
    if batch.is_empty() {
        return (0.0, grads);
    }
    let n = batch.len() as f64;
    let m_count = batch.iter().map(|t| t.step.module_count).max().unwrap_or(1);
    let mut loss = 0.0;
    for m in 1..=m_count {
        for t in batch.iter().filter(|t| t.step.module == m) {
            policy.accumulate_weighted_log_prob_gradient(
                &t.x,
                &t.y,
                |logp| {
                    let ratio = (logp - t.logp_behavior).exp();
                    let (obj, d) = clipped_objective(ratio, t.advantage, clip_eps);
                    loss -= obj / n;
                    -d / n
                },
                &mut grads,
            );
        }
    }
    (loss, grads)
}

/// Mean squared error of the critic over the steps that train it.
pub fn value_loss(batch: &[&Transition], value: &ValueModel) -> (f64, Gradients) {
    let mut grads = value.store.zero_grads();
    let n = batch.iter().filter(|t| t.trains_value).count();
    if n == 0 {
        return (0.0, grads);
    }
    let n = n as f64;
    let mut loss = 0.0;
    for t in batch.iter().filter(|t| t.trains_value) {
        value.accumulate_weighted_value_gradient(
            &t.x,
            |v| {
                let err = v - t.return_target;
                loss += err * err / n;
                2.0 * err / n
            },
            &mut grads,
        );
    }
    (loss, grads)
}
