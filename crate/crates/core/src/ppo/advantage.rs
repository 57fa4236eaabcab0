use serde::{Deserialize, Serialize};

use super::buffer::{ReplayBuffer, Transition};
use super::config::{Granularity, TrainConfig};
use super::PpoError;
use crate::mdp::{discounted_returns, gae, DiscountMode, Episode};

/// Statistics of the raw (pre-normalization) advantages of one batch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdvantageStats {
    /// Indexed by module minus one.
    pub module_mean: Vec<f64>,
    pub module_std: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Annotates every transition with its advantage, return target and whether
/// it trains the critic, then normalizes advantages over the whole buffer.
pub fn compute_advantages(buffer: &mut ReplayBuffer, cfg: &TrainConfig) -> Result<AdvantageStats, PpoError> {
    let mode = cfg.discount_mode();
    for ep in buffer.episodes_mut() {
        match cfg.value_granularity {
            Granularity::Module => annotate_module(ep, cfg.gamma, cfg.lambda, mode)?,
            Granularity::Turn => annotate_turn(ep, cfg.gamma, cfg.lambda, mode)?,
        }
    }
    let module_count = buffer.transitions().next().map_or(0, |t| t.step.module_count);
    let raw: Vec<f64> = buffer.transitions().map(|t| t.raw_advantage).collect();
    let (mean, std) = mean_std(&raw);
    let mut stats = AdvantageStats {
        mean,
        std,
        ..Default::default()
    };
    for m in 1..=module_count {
        let xs: Vec<f64> = buffer
            .transitions()
            .filter(|t| t.step.module == m)
            .map(|t| t.raw_advantage)
            .collect();
        let (mm, ms) = mean_std(&xs);
        stats.module_mean.push(mm);
        stats.module_std.push(ms);
    }
    for t in buffer.episodes_mut().iter_mut().flatten() {
        t.advantage = (t.raw_advantage - mean) / (std + 1e-8);
    }
    Ok(stats)
}

fn annotate_module(ep: &mut [Transition], gamma: f64, lambda: f64, mode: DiscountMode) -> Result<(), PpoError> {
    let episode = Episode::new(ep.iter().map(Transition::record).collect())?;
    let adv = gae(&episode, gamma, lambda);
    let ret = discounted_returns(&episode, gamma, mode);
    for (i, t) in ep.iter_mut().enumerate() {
        t.raw_advantage = adv[i];
        t.return_target = ret[i];
        t.trains_value = true;
    }
    Ok(())
}

/// Collapses each turn into a single step carrying the summed reward and the
/// first module's value, runs the same estimators on that one-module episode
/// and broadcasts the result back to every module of the turn.
fn annotate_turn(ep: &mut [Transition], gamma: f64, lambda: f64, mode: DiscountMode) -> Result<(), PpoError> {
    Episode::new(ep.iter().map(Transition::record).collect())?;
    let m_count = ep[0].step.module_count;
    let turns = ep.len() / m_count + usize::from(ep.len() % m_count != 0);
    let mut rewards = vec![0.0; turns];
    let mut values = vec![0.0; turns];
    for t in ep.iter() {
        rewards[t.step.turn] += t.reward;
        if t.step.module == 1 {
            values[t.step.turn] = t.value;
        }
    }
    let turn_episode = Episode::from_rewards_values(1, &rewards, &values)?;
    let adv = gae(&turn_episode, gamma, lambda);
    let ret = discounted_returns(&turn_episode, gamma, mode);
    for t in ep.iter_mut() {
        let i = t.step.turn;
        t.value = values[i];
        t.raw_advantage = adv[i];
        t.return_target = ret[i];
        t.trains_value = t.step.module == 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{next_step, ModuleStep};
    use crate::ppo::buffer::episode;
    use proptest::prelude::*;

    fn cfg(g: Granularity) -> TrainConfig {
        TrainConfig {
            value_granularity: g,
            ..Default::default()
        }
    }

    fn buffer_of(eps: Vec<Vec<Transition>>) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(1);
        for e in eps {
            b.push_episode(e).unwrap();
        }
        b
    }

    /// Forward suffix sums written out from the definitions, independent of
    /// the mdp routines.
    fn forward_gae(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = r.len();
        let delta = |i: usize| r[i] + gamma * if i + 1 < n { v[i + 1] } else { 0.0 } - v[i];
        (0..n)
            .map(|i| (i..n).map(|k| (gamma * lambda).powi((k - i) as i32) * delta(k)).sum())
            .collect()
    }

    #[test]
    fn module_granularity_matches_forward_sums_on_two_turns() {
        let r = [-0.1, -0.1, -0.1, 4.0];
        let v = [0.5, 1.0, 2.0, 3.5];
        let mut b = buffer_of(vec![episode(2, &r, &v)]);
        compute_advantages(&mut b, &cfg(Granularity::Module)).unwrap();
        let want = forward_gae(&r, &v, 0.99, 0.95);
        // (0,1) (0,2) (1,1) (1,2): offsets from (0,1) have exponents 0, 1, 0, 2
        let ret0 = r[0] + 0.99 * r[1] + r[2] + 0.99f64.powi(2) * r[3];
        for (i, t) in b.transitions().enumerate() {
            assert!((t.raw_advantage - want[i]).abs() < 1e-12);
        }
        assert!((b.transitions().next().unwrap().return_target - ret0).abs() < 1e-12);
    }

    #[test]
    fn single_module_granularities_coincide() {
        let r = [-0.1, -0.1, 2.0];
        let v = [0.3, -0.2, 1.1];
        let mut a = buffer_of(vec![episode(1, &r, &v)]);
        let mut b = a.clone();
        let sa = compute_advantages(&mut a, &cfg(Granularity::Module)).unwrap();
        let sb = compute_advantages(&mut b, &cfg(Granularity::Turn)).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn terminal_targets_equal_terminal_reward() {
        for g in [Granularity::Module, Granularity::Turn] {
            let mut b = buffer_of(vec![episode(1, &[-0.1, 2.0], &[0.0, 0.4])]);
            compute_advantages(&mut b, &cfg(g)).unwrap();
            assert_eq!(b.transitions().last().unwrap().return_target, 2.0);
        }
        let mut b = buffer_of(vec![episode(3, &[-0.1, -0.1, 6.0], &[0.0; 3])]);
        compute_advantages(&mut b, &cfg(Granularity::Module)).unwrap();
        assert_eq!(b.transitions().last().unwrap().return_target, 6.0);
    }

    #[test]
    fn normalization_is_per_batch() {
        let mut b = buffer_of(vec![
            episode(2, &[-0.1, 4.0], &[0.0, 0.0]),
            episode(2, &[-0.1, -0.1, -0.1, -0.1], &[0.2; 4]),
        ]);
        compute_advantages(&mut b, &cfg(Granularity::Module)).unwrap();
        let adv: Vec<f64> = b.transitions().map(|t| t.advantage).collect();
        let (m, s) = mean_std(&adv);
        assert!(m.abs() < 1e-12);
        assert!((s - 1.0).abs() < 1e-6);
    }

    fn arb_episode() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
        (prop_oneof![Just(1usize), Just(2), Just(4)], 1usize..30).prop_flat_map(|(m, n)| {
            (
                Just(m),
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn turn_granularity_shares_one_estimate_per_turn((m, r, v) in arb_episode()) {
            let mut b = buffer_of(vec![episode(m, &r, &v)]);
            compute_advantages(&mut b, &cfg(Granularity::Turn)).unwrap();
            let ts: Vec<&Transition> = b.transitions().collect();
            for t in &ts {
                let first = ts.iter().find(|u| u.step.turn == t.step.turn && u.step.module == 1).unwrap();
                prop_assert_eq!(t.advantage, first.advantage);
                prop_assert_eq!(t.raw_advantage, first.raw_advantage);
                prop_assert_eq!(t.value, first.value);
                prop_assert_eq!(t.trains_value, t.step.module == 1);
            }
        }

        #[test]
        fn module_granularity_reproduces_forward_oracle((m, r, v) in arb_episode()) {
            let mut b = buffer_of(vec![episode(m, &r, &v)]);
            let mut c = cfg(Granularity::Module);
            c.flat_discount = true;
            compute_advantages(&mut b, &c).unwrap();
            let want = forward_gae(&r, &v, c.gamma, c.lambda);
            let mut step = ModuleStep::first(m).unwrap();
            for (i, t) in b.transitions().enumerate() {
                prop_assert!((t.raw_advantage - want[i]).abs() < 1e-9);
                let flat: f64 = (i..r.len()).map(|k| c.gamma.powi((k - i) as i32) * r[k]).sum();
                prop_assert!((t.return_target - flat).abs() < 1e-9);
                prop_assert_eq!(t.step, step);
                step = next_step(step);
            }
        }
    }
}
