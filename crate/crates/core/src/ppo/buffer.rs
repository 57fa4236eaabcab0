use serde::{Deserialize, Serialize};

use super::PpoError;
use crate::mdp::{Episode, ModuleStep, StepRecord};

/// One post-processing action taken during a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub step: ModuleStep,
    pub x: Vec<u32>,
    pub y: Vec<u32>,
    /// `log π(y|x)` under the parameters that sampled `y`.
    pub logp_behavior: f64,
    /// `log π(y|x)` under the frozen imitation policy.
    pub logp_reference: f64,
    pub value: f64,
    /// Environment reward before the KL penalty.
    pub base_reward: f64,
    pub reward: f64,
    pub is_terminal: bool,
    pub fallback: bool,
    /// Normalized advantage.
    pub advantage: f64,
    pub raw_advantage: f64,
    pub return_target: f64,
    /// Whether this step contributes to the value loss.
    pub trains_value: bool,
}

impl Transition {
    pub fn record(&self) -> StepRecord {
        StepRecord {
            step: self.step,
            reward: self.reward,
            value: self.value,
            is_terminal: self.is_terminal,
        }
    }
}

/// Whole episodes only; full once it holds `capacity` module steps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    pub capacity: usize,
    episodes: Vec<Vec<Transition>>,
    steps: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            episodes: Vec::new(),
            steps: 0,
        }
    }

    pub fn clear(&mut self) {
        self.episodes.clear();
        self.steps = 0;
    }

    /// Appends an episode after checking it is gap-free and terminated.
    pub fn push_episode(&mut self, episode: Vec<Transition>) -> Result<(), PpoError> {
        Episode::new(episode.iter().map(Transition::record).collect())?;
        for t in &episode {
            if !(t.logp_behavior.is_finite() && t.logp_reference.is_finite() && t.reward.is_finite()) {
                return Err(PpoError::Config(format!(
                    "non-finite transition at ({}, {})",
                    t.step.turn, t.step.module
                )));
            }
        }
        self.steps += episode.len();
        self.episodes.push(episode);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn is_full(&self) -> bool {
        self.steps >= self.capacity
    }

    pub fn episodes(&self) -> &[Vec<Transition>] {
        &self.episodes
    }

    pub fn episodes_mut(&mut self) -> &mut [Vec<Transition>] {
        &mut self.episodes
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flatten()
    }
}

#[cfg(test)]
pub(crate) fn transition(step: ModuleStep, reward: f64, value: f64, terminal: bool) -> Transition {
    Transition {
        step,
        x: vec![],
        y: vec![],
        logp_behavior: 0.0,
        logp_reference: 0.0,
        value,
        base_reward: reward,
        reward,
        is_terminal: terminal,
        fallback: false,
        advantage: 0.0,
        raw_advantage: 0.0,
        return_target: 0.0,
        trains_value: true,
    }
}

#[cfg(test)]
pub(crate) fn episode(module_count: usize, rewards: &[f64], values: &[f64]) -> Vec<Transition> {
    let mut step = ModuleStep::first(module_count).unwrap();
    let mut out = Vec::new();
    for i in 0..rewards.len() {
        out.push(transition(step, rewards[i], values[i], i + 1 == rewards.len()));
        step = crate::mdp::next_step(step);
    }
    out
}
