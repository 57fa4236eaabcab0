//! Algebra of the module-level MDP.
//!
//! A timestep is one post-processing action `(t, m)`: module `m` of turn `t`.
//! Everything here is a pure function over immutable episodes, with all
//! arithmetic in `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("invalid module step (turn {turn}, module {module}, module_count {module_count})")]
    InvalidStep {
        turn: usize,
        module: usize,
        module_count: usize,
    },
    #[error("episode is empty")]
    EmptyEpisode,
    #[error("episode must start at (0, 1), found ({turn}, {module})")]
    BadStart { turn: usize, module: usize },
    #[error("record {index} breaks step succession: expected ({exp_turn}, {exp_module}), found ({turn}, {module})")]
    Gap {
        index: usize,
        exp_turn: usize,
        exp_module: usize,
        turn: usize,
        module: usize,
    },
    #[error("record {index} has module_count {found}, episode uses {expected}")]
    MixedModuleCount {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("terminal flag misplaced at record {index} (exactly the last record must be terminal)")]
    TerminalMisplaced { index: usize },
    #[error("step ({turn}, {module}) is not contained in the episode")]
    StepNotInEpisode { turn: usize, module: usize },
}

/// The `(turn, module)` coordinate of a module-level timestep. Modules are
/// numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModuleStep {
    pub turn: usize,
    pub module: usize,
    pub module_count: usize,
}

impl ModuleStep {
    pub fn new(turn: usize, module: usize, module_count: usize) -> Result<Self, MdpError> {
        if module_count == 0 || module == 0 || module > module_count {
            return Err(MdpError::InvalidStep {
                turn,
                module,
                module_count,
            });
        }
        Ok(Self {
            turn,
            module,
            module_count,
        })
    }

    /// First step of an episode, `(0, 1)`.
    pub fn first(module_count: usize) -> Result<Self, MdpError> {
        Self::new(0, 1, module_count)
    }

    /// Zero-based position of this step in an episode that starts at `(0, 1)`.
    pub fn flat_index(&self) -> usize {
        self.turn * self.module_count + self.module - 1
    }
}

/// Successor of `step`: `(t, m+1)` while `m < M`, then `(t+1, 1)`.
pub fn next_step(step: ModuleStep) -> ModuleStep {
    if step.module < step.module_count {
        ModuleStep {
            module: step.module + 1,
            ..step
        }
    } else {
        ModuleStep {
            turn: step.turn + 1,
            module: 1,
            ..step
        }
    }
}

/// Exponent `(t+1)(m-1)` applied to the reward at `(t, m)` in the
/// module-level value sum. It vanishes for every first-module step.
pub fn discount_exponent(step: ModuleStep) -> u64 {
    ((step.turn + 1) * (step.module - 1)) as u64
}

/// Exponent `t*M + m - 1`, i.e. one discount factor per module step.
pub fn flat_discount_exponent(step: ModuleStep) -> u64 {
    step.flat_index() as u64
}

/// Which exponent the return targets use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountMode {
    /// `(i+1)(j-1)` over the relative offset `(i, j)`.
    #[default]
    ModuleLevel,
    /// `i*M + j - 1` over the relative offset `(i, j)`.
    Flat,
}

impl DiscountMode {
    pub fn exponent(self, offset: ModuleStep) -> u64 {
        match self {
            DiscountMode::ModuleLevel => discount_exponent(offset),
            DiscountMode::Flat => flat_discount_exponent(offset),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: ModuleStep,
    pub reward: f64,
    pub value: f64,
    pub is_terminal: bool,
}

/// A validated, gap-free episode `(0,1), (0,2), …` whose last record is the
/// only terminal one.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    module_count: usize,
    records: Vec<StepRecord>,
}

impl Episode {
    pub fn new(records: Vec<StepRecord>) -> Result<Self, MdpError> {
        let first = records.first().ok_or(MdpError::EmptyEpisode)?;
        let module_count = first.step.module_count;
        let mut expected = ModuleStep::first(module_count)?;
        if first.step != expected {
            return Err(MdpError::BadStart {
                turn: first.step.turn,
                module: first.step.module,
            });
        }
        let last = records.len() - 1;
        for (index, rec) in records.iter().enumerate() {
            if rec.step.module_count != module_count {
                return Err(MdpError::MixedModuleCount {
                    index,
                    expected: module_count,
                    found: rec.step.module_count,
                });
            }
            if rec.step != expected {
                return Err(MdpError::Gap {
                    index,
                    exp_turn: expected.turn,
                    exp_module: expected.module,
                    turn: rec.step.turn,
                    module: rec.step.module,
                });
            }
            if rec.is_terminal != (index == last) {
                return Err(MdpError::TerminalMisplaced { index });
            }
            expected = next_step(expected);
        }
        Ok(Self {
            module_count,
            records,
        })
    }

    /// Builds an episode from parallel reward/value slices, marking the last
    /// step terminal.
    pub fn from_rewards_values(
        module_count: usize,
        rewards: &[f64],
        values: &[f64],
    ) -> Result<Self, MdpError> {
        assert_eq!(rewards.len(), values.len());
        let mut step = ModuleStep::first(module_count)?;
        let n = rewards.len();
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            records.push(StepRecord {
                step,
                reward: rewards[i],
                value: values[i],
                is_terminal: i + 1 == n,
            });
            step = next_step(step);
        }
        Self::new(records)
    }

    pub fn module_count(&self) -> usize {
        self.module_count
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn index_of(&self, step: ModuleStep) -> Result<usize, MdpError> {
        let idx = step.flat_index();
        if step.module_count != self.module_count || idx >= self.records.len() {
            return Err(MdpError::StepNotInEpisode {
                turn: step.turn,
                module: step.module,
            });
        }
        Ok(idx)
    }
}

/// Return target from `from` to the end of the episode with the module-level
/// exponent.
pub fn discounted_return(episode: &Episode, from: ModuleStep, gamma: f64) -> Result<f64, MdpError> {
    discounted_return_with(episode, from, gamma, DiscountMode::ModuleLevel)
}

/// Sum over the remaining steps of `gamma^exponent(offset) * reward`, where the
/// offset `(i, j)` starts at `(0, 1)` on `from` and advances by [`next_step`].
pub fn discounted_return_with(
    episode: &Episode,
    from: ModuleStep,
    gamma: f64,
    mode: DiscountMode,
) -> Result<f64, MdpError> {
    let start = episode.index_of(from)?;
    let mut offset = ModuleStep::first(episode.module_count)?;
    let mut total = 0.0;
    for rec in &episode.records[start..] {
        total += gamma.powi(mode.exponent(offset) as i32) * rec.reward;
        offset = next_step(offset);
    }
    Ok(total)
}

/// Return targets for every step of the episode.
pub fn discounted_returns(episode: &Episode, gamma: f64, mode: DiscountMode) -> Vec<f64> {
    episode
        .records
        .iter()
        .map(|r| discounted_return_with(episode, r.step, gamma, mode).expect("step from episode"))
        .collect()
}

/// `r + gamma * V(next) - V(this)`, with zero value past the terminal step.
pub fn td_residuals(episode: &Episode, gamma: f64) -> Vec<f64> {
    let recs = &episode.records;
    recs.iter()
        .enumerate()
        .map(|(i, r)| {
            let next_value = recs.get(i + 1).map_or(0.0, |n| n.value);
            r.reward + gamma * next_value - r.value
        })
        .collect()
}

/// Backward recursion `A = delta + gamma * lambda * A(next)` with `A = 0` past
/// the terminal step. The factor is uniform across module boundaries.
pub fn gae(episode: &Episode, gamma: f64, lambda: f64) -> Vec<f64> {
    let deltas = td_residuals(episode, gamma);
    let mut adv = vec![0.0; deltas.len()];
    let mut running = 0.0;
    for i in (0..deltas.len()).rev() {
        running = deltas[i] + gamma * lambda * running;
        adv[i] = running;
    }
    adv
}
