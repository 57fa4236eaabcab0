use serde::{Deserialize, Serialize};

use super::PpoError;
use crate::mdp::DiscountMode;
use crate::model::{AdamConfig, SampleConfig};

/// Whose value estimate and advantage a module step receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One estimate per module step.
    #[default]
    Module,
    /// All modules of a turn share the estimate of its first module step.
    Turn,
}

impl Granularity {
    pub fn label(self) -> &'static str {
        match self {
            Granularity::Module => "module",
            Granularity::Turn => "turn",
        }
    }
}

impl std::str::FromStr for Granularity {
    type Err = PpoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "module" => Ok(Granularity::Module),
            "turn" => Ok(Granularity::Turn),
            _ => Err(PpoError::Config(format!("unknown granularity `{s}` (module or turn)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub beta_kl: f64,
    pub clip_eps: f64,
    pub iterations: usize,
    /// `B`: the buffer is full once it holds `B * M` module steps.
    pub turns_per_iter: usize,
    pub inner_epochs: usize,
    pub minibatch: usize,
    pub value_granularity: Granularity,
    /// Return targets discount once per module step instead of using the
    /// module-level exponent.
    pub flat_discount: bool,
    /// The terminal success bonus replaces the step penalty instead of
    /// adding to it.
    pub terminal_replaces_step_penalty: bool,
    pub lr: f64,
    pub value_lr: f64,
    pub adam: AdamConfig,
    pub sample: SampleConfig,
    /// Dialogues run concurrently per rollout wave.
    pub rollout_workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            beta_kl: 0.01,
            clip_eps: 0.2,
            iterations: 60,
            turns_per_iter: 128,
            inner_epochs: 4,
            minibatch: 64,
            value_granularity: Granularity::Module,
            flat_discount: false,
            terminal_replaces_step_penalty: true,
            lr: 1e-4,
            value_lr: 3e-4,
            adam: AdamConfig::default(),
            sample: SampleConfig::default(),
            rollout_workers: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if !(self.beta_kl >= 0.0) || !self.beta_kl.is_finite() {
            return bad("beta_kl must be finite and non-negative");
        }
        if !(self.lr >= 0.0) || !(self.value_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if self.turns_per_iter == 0 || self.minibatch == 0 || self.rollout_workers == 0 {
            return bad("turns_per_iter, minibatch and rollout_workers must be positive");
        }
        if !(self.sample.temperature > 0.0) || !(self.sample.top_p > 0.0 && self.sample.top_p <= 1.0) {
            return bad("sampling needs temperature > 0 and top_p in (0, 1]");
        }
        Ok(())
    }

    pub fn discount_mode(&self) -> DiscountMode {
        if self.flat_discount {
            DiscountMode::Flat
        } else {
            DiscountMode::ModuleLevel
        }
    }
}
