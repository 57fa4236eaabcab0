//! Online fine-tuning of the post-processing policy: rollouts inside live
//! dialogues, KL-penalized rewards, module-level advantages and clipped
//! policy updates, plus the turn-level ablation.

pub mod advantage;
pub mod buffer;
pub mod config;
pub mod loss;
pub mod rollout;
pub mod train;

use thiserror::Error;

use crate::mdp::MdpError;
use crate::model::ModelError;

pub use advantage::{compute_advantages, AdvantageStats};
pub use buffer::{ReplayBuffer, Transition};
pub use config::{Granularity, TrainConfig};
pub use loss::{clipped_objective, kl_penalized_reward, ppo_policy_loss, value_loss};
pub use rollout::{collect_rollouts, evaluate_policy, Decoding, EvalReport, PolicyPostProcessor, RolloutModels};
pub use train::{run_training, train_iteration, IterationMetrics, MetricsHeader, TrainState};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("config: {0}")]
    Config(String),
    #[error("episode rejected: {0}")]
    Episode(#[from] MdpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite {what} at iteration {iteration}; minibatch dumped to {dump}")]
    NonFinite {
        what: &'static str,
        iteration: usize,
        dump: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
