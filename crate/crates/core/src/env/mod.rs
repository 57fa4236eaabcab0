//! Synthetic task-oriented dialogue world: schema, entity database, user
//! simulator, a noisy four-module pipeline, rewards and task metrics.

pub mod acts;
pub mod db;
pub mod dialogue;
pub mod goal;
pub mod metrics;
pub mod pipeline;
pub mod schema;
pub mod state;
pub mod user;
pub mod world;

use thiserror::Error;

pub use acts::{Act, ActList};
pub use db::EntityDatabase;
pub use dialogue::{run_dialogue, DialogueLog, Env, EnvConfig, ModuleCall, NoPostProcessing, PostProcessor, Processed};
pub use goal::{generate_goal, DialogueGoal};
pub use metrics::{evaluate_dialogue, step_reward, DialogueMetrics, MetricsSummary};
pub use pipeline::{ModuleKind, ModuleOutput, NoiseProfile, PipelineKind};
pub use schema::Schema;
pub use state::DialogueState;
pub use world::World;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("config: {0}")]
    Config(String),
    #[error("parse: {0}")]
    Parse(String),
}
