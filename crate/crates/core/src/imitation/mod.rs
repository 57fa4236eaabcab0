//! Pseudo post-processing demonstrations and imitation training.

pub mod dataset;
pub mod history;
pub mod similarity;
pub mod train;

use thiserror::Error;

pub use dataset::{build_demo_dataset, is_held_out, DatasetHeader, DemoConfig, DemoDataset, DemoInstance};
pub use history::{collect_io_history, Histories, IOHistoryEntry};
pub use train::{encode_dataset, exact_match, mean_nll, train_il, EncodedInstance, ExactMatch, TrainIlConfig};
pub use similarity::{context_embedding, cosine, sample_negative, top_k_similar, ContextVector, TermIndex};

#[derive(Debug, Error)]
pub enum ImitationError {
    #[error("history holds {0} entries; a negative needs at least 2")]
    HistoryTooSmall(usize),
    #[error("config: {0}")]
    Config(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
