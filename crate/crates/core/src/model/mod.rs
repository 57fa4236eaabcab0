//! Vocabulary, the post-processing policy and critic, their gradients, the
//! optimizer and checkpoints.

pub mod codec;
pub mod encoder;
pub mod linalg;
pub mod params;
pub mod policy;
pub mod value;
pub mod vocab;

use std::path::Path;

use thiserror::Error;

pub use codec::{decode_output, encode_ppn_input, encode_target, is_copy, MAX_INPUT_LEN, MAX_OUTPUT_LEN};
pub use params::{optimizer_step, AdamConfig, Gradients, ParamStore, Tensor};
pub use policy::{ModelConfig, PolicyModel, SampleConfig};
pub use value::ValueModel;
pub use vocab::{build_vocabulary, SpecialIds, Vocabulary};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(String),
    #[error("input of {0} tokens exceeds the cap even without context")]
    TooLong(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("vocabulary: {0}")]
    Vocab(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub const POLICY_KIND: &str = "policy";
pub const VALUE_KIND: &str = "value";

fn save(path: &Path, store: &ParamStore, kind: &str, vocab: &Vocabulary) -> Result<(), ModelError> {
    let meta = serde_json::json!({ "vocab_size": vocab.len(), "module_count": vocab.module_count() });
    let mut buf = Vec::new();
    params::write_checkpoint(&mut buf, store, kind, &vocab.hash(), meta)?;
    std::fs::write(path, buf)?;
    Ok(())
}

fn load(path: &Path, kind: &str, vocab: &Vocabulary) -> Result<ParamStore, ModelError> {
    let f = std::fs::File::open(path)?;
    let (header, store) = params::read_checkpoint(std::io::BufReader::new(f))?;
    if header.kind != kind {
        return Err(ModelError::Checkpoint(format!("expected a {kind} checkpoint, found {}", header.kind)));
    }
    if header.vocab_hash != vocab.hash() {
        return Err(ModelError::Checkpoint("vocabulary hash mismatch".into()));
    }
    Ok(store)
}

impl PolicyModel {
    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<(), ModelError> {
        save(path, &self.store, POLICY_KIND, vocab)
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self, ModelError> {
        Self::from_store(load(path, POLICY_KIND, vocab)?, vocab.specials())
    }
}

impl ValueModel {
    pub fn save(&self, path: &Path, vocab: &Vocabulary) -> Result<(), ModelError> {
        save(path, &self.store, VALUE_KIND, vocab)
    }

    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self, ModelError> {
        Self::from_store(load(path, VALUE_KIND, vocab)?, vocab.specials())
    }
}

#[cfg(test)]
mod tests;
