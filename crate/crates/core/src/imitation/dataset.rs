use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::history::Histories;
use super::similarity::{embed_history, sample_negative, TermIndex};
use super::ImitationError;
use crate::env::world::COPY;
use crate::seed::{derive_seed, unit_f64};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoInstance {
    pub dialogue: usize,
    pub turn: usize,
    pub module: usize,
    pub context: Vec<String>,
    pub input: Vec<String>,
    /// The output shown to the policy: the entry's own output for copy
    /// instances, a similar entry's output otherwise.
    pub presented: Vec<String>,
    pub target: Vec<String>,
    pub is_copy: bool,
    /// History id of the entry whose output was presented.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DemoDataset {
    pub instances: Vec<DemoInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub alpha: f64,
    pub k: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { alpha: 0.1, k: 5 }
    }
}

pub const DEMO_STREAM: u64 = 0x4445_4d4f;

/// Turns every history entry into one copy or reconstruction instance.
/// A negative is drawn from the top-k similar entries, preferring those
/// whose output differs from the entry's own.
/// Modules use independent random streams, so the result is a pure function
/// of the histories, `cfg` and `seed`.
pub fn build_demo_dataset(histories: &Histories, cfg: &DemoConfig, seed: u64) -> Result<DemoDataset, ImitationError> {
    if !(0.0..=1.0).contains(&cfg.alpha) {
        return Err(ImitationError::Config(format!("alpha = {} is not a probability", cfg.alpha)));
    }
    let mut instances = Vec::new();
    for (m, hm) in histories.modules.iter().enumerate() {
        let mut index = TermIndex::default();
        let embeddings = embed_history(&mut index, hm);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, DEMO_STREAM, m as u64));
        for entry in hm {
            let is_copy = rng.random_bool(cfg.alpha);
            let (presented, target, source) = if is_copy {
                (entry.output.clone(), vec![COPY.to_string()], entry.id)
            } else {
                let neg = sample_negative(&embeddings, entry.id, cfg.k, |j| hm[j].output != entry.output, &mut rng)?;
                (hm[neg].output.clone(), entry.output.clone(), neg)
            };
            instances.push(DemoInstance {
                dialogue: entry.dialogue,
                turn: entry.turn,
                module: entry.module,
                context: entry.context.clone(),
                input: entry.input.clone(),
                presented,
                target,
                is_copy,
                source,
            });
        }
    }
    Ok(DemoDataset { instances })
}

pub const HOLDOUT_STREAM: u64 = 0x484f_4c44;

/// Whether `dialogue` belongs to the held-out split.
pub fn is_held_out(dialogue: usize, fraction: f64, seed: u64) -> bool {
    unit_f64(derive_seed(seed, HOLDOUT_STREAM, dialogue as u64)) < fraction
}

impl DemoDataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn copy_fraction(&self) -> f64 {
        if self.instances.is_empty() {
            return 0.0;
        }
        self.instances.iter().filter(|i| i.is_copy).count() as f64 / self.instances.len() as f64
    }

    /// Splits by dialogue id into `(train, held_out)`.
    pub fn split(&self, fraction: f64, seed: u64) -> (DemoDataset, DemoDataset) {
        let (held, train): (Vec<_>, Vec<_>) = self
            .instances
            .iter()
            .cloned()
            .partition(|i| is_held_out(i.dialogue, fraction, seed));
        (DemoDataset { instances: train }, DemoDataset { instances: held })
    }

    pub fn per_module_counts(&self, module_count: usize) -> Vec<usize> {
        let mut c = vec![0; module_count];
        for i in &self.instances {
            c[i.module - 1] += 1;
        }
        c
    }

    /// Header line followed by one instance per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W, header: &DatasetHeader) -> Result<(), ImitationError> {
        serde_json::to_writer(&mut w, header)?;
        w.write_all(b"\n")?;
        for i in &self.instances {
            serde_json::to_writer(&mut w, i)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<(DatasetHeader, DemoDataset), ImitationError> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| ImitationError::Format("empty dataset file".into()))??;
        let header: DatasetHeader = serde_json::from_str(&first)?;
        let mut instances = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            instances.push(serde_json::from_str(&line)?);
        }
        if instances.len() != header.instances {
            return Err(ImitationError::Format(format!(
                "header announces {} instances, file holds {}",
                header.instances,
                instances.len()
            )));
        }
        Ok((header, DemoDataset { instances }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub vocab_hash: String,
    pub module_count: usize,
    pub instances: usize,
    pub alpha: f64,
    pub k: usize,
    pub seed: u64,
}
