use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::DemoDataset;
use crate::model::{encode_ppn_input, encode_target, optimizer_step, AdamConfig, ModelError, PolicyModel, Vocabulary, MAX_OUTPUT_LEN};

/// A demonstration instance in token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedInstance {
    pub x: Vec<u32>,
    pub y: Vec<u32>,
    pub module: usize,
    pub is_copy: bool,
}

pub fn encode_dataset(vocab: &Vocabulary, data: &DemoDataset) -> Result<Vec<EncodedInstance>, ModelError> {
    data.instances
        .iter()
        .map(|i| {
            Ok(EncodedInstance {
                x: encode_ppn_input(vocab, &i.context, &i.input, &i.presented, i.module)?,
                y: encode_target(vocab, &i.target)?,
                module: i.module,
                is_copy: i.is_copy,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainIlConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// The step size decays linearly from `lr` to `lr * final_lr_fraction`.
    pub final_lr_fraction: f64,
    pub adam: AdamConfig,
}

impl Default for TrainIlConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 64,
            lr: 3e-3,
            final_lr_fraction: 0.1,
            adam: AdamConfig::default(),
        }
    }
}

/// Mean negative log-likelihood of the targets.
pub fn mean_nll(model: &PolicyModel, data: &[EncodedInstance]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    -data.iter().map(|i| model.sequence_log_prob(&i.x, &i.y).0).sum::<f64>() / data.len() as f64
}

/// Maximum-likelihood fitting over shuffled mini-batches. Returns the mean
/// training loss before training, then the running mean over each epoch.
pub fn train_il(
    model: &mut PolicyModel,
    data: &[EncodedInstance],
    cfg: &TrainIlConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, &PolicyModel, f64),
) -> Result<Vec<f64>, ModelError> {
    let mut history = vec![mean_nll(model, data)];
    if data.is_empty() || cfg.epochs == 0 {
        return Ok(history);
    }
    let batch = cfg.batch.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let total_steps = (cfg.epochs * data.len().div_ceil(batch)) as f64;
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut nll = 0.0;
        for chunk in order.chunks(batch) {
            let mut g = model.store.zero_grads();
            let w = -1.0 / chunk.len() as f64;
            for &i in chunk {
                nll -= model.accumulate_log_prob_gradient(&data[i].x, &data[i].y, w, &mut g);
            }
            let lr = cfg.lr * (1.0 - (1.0 - cfg.final_lr_fraction) * step as f64 / total_steps);
            optimizer_step(&mut model.store, &g, lr, &cfg.adam)?;
            step += 1;
        }
        let loss = nll / data.len() as f64;
        history.push(loss);
        on_epoch(epoch, model, loss);
    }
    Ok(history)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExactMatch {
    pub copy_total: usize,
    pub copy_correct: usize,
    pub reconstruction_total: usize,
    pub reconstruction_correct: usize,
    /// `(total, correct)` per module, reconstruction and copy pooled.
    pub per_module: Vec<(usize, usize)>,
}

impl ExactMatch {
    pub fn copy_rate(&self) -> f64 {
        ratio(self.copy_correct, self.copy_total)
    }

    pub fn reconstruction_rate(&self) -> f64 {
        ratio(self.reconstruction_correct, self.reconstruction_total)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Greedy decoding compared token for token with each target.
pub fn exact_match(model: &PolicyModel, data: &[EncodedInstance], module_count: usize) -> ExactMatch {
    let mut r = ExactMatch {
        per_module: vec![(0, 0); module_count],
        ..Default::default()
    };
    for i in data {
        let (y, _) = model.greedy(&i.x, MAX_OUTPUT_LEN);
        let ok = y == i.y;
        if i.is_copy {
            r.copy_total += 1;
            r.copy_correct += ok as usize;
        } else {
            r.reconstruction_total += 1;
            r.reconstruction_correct += ok as usize;
        }
        let pm = &mut r.per_module[i.module - 1];
        pm.0 += 1;
        pm.1 += ok as usize;
    }
    r
}
