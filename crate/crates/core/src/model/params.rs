use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named tensors plus the optimizer's first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub tensors: Vec<Tensor>,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl ParamStore {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        let m = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        let v = tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self { tensors, m, v, step: 0 }
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            data: self.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    /// Flat view used by finite-difference checks: `(tensor, offset)`.
    pub fn locate(&self, mut flat: usize) -> (usize, usize) {
        for (i, t) in self.tensors.iter().enumerate() {
            if flat < t.len() {
                return (i, flat);
            }
            flat -= t.len();
        }
        panic!("flat index out of range");
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub data: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn scale(&mut self, c: f64) {
        for g in &mut self.data {
            for x in g.iter_mut() {
                *x *= c;
            }
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }

    pub fn flat(&self, tensor: usize, offset: usize) -> f64 {
        self.data[tensor][offset]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected adaptive-moment descent step on `grads` (gradients of a
/// loss to minimize).
pub fn optimizer_step(store: &mut ParamStore, grads: &Gradients, lr: f64, cfg: &AdamConfig) -> Result<(), ModelError> {
    if grads.data.len() != store.tensors.len() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} gradient tensors for {} parameters",
            grads.data.len(),
            store.tensors.len()
        )));
    }
    for (t, g) in store.tensors.iter().zip(&grads.data) {
        if t.len() != g.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "`{}` holds {} values, gradient {}",
                t.name,
                t.len(),
                g.len()
            )));
        }
    }
    store.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(store.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(store.step as i32);
    for i in 0..store.tensors.len() {
        let (p, m, v, g) = (&mut store.tensors[i].data, &mut store.m[i], &mut store.v[i], &grads.data[i]);
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

const MAGIC: &str = "ppnlab-checkpoint";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub kind: String,
    pub vocab_hash: String,
    pub meta: serde_json::Value,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
}

/// Magic line, JSON header line, then each tensor's values, first moments
/// and second moments as little-endian `f64`.
pub fn write_checkpoint<W: Write>(
    mut w: W,
    store: &ParamStore,
    kind: &str,
    vocab_hash: &str,
    meta: serde_json::Value,
) -> Result<(), ModelError> {
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        kind: kind.to_string(),
        vocab_hash: vocab_hash.to_string(),
        meta,
        step: store.step,
        tensors: store
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    writeln!(w, "{MAGIC}")?;
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(store.n_params() * 24);
    for i in 0..store.tensors.len() {
        for part in [&store.tensors[i].data, &store.m[i], &store.v[i]] {
            for x in part.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, ParamStore), ModelError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    let nl1 = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing magic line"))?;
    if &bytes[..nl1] != MAGIC.as_bytes() {
        return Err(bad("not a checkpoint file"));
    }
    let rest = &bytes[nl1 + 1..];
    let nl2 = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("missing header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&rest[..nl2])?;
    if header.version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported format version {}", header.version)));
    }
    let payload = &rest[nl2 + 1..];
    let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if payload.len() != total * 3 * 8 {
        return Err(ModelError::Checkpoint(format!(
            "payload holds {} bytes, header implies {}",
            payload.len(),
            total * 24
        )));
    }
    let mut vals = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut tensors = Vec::new();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let mut take = || (&mut vals).take(n).collect::<Vec<f64>>();
        tensors.push(Tensor {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data: take(),
        });
        m.push(take());
        v.push(take());
    }
    let store = ParamStore {
        tensors,
        m,
        v,
        step: header.step,
    };
    Ok((header, store))
}
