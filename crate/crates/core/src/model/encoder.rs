//! Segment-aware pooling encoder shared by the policy and value models.
//!
//! `x` is split into context, module input, carried-over state, presented
//! output and module prefix. Each group below is mean-pooled over token
//! embeddings and projected by its own matrix; the sum goes through `tanh`.
//! The overlap groups let the encoder see which presented tokens are
//! supported by the input and which input tokens the output leaves out.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::linalg::{matvec_add, matvec_t_add, outer_add};
use super::params::{Gradients, ParamStore, Tensor};
use super::vocab::SpecialIds;

pub const GROUP_CONTEXT: usize = 0;
pub const GROUP_INPUT: usize = 1;
pub const GROUP_STATE: usize = 2;
pub const GROUP_OUTPUT: usize = 3;
pub const GROUP_OUT_SUPPORTED: usize = 4;
pub const GROUP_OUT_UNSUPPORTED: usize = 5;
pub const GROUP_IN_MISSING: usize = 6;
pub const GROUP_OUT_IN_CONTEXT: usize = 7;
pub const GROUP_PREFIX: usize = 8;
pub const N_GROUPS: usize = 9;

/// Distinct-token sets of the four segments, in this order.
pub const N_SEGMENTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Segments {
    pub groups: [Vec<u32>; N_GROUPS],
    /// Sorted distinct ids of context, input, state and output.
    pub presence: [Vec<u32>; N_SEGMENTS],
}

fn distinct(v: &[u32]) -> Vec<u32> {
    let mut d = v.to_vec();
    d.sort_unstable();
    d.dedup();
    d
}

/// Splits an encoded policy input into its groups. Tolerates any sequence:
/// missing separators leave later segments empty.
pub fn segment(sp: &SpecialIds, x: &[u32]) -> Segments {
    let mut s = Segments::default();
    let mut i = 0;
    if x.first() == Some(&sp.bos) {
        i = 1;
    }
    if i < x.len() && sp.is_prefix(x[i]) {
        s.groups[GROUP_PREFIX].push(x[i]);
        i += 1;
    }
    let mut part = 0;
    let mut in_state = false;
    for &t in &x[i..] {
        if t == sp.eos {
            break;
        }
        if t == sp.sep {
            part += 1;
            continue;
        }
        if t == sp.bos {
            continue;
        }
        match part {
            0 => s.groups[GROUP_CONTEXT].push(t),
            1 if t == sp.state => in_state = true,
            1 if in_state => s.groups[GROUP_STATE].push(t),
            1 => s.groups[GROUP_INPUT].push(t),
            _ => s.groups[GROUP_OUTPUT].push(t),
        }
    }
    for k in 0..N_SEGMENTS {
        s.presence[k] = distinct(&s.groups[k]);
    }
    let in_set: Vec<u32> = distinct(&[&s.groups[GROUP_INPUT][..], &s.groups[GROUP_STATE][..]].concat());
    let out_set = &s.presence[GROUP_OUTPUT];
    let ctx_set = &s.presence[GROUP_CONTEXT];
    let (sup, unsup): (Vec<u32>, Vec<u32>) = s.groups[GROUP_OUTPUT]
        .iter()
        .partition(|t| in_set.binary_search(t).is_ok());
    s.groups[GROUP_OUT_SUPPORTED] = sup;
    s.groups[GROUP_OUT_UNSUPPORTED] = unsup;
    s.groups[GROUP_IN_MISSING] = s.groups[GROUP_INPUT]
        .iter()
        .chain(&s.groups[GROUP_STATE])
        .copied()
        .filter(|t| out_set.binary_search(t).is_err())
        .collect();
    s.groups[GROUP_OUT_IN_CONTEXT] = s.groups[GROUP_OUTPUT]
        .iter()
        .copied()
        .filter(|t| ctx_set.binary_search(t).is_ok())
        .collect();
    s
}

/// Indices of the encoder tensors inside a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderLayout {
    pub embed: usize,
    pub w: [usize; N_GROUPS],
    pub b: usize,
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
}

impl EncoderLayout {
    pub fn tensors<R: Rng>(vocab: usize, dim: usize, hidden: usize, rng: &mut R) -> Vec<Tensor> {
        let mut out = vec![init("embed", &[vocab, dim], 0.5, rng)];
        for g in 0..N_GROUPS {
            out.push(init(&format!("enc.w{g}"), &[hidden, dim], 0.5 / (dim as f64).sqrt(), rng));
        }
        out.push(Tensor::zeros("enc.b", &[hidden]));
        out
    }

    pub fn resolve(store: &ParamStore) -> Option<Self> {
        let embed = store.index("embed")?;
        let shape = &store.tensors[embed].shape;
        let (vocab, dim) = (shape[0], shape[1]);
        let mut w = [0; N_GROUPS];
        for (g, slot) in w.iter_mut().enumerate() {
            *slot = store.index(&format!("enc.w{g}"))?;
        }
        let b = store.index("enc.b")?;
        let hidden = store.tensors[b].len();
        Some(Self {
            embed,
            w,
            b,
            vocab,
            dim,
            hidden,
        })
    }
}

pub fn init<R: Rng>(name: &str, shape: &[usize], std: f64, rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut t = Tensor::zeros(name, shape);
    for x in t.data.iter_mut() {
        *x = normal.sample(rng);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub segments: Segments,
    /// Mean embedding per group (zeros for empty groups).
    pub means: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

pub fn encode(store: &ParamStore, lay: &EncoderLayout, segments: Segments) -> Encoded {
    let emb = &store.tensors[lay.embed].data;
    let mut a = store.tensors[lay.b].data.clone();
    let mut means = Vec::with_capacity(N_GROUPS);
    for g in 0..N_GROUPS {
        let toks = &segments.groups[g];
        let mut mean = vec![0.0; lay.dim];
        if !toks.is_empty() {
            for &t in toks {
                let row = &emb[t as usize * lay.dim..(t as usize + 1) * lay.dim];
                for (m, e) in mean.iter_mut().zip(row) {
                    *m += e;
                }
            }
            let inv = 1.0 / toks.len() as f64;
            mean.iter_mut().for_each(|m| *m *= inv);
            matvec_add(&mut a, &store.tensors[lay.w[g]].data, &mean);
        }
        means.push(mean);
    }
    let c = a.iter().map(|v| v.tanh()).collect();
    Encoded { segments, means, c }
}

/// Back-propagates `dc` (gradient with respect to the encoding) into `grads`.
pub fn encode_backward(store: &ParamStore, lay: &EncoderLayout, enc: &Encoded, dc: &[f64], grads: &mut Gradients) {
    let da: Vec<f64> = dc.iter().zip(&enc.c).map(|(g, c)| g * (1.0 - c * c)).collect();
    for (gb, d) in grads.data[lay.b].iter_mut().zip(&da) {
        *gb += d;
    }
    let mut dmean = vec![0.0; lay.dim];
    for g in 0..N_GROUPS {
        let toks = &enc.segments.groups[g];
        if toks.is_empty() {
            continue;
        }
        outer_add(&mut grads.data[lay.w[g]], &da, &enc.means[g]);
        dmean.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_add(&mut dmean, &store.tensors[lay.w[g]].data, &da);
        let inv = 1.0 / toks.len() as f64;
        let ge = &mut grads.data[lay.embed];
        for &t in toks {
            let row = &mut ge[t as usize * lay.dim..(t as usize + 1) * lay.dim];
            for (r, d) in row.iter_mut().zip(&dmean) {
                *r += d * inv;
            }
        }
    }
}
