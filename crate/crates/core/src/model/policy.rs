//! Autoregressive post-processing policy: the shared encoder followed by an
//! Elman decoder whose logits are augmented with gated presence features
//! (token occurs in context / input / state / presented output / already
//! emitted), a cheap stand-in for a copy mechanism.
//!
//! The first-step logit of `<copy>` also receives `a · s`, where `s` sums
//! `logit(token) - max logit` over a teacher-forced pass of the presented
//! output with `<copy>` masked out. `s` is zero exactly when greedy decoding
//! would have written the presented output itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{encode, encode_backward, init, segment, Encoded, EncoderLayout, GROUP_OUTPUT, N_SEGMENTS};
use super::linalg::{axpy, dot, log_sum_exp, matvec_add, matvec_t_add, outer_add};
use super::params::{Gradients, ParamStore, Tensor};
use super::vocab::{SpecialIds, Vocabulary};
use super::ModelError;

pub const N_FEATURES: usize = N_SEGMENTS + 1;
const FEATURE_EMITTED: usize = N_SEGMENTS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden: 64,
            init_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    enc: EncoderLayout,
    w_rec: usize,
    w_in: usize,
    w_ctx: usize,
    b_dec: usize,
    out_w: usize,
    out_b: usize,
    gate_u: usize,
    gate_k: usize,
    agree: usize,
}

impl Layout {
    fn resolve(store: &ParamStore) -> Result<Self, ModelError> {
        let need = |n: &str| {
            store
                .index(n)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor `{n}`")))
        };
        Ok(Self {
            enc: EncoderLayout::resolve(store).ok_or_else(|| ModelError::Checkpoint("missing encoder tensors".into()))?,
            w_rec: need("dec.w_rec")?,
            w_in: need("dec.w_in")?,
            w_ctx: need("dec.w_ctx")?,
            b_dec: need("dec.b")?,
            out_w: need("out.w")?,
            out_b: need("out.b")?,
            gate_u: need("out.gate_u")?,
            gate_k: need("out.gate_k")?,
            agree: need("out.agree")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub store: ParamStore,
    pub specials: SpecialIds,
    lay: Layout,
}

/// Per-step decoder quantities of one teacher-forced pass.
struct Pass {
    y: Vec<u32>,
    hs: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    per_token: Vec<f64>,
    /// Argmax token (ties to the lowest id) and `logit(y) - logit(argmax)`.
    best: Vec<u32>,
    margin: Vec<f64>,
}

/// Everything kept for the backward pass: the main pass and the scoring pass
/// over the presented output.
struct Trace {
    enc: Encoded,
    main: Pass,
    score: Pass,
    agreement: f64,
}

#[derive(Debug, Clone, Copy)]
enum Mode {
    /// Regular decoding; the value is added to the first-step copy logit.
    Main(f64),
    /// Scoring the presented output; `<copy>` is never a candidate.
    Score,
}

/// Sampling controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_len: usize,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
            max_len: super::codec::MAX_OUTPUT_LEN,
        }
    }
}

impl PolicyModel {
    /// Random encoder and decoder; zero output projection and gates, so every
    /// step starts as a uniform distribution.
    pub fn new(vocab: &Vocabulary, cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let (v, d, h) = (vocab.len(), cfg.embed_dim, cfg.hidden);
        let mut tensors = EncoderLayout::tensors(v, d, h, &mut rng);
        tensors.push(init("dec.w_rec", &[h, h], 0.5 / (h as f64).sqrt(), &mut rng));
        tensors.push(init("dec.w_in", &[h, d], 0.5 / (d as f64).sqrt(), &mut rng));
        tensors.push(init("dec.w_ctx", &[h, h], 0.5 / (h as f64).sqrt(), &mut rng));
        tensors.push(Tensor::zeros("dec.b", &[h]));
        tensors.push(Tensor::zeros("out.w", &[v, h]));
        tensors.push(Tensor::zeros("out.b", &[v]));
        tensors.push(Tensor::zeros("out.gate_u", &[N_FEATURES, h]));
        tensors.push(Tensor::zeros("out.gate_k", &[N_FEATURES]));
        tensors.push(Tensor::zeros("out.agree", &[1]));
        Self::from_store(ParamStore::new(tensors), vocab.specials()).expect("fresh layout resolves")
    }

    pub fn from_store(store: ParamStore, specials: SpecialIds) -> Result<Self, ModelError> {
        let lay = Layout::resolve(&store)?;
        Ok(Self { store, specials, lay })
    }

    pub fn vocab_size(&self) -> usize {
        self.lay.enc.vocab
    }

    pub fn hidden(&self) -> usize {
        self.lay.enc.hidden
    }

    pub fn embed_dim(&self) -> usize {
        self.lay.enc.dim
    }

    pub(crate) fn encoder_layout(&self) -> EncoderLayout {
        self.lay.enc
    }

    fn t(&self, i: usize) -> &[f64] {
        &self.store.tensors[i].data
    }

    fn start(&self, x: &[u32]) -> (Encoded, Vec<f64>) {
        let enc = encode(&self.store, &self.lay.enc, segment(&self.specials, x));
        let mut ctx_term = self.t(self.lay.b_dec).to_vec();
        matvec_add(&mut ctx_term, self.t(self.lay.w_ctx), &enc.c);
        (enc, ctx_term)
    }

    /// One decoder step: new hidden state and unnormalized logits.
    fn step(&self, enc: &Encoded, ctx_term: &[f64], prev: u32, h_prev: &[f64], emitted: &[u32]) -> (Vec<f64>, Vec<f64>) {
        let (d, hdim) = (self.lay.enc.dim, self.lay.enc.hidden);
        let mut z = ctx_term.to_vec();
        matvec_add(&mut z, self.t(self.lay.w_rec), h_prev);
        let e = &self.t(self.lay.enc.embed)[prev as usize * d..(prev as usize + 1) * d];
        matvec_add(&mut z, self.t(self.lay.w_in), e);
        let h: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        let mut logits = self.t(self.lay.out_b).to_vec();
        matvec_add(&mut logits, self.t(self.lay.out_w), &h);
        let u = self.t(self.lay.gate_u);
        let k = self.t(self.lay.gate_k);
        for f in 0..N_FEATURES {
            let set: &[u32] = if f == FEATURE_EMITTED { emitted } else { &enc.segments.presence[f] };
            if set.is_empty() {
                continue;
            }
            let g = dot(&u[f * hdim..(f + 1) * hdim], &h) + k[f];
            for &v in set {
                logits[v as usize] += g;
            }
        }
        (h, logits)
    }

    fn adjust(&self, logits: &mut [f64], i: usize, mode: Mode) {
        let copy = self.specials.copy as usize;
        match mode {
            Mode::Main(bonus) if i == 0 => logits[copy] += bonus,
            Mode::Main(_) => {}
            Mode::Score => logits[copy] = f64::NEG_INFINITY,
        }
    }

    fn teacher(&self, enc: &Encoded, ctx_term: &[f64], y: Vec<u32>, mode: Mode) -> Pass {
        let mut h_prev = enc.c.clone();
        let mut prev = self.specials.bos;
        let mut emitted: Vec<u32> = Vec::new();
        let mut hs = Vec::with_capacity(y.len());
        let mut probs = Vec::with_capacity(y.len());
        let mut per_token = Vec::with_capacity(y.len());
        let mut best = Vec::with_capacity(y.len());
        let mut margin = Vec::with_capacity(y.len());
        for (i, &tok) in y.iter().enumerate() {
            let (h, mut logits) = self.step(enc, ctx_term, prev, &h_prev, &emitted);
            self.adjust(&mut logits, i, mode);
            let lse = log_sum_exp(&logits);
            per_token.push(logits[tok as usize] - lse);
            let b = argmax(&logits);
            best.push(b);
            margin.push(logits[tok as usize] - logits[b as usize]);
            probs.push(logits.iter().map(|l| (l - lse).exp()).collect());
            h_prev = h.clone();
            hs.push(h);
            prev = tok;
            if let Err(pos) = emitted.binary_search(&tok) {
                emitted.insert(pos, tok);
            }
        }
        Pass {
            y,
            hs,
            probs,
            per_token,
            best,
            margin,
        }
    }

    /// Scoring pass over the presented output and the resulting copy bonus.
    fn score(&self, enc: &Encoded, ctx_term: &[f64]) -> (Pass, f64, f64) {
        let mut y: Vec<u32> = enc.segments.groups[GROUP_OUTPUT]
            .iter()
            .copied()
            .filter(|&t| t != self.specials.copy)
            .collect();
        y.push(self.specials.eos);
        let pass = self.teacher(enc, ctx_term, y, Mode::Score);
        let agreement: f64 = pass.margin.iter().sum();
        let bonus = self.t(self.lay.agree)[0] * agreement;
        (pass, agreement, bonus)
    }

    fn run(&self, x: &[u32], y: &[u32]) -> Trace {
        let (enc, ctx_term) = self.start(x);
        let (score, agreement, bonus) = self.score(&enc, &ctx_term);
        let main = self.teacher(&enc, &ctx_term, y.to_vec(), Mode::Main(bonus));
        Trace { enc, main, score, agreement }
    }

    /// Teacher-forced log-probability of `y` given `x`: total and per token.
    pub fn sequence_log_prob(&self, x: &[u32], y: &[u32]) -> (f64, Vec<f64>) {
        let per_token = self.run(x, y).main.per_token;
        (per_token.iter().sum(), per_token)
    }

    /// Per-step log-distributions over the vocabulary under teacher forcing.
    pub fn step_log_probs(&self, x: &[u32], y: &[u32]) -> Vec<Vec<f64>> {
        let trace = self.run(x, y);
        trace.main.probs.iter().map(|p| p.iter().map(|v| v.ln()).collect()).collect()
    }

    /// Adds `weight · ∇ log π(y|x)` into `grads` and returns `log π(y|x)`.
    pub fn accumulate_log_prob_gradient(&self, x: &[u32], y: &[u32], weight: f64, grads: &mut Gradients) -> f64 {
        self.accumulate_weighted_log_prob_gradient(x, y, |_| weight, grads)
    }

    /// Like [`Self::accumulate_log_prob_gradient`], with the weight computed
    /// from `log π(y|x)` after the forward pass.
    pub fn accumulate_weighted_log_prob_gradient(
        &self,
        x: &[u32],
        y: &[u32],
        weight: impl FnOnce(f64) -> f64,
        grads: &mut Gradients,
    ) -> f64 {
        let trace = self.run(x, y);
        let total = trace.main.per_token.iter().sum();
        let weight = weight(total);
        if weight == 0.0 || y.is_empty() {
            return total;
        }
        let mut dc = vec![0.0; self.lay.enc.hidden];
        let d_copy = self.backprop(&trace.enc, &trace.main, weight, false, grads, &mut dc);
        grads.data[self.lay.agree][0] += d_copy * trace.agreement;
        let d_score = d_copy * self.t(self.lay.agree)[0];
        if d_score != 0.0 {
            self.backprop(&trace.enc, &trace.score, d_score, true, grads, &mut dc);
        }
        encode_backward(&self.store, &self.lay.enc, &trace.enc, &dc, grads);
        total
    }

    /// Backward through one pass with `weight` on every token log-probability,
    /// or on every margin when `margins` is set. Accumulates into `dc` and
    /// returns the gradient on the first-step copy logit.
    fn backprop(&self, enc: &Encoded, pass: &Pass, weight: f64, margins: bool, grads: &mut Gradients, dc: &mut [f64]) -> f64 {
        let l = &self.lay;
        let (d, hdim) = (l.enc.dim, l.enc.hidden);
        let y = &pass.y;
        let c = &enc.c;
        let mut d_copy = 0.0;
        let mut dh_next = vec![0.0; hdim];
        let mut dl = vec![0.0; l.enc.vocab];
        let mut dh = vec![0.0; hdim];
        let mut de = vec![0.0; d];
        for i in (0..y.len()).rev() {
            let h = &pass.hs[i];
            if margins {
                dl.iter_mut().for_each(|g| *g = 0.0);
                dl[pass.best[i] as usize] -= weight;
            } else {
                for (g, p) in dl.iter_mut().zip(&pass.probs[i]) {
                    *g = -weight * p;
                }
            }
            dl[y[i] as usize] += weight;
            if i == 0 {
                d_copy = dl[self.specials.copy as usize];
            }
            axpy(&mut grads.data[l.out_b], 1.0, &dl);
            outer_add(&mut grads.data[l.out_w], &dl, h);
            dh.copy_from_slice(&dh_next);
            matvec_t_add(&mut dh, self.t(l.out_w), &dl);
            let mut emitted: Vec<u32> = y[..i].to_vec();
            emitted.sort_unstable();
            emitted.dedup();
            for f in 0..N_FEATURES {
                let set: &[u32] = if f == FEATURE_EMITTED { &emitted } else { &enc.segments.presence[f] };
                if set.is_empty() {
                    continue;
                }
                let dg: f64 = set.iter().map(|&v| dl[v as usize]).sum();
                axpy(&mut grads.data[l.gate_u][f * hdim..(f + 1) * hdim], dg, h);
                grads.data[l.gate_k][f] += dg;
                axpy(&mut dh, dg, &self.t(l.gate_u)[f * hdim..(f + 1) * hdim]);
            }
            let dz: Vec<f64> = dh.iter().zip(h).map(|(g, hv)| g * (1.0 - hv * hv)).collect();
            axpy(&mut grads.data[l.b_dec], 1.0, &dz);
            outer_add(&mut grads.data[l.w_ctx], &dz, c);
            matvec_t_add(dc, self.t(l.w_ctx), &dz);
            let prev = if i == 0 { self.specials.bos } else { y[i - 1] } as usize;
            let e = &self.t(l.enc.embed)[prev * d..(prev + 1) * d];
            outer_add(&mut grads.data[l.w_in], &dz, e);
            de.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_add(&mut de, self.t(l.w_in), &dz);
            axpy(&mut grads.data[l.enc.embed][prev * d..(prev + 1) * d], 1.0, &de);
            let h_prev = if i == 0 { c } else { &pass.hs[i - 1] };
            outer_add(&mut grads.data[l.w_rec], &dz, h_prev);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_add(&mut dh_next, self.t(l.w_rec), &dz);
        }
        axpy(dc, 1.0, &dh_next);
        d_copy
    }

    /// Exact gradient of `log π(y|x)`.
    pub fn log_prob_gradient(&self, x: &[u32], y: &[u32]) -> Gradients {
        let mut g = self.store.zero_grads();
        self.accumulate_log_prob_gradient(x, y, 1.0, &mut g);
        g
    }

    /// Ancestral sampling until EOS or `max_len`. The returned log-probability
    /// is that of the untempered model, equal to [`Self::sequence_log_prob`].
    pub fn sample_sequence<R: Rng>(&self, x: &[u32], cfg: &SampleConfig, rng: &mut R) -> (Vec<u32>, f64) {
        self.decode(x, cfg.max_len, |logits, lse| pick(logits, lse, cfg, rng))
    }

    /// Argmax decoding, ties to the lowest id.
    pub fn greedy(&self, x: &[u32], max_len: usize) -> (Vec<u32>, f64) {
        self.decode(x, max_len, |logits, _| argmax(logits))
    }

    fn decode(&self, x: &[u32], max_len: usize, mut choose: impl FnMut(&[f64], f64) -> u32) -> (Vec<u32>, f64) {
        let (enc, ctx_term) = self.start(x);
        let (_, _, bonus) = self.score(&enc, &ctx_term);
        let mut h_prev = enc.c.clone();
        let mut prev = self.specials.bos;
        let mut emitted: Vec<u32> = Vec::new();
        let mut y = Vec::new();
        let mut logp = 0.0;
        while y.len() < max_len {
            let (h, mut logits) = self.step(&enc, &ctx_term, prev, &h_prev, &emitted);
            self.adjust(&mut logits, y.len(), Mode::Main(bonus));
            let lse = log_sum_exp(&logits);
            let tok = choose(&logits, lse);
            logp += logits[tok as usize] - lse;
            y.push(tok);
            if tok == self.specials.eos {
                break;
            }
            h_prev = h;
            prev = tok;
            if let Err(pos) = emitted.binary_search(&tok) {
                emitted.insert(pos, tok);
            }
        }
        (y, logp)
    }
}

fn argmax(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best as u32
}

fn pick<R: Rng>(logits: &[f64], lse: f64, cfg: &SampleConfig, rng: &mut R) -> u32 {
    let probs: Vec<f64> = if cfg.temperature == 1.0 {
        logits.iter().map(|l| (l - lse).exp()).collect()
    } else {
        let t = cfg.temperature.max(1e-6);
        let scaled: Vec<f64> = logits.iter().map(|l| l / t).collect();
        let z = log_sum_exp(&scaled);
        scaled.iter().map(|l| (l - z).exp()).collect()
    };
    let mut order: Vec<usize> = (0..probs.len()).collect();
    let mut mass = 1.0;
    if cfg.top_p < 1.0 {
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let mut acc = 0.0;
        let mut keep = 0;
        for &i in &order {
            acc += probs[i];
            keep += 1;
            if acc >= cfg.top_p {
                break;
            }
        }
        order.truncate(keep);
        mass = acc;
    }
    let r: f64 = rng.random::<f64>() * mass;
    let mut acc = 0.0;
    for &i in &order {
        acc += probs[i];
        if r < acc {
            return i as u32;
        }
    }
    *order.last().expect("non-empty vocabulary") as u32
}
