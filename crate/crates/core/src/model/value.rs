//! Critic: the shared encoder family with a scalar linear head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{encode, encode_backward, segment, EncoderLayout};
use super::linalg::{axpy, dot};
use super::params::{Gradients, ParamStore, Tensor};
use super::policy::{ModelConfig, PolicyModel};
use super::vocab::{SpecialIds, Vocabulary};
use super::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    pub store: ParamStore,
    pub specials: SpecialIds,
    enc: EncoderLayout,
    head_w: usize,
    head_b: usize,
}

impl ValueModel {
    /// Random encoder, zero head.
    pub fn new(vocab: &Vocabulary, cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let mut tensors = EncoderLayout::tensors(vocab.len(), cfg.embed_dim, cfg.hidden, &mut rng);
        tensors.push(Tensor::zeros("head.w", &[cfg.hidden]));
        tensors.push(Tensor::zeros("head.b", &[1]));
        Self::from_store(ParamStore::new(tensors), vocab.specials()).expect("fresh layout resolves")
    }

    /// Copies the policy's embedding and encoder; the head starts at zero.
    pub fn from_policy_encoder(policy: &PolicyModel) -> Self {
        let lay = policy.encoder_layout();
        let mut tensors: Vec<Tensor> = std::iter::once(lay.embed)
            .chain(lay.w)
            .chain(std::iter::once(lay.b))
            .map(|i| policy.store.tensors[i].clone())
            .collect();
        tensors.push(Tensor::zeros("head.w", &[lay.hidden]));
        tensors.push(Tensor::zeros("head.b", &[1]));
        Self::from_store(ParamStore::new(tensors), policy.specials).expect("copied layout resolves")
    }

    pub fn from_store(store: ParamStore, specials: SpecialIds) -> Result<Self, ModelError> {
        let enc = EncoderLayout::resolve(&store).ok_or_else(|| ModelError::Checkpoint("missing encoder tensors".into()))?;
        let head_w = store
            .index("head.w")
            .ok_or_else(|| ModelError::Checkpoint("missing tensor `head.w`".into()))?;
        let head_b = store
            .index("head.b")
            .ok_or_else(|| ModelError::Checkpoint("missing tensor `head.b`".into()))?;
        Ok(Self {
            store,
            specials,
            enc,
            head_w,
            head_b,
        })
    }

    pub fn estimate_value(&self, x: &[u32]) -> f64 {
        let e = encode(&self.store, &self.enc, segment(&self.specials, x));
        dot(&self.store.tensors[self.head_w].data, &e.c) + self.store.tensors[self.head_b].data[0]
    }

    /// Adds `weight · ∇V(x)` into `grads` and returns `V(x)`.
    pub fn accumulate_value_gradient(&self, x: &[u32], weight: f64, grads: &mut Gradients) -> f64 {
        self.accumulate_weighted_value_gradient(x, |_| weight, grads)
    }

    /// Like [`Self::accumulate_value_gradient`], with the weight computed from
    /// `V(x)` after the forward pass.
    pub fn accumulate_weighted_value_gradient(
        &self,
        x: &[u32],
        weight: impl FnOnce(f64) -> f64,
        grads: &mut Gradients,
    ) -> f64 {
        let e = encode(&self.store, &self.enc, segment(&self.specials, x));
        let w = &self.store.tensors[self.head_w].data;
        let v = dot(w, &e.c) + self.store.tensors[self.head_b].data[0];
        let weight = weight(v);
        if weight != 0.0 {
            axpy(&mut grads.data[self.head_w], weight, &e.c);
            grads.data[self.head_b][0] += weight;
            let dc: Vec<f64> = w.iter().map(|x| x * weight).collect();
            encode_backward(&self.store, &self.enc, &e, &dc, grads);
        }
        v
    }

    pub fn value_gradient(&self, x: &[u32]) -> Gradients {
        let mut g = self.store.zero_grads();
        self.accumulate_value_gradient(x, 1.0, &mut g);
        g
    }
}
