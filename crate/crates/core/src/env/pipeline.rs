//! The noisy rule-based system whose module outputs get post-processed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::acts::{parse_utterance, render_utterance, Act, ActList};
use super::state::DialogueState;
use super::world::{self, World};
use super::EnvError;

/// Per-item error probabilities of the four modules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseProfile {
    pub p_nlu_drop: f64,
    pub p_nlu_corrupt: f64,
    pub p_dst_skip: f64,
    pub p_policy_omit: f64,
    pub p_nlg_drop: f64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            p_nlu_drop: 0.06,
            p_nlu_corrupt: 0.03,
            p_dst_skip: 0.03,
            p_policy_omit: 0.06,
            p_nlg_drop: 0.03,
        }
    }
}

impl NoiseProfile {
    pub fn zero() -> Self {
        Self {
            p_nlu_drop: 0.0,
            p_nlu_corrupt: 0.0,
            p_dst_skip: 0.0,
            p_policy_omit: 0.0,
            p_nlg_drop: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let all = [
            ("p_nlu_drop", self.p_nlu_drop),
            ("p_nlu_corrupt", self.p_nlu_corrupt),
            ("p_dst_skip", self.p_dst_skip),
            ("p_policy_omit", self.p_policy_omit),
            ("p_nlg_drop", self.p_nlg_drop),
        ];
        for (name, p) in all {
            if !(0.0..=1.0).contains(&p) {
                return Err(EnvError::Config(format!("{name} = {p} is not a probability")));
            }
        }
        Ok(())
    }
}

/// Parses the user utterance, then drops acts and resamples inform values.
pub fn nlu_forward<R: Rng>(
    world: &World,
    utterance: &[String],
    noise: &NoiseProfile,
    rng: &mut R,
) -> ActList {
    let mut out = Vec::new();
    for act in parse_utterance(world, utterance).0 {
        if rng.random_bool(noise.p_nlu_drop) {
            continue;
        }
        let act = match act {
            Act::Inform { domain, slot, .. } if rng.random_bool(noise.p_nlu_corrupt) => Act::Inform {
                domain,
                slot,
                value: rng.random_range(0..world.n_values(domain, slot)),
            },
            other => other,
        };
        out.push(act);
    }
    ActList::canonical(out)
}

/// Merges informs (later wins) and records requests as pending. Each merge
/// is skipped with `p_dst_skip`.
pub fn dst_forward<R: Rng>(
    state: &DialogueState,
    acts: &ActList,
    noise: &NoiseProfile,
    rng: &mut R,
) -> DialogueState {
    let mut next = state.clone();
    for act in acts.iter() {
        match *act {
            Act::Inform { domain, slot, value } => {
                if !rng.random_bool(noise.p_dst_skip) {
                    next.domains[domain].constraints[slot] = Some(value);
                }
            }
            Act::Request { domain, slot } if !world_is_informable(&next, domain, slot) => {
                next.domains[domain].pending.insert(slot);
            }
            _ => {}
        }
    }
    next
}

fn world_is_informable(state: &DialogueState, domain: usize, slot: usize) -> bool {
    slot < state.domains[domain].constraints.len()
}

/// Offers the lowest-id matching entity of each constrained domain and
/// answers its pending requests (each omitted with `p_policy_omit`). A domain
/// with pending requests but no constraints gets a request for its first
/// informable slot; an empty state gets a request for the first slot of the
/// first domain.
pub fn policy_forward<R: Rng>(
    world: &World,
    state: &DialogueState,
    noise: &NoiseProfile,
    rng: &mut R,
) -> ActList {
    let mut acts = Vec::new();
    for (d, ds) in state.domains.iter().enumerate() {
        if !ds.is_active() {
            continue;
        }
        let constraints = ds.constraint_pairs();
        if constraints.is_empty() {
            acts.push(Act::Request { domain: d, slot: 0 });
            continue;
        }
        let Some(best) = world.db.query(d, &constraints).first().map(|e| e.id) else {
            continue;
        };
        acts.push(Act::Offer { domain: d, entity: best });
        for &slot in &ds.pending {
            if !rng.random_bool(noise.p_policy_omit) {
                acts.push(Act::Answer {
                    domain: d,
                    slot,
                    entity: best,
                });
            }
        }
    }
    if acts.is_empty() {
        acts.push(Act::Request { domain: 0, slot: 0 });
    }
    ActList::canonical(acts)
}

/// Renders each act, dropping its span with `p_nlg_drop`.
pub fn nlg_forward<R: Rng>(world: &World, acts: &ActList, noise: &NoiseProfile, rng: &mut R) -> Vec<String> {
    let kept: Vec<Act> = acts
        .iter()
        .filter(|_| !rng.random_bool(noise.p_nlg_drop))
        .copied()
        .collect();
    render_utterance(world, &ActList::new(kept))
}

/// Which rule module occupies a pipeline slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Nlu,
    Dst,
    Policy,
    Nlg,
    /// Tracker and policy fused; used by the two-module word-level pipeline.
    DstPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    /// NLU → DST → policy → NLG.
    #[default]
    Standard,
    /// NLU → fused DST+policy; responses rendered by fixed templates.
    WordLevel,
}

impl PipelineKind {
    pub fn modules(self) -> &'static [ModuleKind] {
        match self {
            PipelineKind::Standard => &[ModuleKind::Nlu, ModuleKind::Dst, ModuleKind::Policy, ModuleKind::Nlg],
            PipelineKind::WordLevel => &[ModuleKind::Nlu, ModuleKind::DstPolicy],
        }
    }

    pub fn module_count(self) -> usize {
        self.modules().len()
    }
}

/// Typed output of one module.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModuleOutput {
    Acts(ActList),
    State(DialogueState),
    Response(Vec<String>),
}

impl ModuleOutput {
    pub fn to_tokens(&self, world: &World) -> Vec<String> {
        match self {
            ModuleOutput::Acts(a) => a.to_tokens(world),
            ModuleOutput::State(s) => s.belief_tokens(world),
            ModuleOutput::Response(r) => r.clone(),
        }
    }

    /// Strictly parses `tokens` as the same kind of output as `self`.
    pub fn reparse<S: AsRef<str>>(&self, world: &World, tokens: &[S]) -> Result<ModuleOutput, EnvError> {
        match self {
            ModuleOutput::Acts(_) => ActList::from_tokens(world, tokens).map(ModuleOutput::Acts),
            ModuleOutput::State(base) => {
                DialogueState::from_belief_tokens(world, tokens, base).map(ModuleOutput::State)
            }
            ModuleOutput::Response(_) => parse_response(world, tokens).map(ModuleOutput::Response),
        }
    }
}

/// A response is valid when it is the empty-response token alone or parses
/// completely under the template grammar.
fn parse_response<S: AsRef<str>>(world: &World, tokens: &[S]) -> Result<Vec<String>, EnvError> {
    let toks: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
    if toks.len() == 1 && toks[0] == world::EMPTY {
        return Ok(toks);
    }
    let acts = parse_utterance(world, &toks);
    if acts.is_empty() || acts.acts().contains(&Act::Bye) || render_utterance(world, &acts) != toks {
        return Err(EnvError::Parse("response does not follow the template grammar".into()));
    }
    Ok(toks)
}
