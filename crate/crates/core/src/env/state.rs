use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::acts::{parse_pair, Act};
use super::world::{self, World};
use super::EnvError;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DomainState {
    /// Believed value per informable slot.
    pub constraints: Vec<Option<usize>>,
    /// Requested slots not yet answered.
    pub pending: BTreeSet<usize>,
    pub answered: BTreeSet<usize>,
    pub offered: Option<usize>,
}

impl DomainState {
    pub fn constraint_pairs(&self) -> Vec<(usize, usize)> {
        self.constraints
            .iter()
            .enumerate()
            .filter_map(|(s, v)| v.map(|v| (s, v)))
            .collect()
    }

    pub fn is_active(&self) -> bool {
        self.constraints.iter().any(Option::is_some) || !self.pending.is_empty()
    }
}

/// Accumulated belief of the system plus its bookkeeping of what it has
/// offered and answered. Only the belief part (constraints and pending
/// requests) is serialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    pub domains: Vec<DomainState>,
}

impl DialogueState {
    pub fn empty(world: &World) -> Self {
        Self {
            domains: world
                .schema
                .domains
                .iter()
                .map(|d| DomainState {
                    constraints: vec![None; d.n_informable()],
                    ..Default::default()
                })
                .collect(),
        }
    }

    pub fn belief_tokens(&self, world: &World) -> Vec<String> {
        let mut out = Vec::new();
        for (d, ds) in self.domains.iter().enumerate() {
            for (s, v) in ds.constraint_pairs() {
                out.push(world.fused(d, s));
                out.push(world.value_name(d, s, v).to_string());
            }
            for &s in &ds.pending {
                out.push(world.fused(d, s));
                out.push(world::REQ_MARK.to_string());
            }
        }
        out
    }

    /// Parses a belief serialization, keeping `base`'s bookkeeping fields.
    /// Each constraint slot may appear at most once.
    pub fn from_belief_tokens<S: AsRef<str>>(
        world: &World,
        tokens: &[S],
        base: &DialogueState,
    ) -> Result<Self, EnvError> {
        let mut out = base.clone();
        for ds in &mut out.domains {
            ds.constraints.iter_mut().for_each(|c| *c = None);
            ds.pending.clear();
        }
        if tokens.len() % 2 != 0 {
            return Err(EnvError::Parse("belief has an odd token count".into()));
        }
        for pair in tokens.chunks(2) {
            match parse_pair(world, pair[0].as_ref(), Some(pair[1].as_ref()))? {
                Act::Inform { domain, slot, value } => {
                    let c = &mut out.domains[domain].constraints[slot];
                    if c.is_some() {
                        return Err(EnvError::Parse(format!("slot `{}` repeated", pair[0].as_ref())));
                    }
                    *c = Some(value);
                }
                Act::Request { domain, slot } => {
                    out.domains[domain].pending.insert(slot);
                }
                _ => return Err(EnvError::Parse(format!("`{}` is not a belief entry", pair[0].as_ref()))),
            }
        }
        Ok(out)
    }

    /// Records the system's own offers and answers after the policy acted.
    pub fn record_system_acts(&mut self, acts: &[Act]) {
        for act in acts {
            match *act {
                Act::Offer { domain, entity } => self.domains[domain].offered = Some(entity),
                Act::Answer { domain, slot, .. } => {
                    let ds = &mut self.domains[domain];
                    ds.pending.remove(&slot);
                    ds.answered.insert(slot);
                }
                _ => {}
            }
        }
    }
}
