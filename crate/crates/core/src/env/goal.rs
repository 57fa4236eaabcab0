use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::world::World;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainGoal {
    pub domain: usize,
    /// `(informable slot, value)` pairs in slot order.
    pub constraints: Vec<(usize, usize)>,
    /// Requestable slot indices in slot order.
    pub requests: Vec<usize>,
}

impl DomainGoal {
    pub fn value_of(&self, slot: usize) -> Option<usize> {
        self.constraints.iter().find(|&&(s, _)| s == slot).map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueGoal {
    pub domains: Vec<DomainGoal>,
}

impl DialogueGoal {
    pub fn domain(&self, d: usize) -> Option<&DomainGoal> {
        self.domains.iter().find(|g| g.domain == d)
    }

    pub fn n_requests(&self) -> usize {
        self.domains.iter().map(|g| g.requests.len()).sum()
    }
}

/// Draws one or two active domains (in schema order), one to three
/// constraints and one or two requests per domain. Satisfiability follows
/// from the database covering every value combination.
pub fn generate_goal<R: Rng>(world: &World, p_two_domains: f64, rng: &mut R) -> DialogueGoal {
    let nd = world.n_domains();
    let k = if nd > 1 && rng.random_bool(p_two_domains) { 2 } else { 1 };
    let mut picked = sample(rng, nd, k).into_vec();
    picked.sort_unstable();
    let domains = picked
        .into_iter()
        .map(|d| {
            let dom = &world.schema.domains[d];
            let ni = dom.n_informable();
            let nc = rng.random_range(1..=ni.min(3));
            let mut slots = sample(rng, ni, nc).into_vec();
            slots.sort_unstable();
            let constraints = slots
                .into_iter()
                .map(|s| (s, rng.random_range(0..world.n_values(d, s))))
                .collect();
            let nr_max = dom.requestable.len().min(2);
            let nr = rng.random_range(1..=nr_max);
            let mut requests: Vec<usize> = sample(rng, dom.requestable.len(), nr)
                .into_iter()
                .map(|r| ni + r)
                .collect();
            requests.sort_unstable();
            DomainGoal {
                domain: d,
                constraints,
                requests,
            }
        })
        .collect();
    DialogueGoal { domains }
}
