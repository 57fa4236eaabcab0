use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::schema::Schema;
use super::EnvError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub id: usize,
    /// Value index per informable slot.
    pub values: Vec<usize>,
}

/// Per-domain entity tables. Every combination of informable values is held
/// by at least one entity, so any constraint set drawn from the schema is
/// satisfiable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityDatabase {
    pub domains: Vec<Vec<Entity>>,
}

impl EntityDatabase {
    pub fn generate(schema: &Schema, per_domain: usize, seed: u64) -> Result<Self, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut domains = Vec::with_capacity(schema.domains.len());
        for d in &schema.domains {
            let radices: Vec<usize> = d.informable.iter().map(|s| s.values.len()).collect();
            let combos: usize = radices.iter().product();
            if combos > per_domain {
                return Err(EnvError::Schema(format!(
                    "domain `{}` has {combos} value combinations but only {per_domain} entities",
                    d.name
                )));
            }
            let mut rows: Vec<Vec<usize>> = (0..combos).map(|c| decode_mixed_radix(c, &radices)).collect();
            while rows.len() < per_domain {
                rows.push(radices.iter().map(|&r| rng.random_range(0..r)).collect());
            }
            rows.shuffle(&mut rng);
            domains.push(
                rows.into_iter()
                    .enumerate()
                    .map(|(id, values)| Entity { id, values })
                    .collect(),
            );
        }
        Ok(Self { domains })
    }

    pub fn entity(&self, domain: usize, id: usize) -> &Entity {
        &self.domains[domain][id]
    }

    pub fn len(&self, domain: usize) -> usize {
        self.domains[domain].len()
    }

    pub fn is_empty(&self, domain: usize) -> bool {
        self.domains[domain].is_empty()
    }

    /// Entities of `domain` matching every `(informable slot, value)` pair, in
    /// ascending id order.
    pub fn query(&self, domain: usize, constraints: &[(usize, usize)]) -> Vec<&Entity> {
        self.domains[domain]
            .iter()
            .filter(|e| constraints.iter().all(|&(s, v)| e.values[s] == v))
            .collect()
    }

    pub fn satisfies(&self, domain: usize, id: usize, constraints: &[(usize, usize)]) -> bool {
        let e = self.entity(domain, id);
        constraints.iter().all(|&(s, v)| e.values[s] == v)
    }
}

fn decode_mixed_radix(mut c: usize, radices: &[usize]) -> Vec<usize> {
    let mut out = vec![0; radices.len()];
    for (i, &r) in radices.iter().enumerate().rev() {
        out[i] = c % r;
        c /= r;
    }
    out
}
