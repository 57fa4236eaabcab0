use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EnvError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformableSlot {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub name: String,
    pub informable: Vec<InformableSlot>,
    pub requestable: Vec<String>,
}

impl Domain {
    pub fn n_informable(&self) -> usize {
        self.informable.len()
    }

    /// Informable slots come first, then requestable ones.
    pub fn n_slots(&self) -> usize {
        self.informable.len() + self.requestable.len()
    }

    pub fn is_informable(&self, slot: usize) -> bool {
        slot < self.informable.len()
    }

    pub fn slot_name(&self, slot: usize) -> &str {
        if slot < self.informable.len() {
            &self.informable[slot].name
        } else {
            &self.requestable[slot - self.informable.len()]
        }
    }

    pub fn slot_index(&self, name: &str) -> Option<usize> {
        (0..self.n_slots()).find(|&s| self.slot_name(s) == name)
    }
}

/// The ontology: domains, informable slots with closed value sets, and
/// requestable slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default = "default_entities_per_domain")]
    pub entities_per_domain: usize,
    pub domains: Vec<Domain>,
}

fn default_entities_per_domain() -> usize {
    30
}

impl Default for Schema {
    fn default() -> Self {
        let slot = |name: &str, values: &[&str]| InformableSlot {
            name: name.to_string(),
            values: values.iter().map(|v| v.to_string()).collect(),
        };
        let areas = ["north", "south", "centre"];
        let prices = ["cheap", "moderate", "expensive"];
        Schema {
            entities_per_domain: default_entities_per_domain(),
            domains: vec![
                Domain {
                    name: "restaurant".into(),
                    informable: vec![
                        slot("area", &areas),
                        slot("food", &["italian", "chinese", "indian"]),
                        slot("price", &prices),
                    ],
                    requestable: vec!["phone".into(), "address".into()],
                },
                Domain {
                    name: "hotel".into(),
                    informable: vec![
                        slot("area", &areas),
                        slot("stars", &["two", "three", "four"]),
                        slot("price", &prices),
                    ],
                    requestable: vec!["phone".into(), "address".into()],
                },
            ],
        }
    }
}

impl Schema {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.domains.is_empty() {
            return Err(EnvError::Schema("no domains".into()));
        }
        if self.entities_per_domain == 0 {
            return Err(EnvError::Schema("entities_per_domain must be positive".into()));
        }
        let mut domain_names = BTreeSet::new();
        for d in &self.domains {
            if !domain_names.insert(d.name.as_str()) {
                return Err(EnvError::Schema(format!("duplicate domain `{}`", d.name)));
            }
            if d.informable.is_empty() || d.requestable.is_empty() {
                return Err(EnvError::Schema(format!(
                    "domain `{}` needs informable and requestable slots",
                    d.name
                )));
            }
            let mut names = BTreeSet::new();
            for s in 0..d.n_slots() {
                if !names.insert(d.slot_name(s)) {
                    return Err(EnvError::Schema(format!(
                        "duplicate slot `{}` in domain `{}`",
                        d.slot_name(s),
                        d.name
                    )));
                }
            }
            for inf in &d.informable {
                if inf.values.is_empty() {
                    return Err(EnvError::Schema(format!("slot `{}` has no values", inf.name)));
                }
                let uniq: BTreeSet<_> = inf.values.iter().collect();
                if uniq.len() != inf.values.len() {
                    return Err(EnvError::Schema(format!("slot `{}` repeats a value", inf.name)));
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, EnvError> {
        let schema: Schema = toml::from_str(text).map_err(|e| EnvError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvError::Schema(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_is_valid() {
        let s = Schema::default();
        s.validate().unwrap();
        assert_eq!(s.domains.len(), 2);
        assert!(s.domains.iter().all(|d| d.n_informable() == 3 && d.requestable.len() == 2));
    }

    #[test]
    fn toml_round_trip() {
        let s = Schema::default();
        let back = Schema::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn duplicate_slot_rejected() {
        let mut s = Schema::default();
        s.domains[0].requestable[0] = "area".into();
        assert!(s.validate().is_err());
    }
}
