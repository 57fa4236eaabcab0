//! Surface forms of the closed dialogue world and their inverse lookups.

use std::collections::HashMap;

use super::db::EntityDatabase;
use super::schema::Schema;
use super::EnvError;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";
pub const COPY: &str = "<copy>";
pub const EMPTY: &str = "<empty>";

pub const KW_INFORM: &str = "want";
pub const KW_REQUEST: &str = "what";
pub const KW_OFFER: &str = "try";
pub const KW_ANSWER: &str = "its";
pub const KW_IS: &str = "is";
pub const KW_BYE: &str = "bye";
/// Separates the new acts from the carried-over belief inside a tracker input.
pub const KW_STATE: &str = "state";
/// Value marker of a request in structured serializations.
pub const REQ_MARK: &str = "?";

pub const TEMPLATE_WORDS: [&str; 8] = [
    KW_INFORM, KW_REQUEST, KW_OFFER, KW_ANSWER, KW_IS, KW_BYE, KW_STATE, REQ_MARK,
];

pub fn prefix_token(module: usize) -> String {
    format!("<m{module}>")
}

pub fn fused_token(domain: &str, slot: &str) -> String {
    format!("{domain}-{slot}=")
}

pub fn name_token(domain: &str) -> String {
    format!("{domain}-name=")
}

pub fn entity_token(domain: &str, id: usize) -> String {
    format!("{domain}_{id}")
}

pub fn req_value_token(domain: &str, id: usize, slot: &str) -> String {
    format!("{domain}_{id}_{slot}")
}

/// Structured fused token meaning: a domain-slot pair or a domain's entity
/// name field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fused {
    Slot(usize, usize),
    Name(usize),
}

/// Every surface token the world can produce, grouped by category.
#[derive(Debug, Clone, Default)]
pub struct TokenInventory {
    pub template_words: Vec<String>,
    pub domain_words: Vec<String>,
    pub slot_words: Vec<String>,
    pub fused: Vec<String>,
    pub values: Vec<String>,
    pub entities: Vec<String>,
    pub req_values: Vec<String>,
}

impl TokenInventory {
    pub fn from_schema(schema: &Schema) -> Self {
        let mut inv = TokenInventory {
            template_words: TEMPLATE_WORDS.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        };
        let push_unique = |v: &mut Vec<String>, t: &str| {
            if !v.iter().any(|x| x == t) {
                v.push(t.to_string());
            }
        };
        for d in &schema.domains {
            push_unique(&mut inv.domain_words, &d.name);
            for s in 0..d.n_slots() {
                push_unique(&mut inv.slot_words, d.slot_name(s));
                inv.fused.push(fused_token(&d.name, d.slot_name(s)));
            }
            inv.fused.push(name_token(&d.name));
            for inf in &d.informable {
                for v in &inf.values {
                    push_unique(&mut inv.values, v);
                }
            }
        }
        for d in &schema.domains {
            for id in 0..schema.entities_per_domain {
                inv.entities.push(entity_token(&d.name, id));
            }
        }
        for d in &schema.domains {
            for id in 0..schema.entities_per_domain {
                for r in &d.requestable {
                    inv.req_values.push(req_value_token(&d.name, id, r));
                }
            }
        }
        inv
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.template_words
            .iter()
            .chain(&self.domain_words)
            .chain(&self.slot_words)
            .chain(&self.fused)
            .chain(&self.values)
            .chain(&self.entities)
            .chain(&self.req_values)
    }
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    domains: HashMap<String, usize>,
    fused: HashMap<String, Fused>,
    entities: HashMap<String, (usize, usize)>,
    req_values: HashMap<String, (usize, usize, usize)>,
}

/// Schema, database and lexicon bundled; the read-only part of an environment.
#[derive(Debug, Clone)]
pub struct World {
    pub schema: Schema,
    pub db: EntityDatabase,
    lex: Lexicon,
}

impl World {
    pub fn new(schema: Schema, db_seed: u64) -> Result<Self, EnvError> {
        schema.validate()?;
        let db = EntityDatabase::generate(&schema, schema.entities_per_domain, db_seed)?;
        let mut lex = Lexicon {
            domains: HashMap::new(),
            fused: HashMap::new(),
            entities: HashMap::new(),
            req_values: HashMap::new(),
        };
        for (di, d) in schema.domains.iter().enumerate() {
            lex.domains.insert(d.name.clone(), di);
            for s in 0..d.n_slots() {
                lex.fused.insert(fused_token(&d.name, d.slot_name(s)), Fused::Slot(di, s));
            }
            lex.fused.insert(name_token(&d.name), Fused::Name(di));
            for id in 0..schema.entities_per_domain {
                lex.entities.insert(entity_token(&d.name, id), (di, id));
                for (ri, r) in d.requestable.iter().enumerate() {
                    lex.req_values
                        .insert(req_value_token(&d.name, id, r), (di, d.n_informable() + ri, id));
                }
            }
        }
        Ok(Self { schema, db, lex })
    }

    pub fn n_domains(&self) -> usize {
        self.schema.domains.len()
    }

    pub fn domain_name(&self, d: usize) -> &str {
        &self.schema.domains[d].name
    }

    pub fn slot_name(&self, d: usize, s: usize) -> &str {
        self.schema.domains[d].slot_name(s)
    }

    pub fn value_name(&self, d: usize, s: usize, v: usize) -> &str {
        &self.schema.domains[d].informable[s].values[v]
    }

    pub fn n_values(&self, d: usize, s: usize) -> usize {
        self.schema.domains[d].informable[s].values.len()
    }

    pub fn is_informable(&self, d: usize, s: usize) -> bool {
        self.schema.domains[d].is_informable(s)
    }

    pub fn fused(&self, d: usize, s: usize) -> String {
        fused_token(self.domain_name(d), self.slot_name(d, s))
    }

    pub fn name_fused(&self, d: usize) -> String {
        name_token(self.domain_name(d))
    }

    pub fn entity_name(&self, d: usize, id: usize) -> String {
        entity_token(self.domain_name(d), id)
    }

    pub fn req_value(&self, d: usize, s: usize, id: usize) -> String {
        req_value_token(self.domain_name(d), id, self.slot_name(d, s))
    }

    pub fn lookup_domain(&self, word: &str) -> Option<usize> {
        self.lex.domains.get(word).copied()
    }

    pub fn lookup_slot(&self, d: usize, word: &str) -> Option<usize> {
        self.schema.domains[d].slot_index(word)
    }

    pub fn lookup_value(&self, d: usize, s: usize, word: &str) -> Option<usize> {
        let dom = &self.schema.domains[d];
        if !dom.is_informable(s) {
            return None;
        }
        dom.informable[s].values.iter().position(|v| v == word)
    }

    pub fn lookup_fused(&self, tok: &str) -> Option<Fused> {
        self.lex.fused.get(tok).copied()
    }

    pub fn lookup_entity(&self, tok: &str) -> Option<(usize, usize)> {
        self.lex.entities.get(tok).copied()
    }

    pub fn lookup_req_value(&self, tok: &str) -> Option<(usize, usize, usize)> {
        self.lex.req_values.get(tok).copied()
    }
}
