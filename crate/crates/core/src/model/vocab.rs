use std::collections::HashMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use super::ModelError;
use crate::env::schema::Schema;
use crate::env::world::{self, prefix_token, TokenInventory};

pub const SPECIALS: [&str; 5] = [world::BOS, world::EOS, world::SEP, world::COPY, world::EMPTY];

/// Closed token set with stable ids: specials, module prefixes, then every
/// surface form the world can produce.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    module_count: usize,
}

/// Ids of the tokens the model treats structurally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialIds {
    pub bos: u32,
    pub eos: u32,
    pub sep: u32,
    pub copy: u32,
    pub empty: u32,
    pub state: u32,
    pub first_prefix: u32,
    pub module_count: u32,
}

impl SpecialIds {
    pub fn prefix(&self, module: usize) -> u32 {
        self.first_prefix + module as u32 - 1
    }

    pub fn is_prefix(&self, id: u32) -> bool {
        id >= self.first_prefix && id < self.first_prefix + self.module_count
    }
}

pub fn build_vocabulary(schema: &Schema, module_count: usize) -> Result<Vocabulary, ModelError> {
    schema.validate().map_err(|e| ModelError::Vocab(e.to_string()))?;
    if module_count == 0 {
        return Err(ModelError::Vocab("module count must be positive".into()));
    }
    let inv = TokenInventory::from_schema(schema);
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend((1..=module_count).map(prefix_token));
    tokens.extend(inv.all().cloned());
    Vocabulary::from_tokens(tokens, module_count)
}

impl Vocabulary {
    /// Deduplicates in first-seen order.
    pub fn from_tokens(tokens: Vec<String>, module_count: usize) -> Result<Self, ModelError> {
        let mut index = HashMap::new();
        let mut kept = Vec::with_capacity(tokens.len());
        for t in tokens {
            if !index.contains_key(&t) {
                index.insert(t.clone(), kept.len() as u32);
                kept.push(t);
            }
        }
        let v = Self {
            tokens: kept,
            index,
            module_count,
        };
        for s in SPECIALS.iter().chain(&[world::KW_STATE]) {
            v.id(s)
                .ok_or_else(|| ModelError::Vocab(format!("vocabulary lacks `{s}`")))?;
        }
        for m in 1..=module_count {
            let want = v.id(&prefix_token(1)).map(|p| p + m as u32 - 1);
            if v.id(&prefix_token(m)) != want || want.is_none() {
                return Err(ModelError::Vocab("module prefixes must be contiguous".into()));
            }
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn module_count(&self) -> usize {
        self.module_count
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<u32>, ModelError> {
        tokens
            .iter()
            .map(|t| {
                self.id(t.as_ref())
                    .ok_or_else(|| ModelError::UnknownToken(t.as_ref().to_string()))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn specials(&self) -> SpecialIds {
        let id = |t: &str| self.id(t).expect("checked at construction");
        SpecialIds {
            bos: id(world::BOS),
            eos: id(world::EOS),
            sep: id(world::SEP),
            copy: id(world::COPY),
            empty: id(world::EMPTY),
            state: id(world::KW_STATE),
            first_prefix: id(&prefix_token(1)),
            module_count: self.module_count as u32,
        }
    }

    /// SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, ModelError> {
        let tokens: Vec<String> = r.lines().collect::<Result<_, _>>()?;
        let module_count = tokens.iter().filter(|t| t.starts_with("<m") && t.ends_with('>')).count();
        Self::from_tokens(tokens, module_count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fused_informable_tokens_present() {
        let s = Schema::default();
        let v = build_vocabulary(&s, 4).unwrap();
        let mut n = 0;
        for d in &s.domains {
            for slot in &d.informable {
                assert!(v.id(&world::fused_token(&d.name, &slot.name)).is_some());
                n += 1;
            }
        }
        assert_eq!(n, 6);
        assert!((200..=260).contains(&v.len()), "{}", v.len());
        let sp = v.specials();
        assert_eq!(sp.prefix(4), sp.prefix(1) + 3);
    }

    #[test]
    fn deterministic_and_file_round_trip() {
        let s = Schema::default();
        let a = build_vocabulary(&s, 4).unwrap();
        let b = build_vocabulary(&s, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), build_vocabulary(&s, 2).unwrap().hash());
        let mut buf = Vec::new();
        a.write(&mut buf).unwrap();
        assert_eq!(Vocabulary::read(&buf[..]).unwrap(), a);
    }

    #[test]
    fn duplicate_slot_rejected() {
        let mut s = Schema::default();
        let dup = s.domains[0].informable[0].clone();
        s.domains[0].informable.push(dup);
        assert!(matches!(build_vocabulary(&s, 4), Err(ModelError::Vocab(_))));
    }

    #[test]
    fn unknown_token_is_named() {
        let v = build_vocabulary(&Schema::default(), 4).unwrap();
        match v.encode(&["want", "spaceship"]) {
            Err(ModelError::UnknownToken(t)) => assert_eq!(t, "spaceship"),
            other => panic!("{other:?}"),
        }
    }
}
