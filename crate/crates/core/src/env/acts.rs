//! Dialogue acts, their structured serialization (fused domain-slot tokens)
//! and the fixed template grammar used for utterances.

use serde::{Deserialize, Serialize};

use super::world::{self, Fused, World};
use super::EnvError;

pub const MAX_ACTS: usize = 6;

/// Slots are indexed per domain with informable slots first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Act {
    Inform { domain: usize, slot: usize, value: usize },
    Request { domain: usize, slot: usize },
    Offer { domain: usize, entity: usize },
    Answer { domain: usize, slot: usize, entity: usize },
    Bye,
}

impl Act {
    fn sort_key(&self) -> (usize, usize, usize, usize) {
        match *self {
            Act::Offer { domain, entity } => (domain, 0, 0, entity),
            Act::Inform { domain, slot, value } => (domain, 1, slot, value),
            Act::Answer { domain, slot, entity } => (domain, 2, slot, entity),
            Act::Request { domain, slot } => (domain, 3, slot, 0),
            Act::Bye => (usize::MAX, 4, 0, 0),
        }
    }
}

/// Ordered act list, at most [`MAX_ACTS`] long.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActList(pub Vec<Act>);

impl ActList {
    pub fn new(acts: Vec<Act>) -> Self {
        Self(acts)
    }

    /// Sorted into the canonical order (domain, then offer < inform < answer
    /// < request) with exact duplicates removed.
    pub fn canonical(mut acts: Vec<Act>) -> Self {
        acts.sort_by_key(Act::sort_key);
        acts.dedup();
        Self(acts)
    }

    pub fn acts(&self) -> &[Act] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Act> {
        self.0.iter()
    }

    /// Structured form: `[domain-slot=, value]` pairs, `[domain-slot=, ?]` for
    /// requests, `[domain-name=, entity]` for offers, `[bye]`.
    pub fn to_tokens(&self, world: &World) -> Vec<String> {
        let mut out = Vec::with_capacity(self.0.len() * 2);
        for act in &self.0 {
            match *act {
                Act::Inform { domain, slot, value } => {
                    out.push(world.fused(domain, slot));
                    out.push(world.value_name(domain, slot, value).to_string());
                }
                Act::Request { domain, slot } => {
                    out.push(world.fused(domain, slot));
                    out.push(world::REQ_MARK.to_string());
                }
                Act::Offer { domain, entity } => {
                    out.push(world.name_fused(domain));
                    out.push(world.entity_name(domain, entity));
                }
                Act::Answer { domain, slot, entity } => {
                    out.push(world.fused(domain, slot));
                    out.push(world.req_value(domain, slot, entity));
                }
                Act::Bye => out.push(world::KW_BYE.to_string()),
            }
        }
        out
    }

    /// Strict inverse of [`ActList::to_tokens`].
    pub fn from_tokens<S: AsRef<str>>(world: &World, tokens: &[S]) -> Result<Self, EnvError> {
        let mut acts = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let tok = tokens[i].as_ref();
            if tok == world::KW_BYE {
                acts.push(Act::Bye);
                i += 1;
                continue;
            }
            let arg = tokens.get(i + 1).map(|t| t.as_ref());
            acts.push(parse_pair(world, tok, arg)?);
            i += 2;
        }
        if acts.len() > MAX_ACTS {
            return Err(EnvError::Parse(format!("{} acts exceed the limit of {MAX_ACTS}", acts.len())));
        }
        Ok(Self(acts))
    }
}

/// One `[fused, argument]` pair of a structured serialization.
pub(crate) fn parse_pair(world: &World, tok: &str, arg: Option<&str>) -> Result<Act, EnvError> {
    let bad = || EnvError::Parse(format!("unexpected token `{tok}`"));
    let arg = arg.ok_or_else(|| EnvError::Parse(format!("`{tok}` lacks an argument")))?;
    match world.lookup_fused(tok).ok_or_else(bad)? {
        Fused::Name(domain) => match world.lookup_entity(arg) {
            Some((d, entity)) if d == domain => Ok(Act::Offer { domain, entity }),
            _ => Err(EnvError::Parse(format!("`{arg}` is not an entity of `{tok}`"))),
        },
        Fused::Slot(domain, slot) => {
            if arg == world::REQ_MARK {
                return Ok(Act::Request { domain, slot });
            }
            if world.is_informable(domain, slot) {
                world
                    .lookup_value(domain, slot, arg)
                    .map(|value| Act::Inform { domain, slot, value })
                    .ok_or_else(|| EnvError::Parse(format!("`{arg}` is not a value of `{tok}`")))
            } else {
                match world.lookup_req_value(arg) {
                    Some((d, s, entity)) if d == domain && s == slot => {
                        Ok(Act::Answer { domain, slot, entity })
                    }
                    _ => Err(EnvError::Parse(format!("`{arg}` is not a value of `{tok}`"))),
                }
            }
        }
    }
}

/// Renders acts through the surface templates. An empty list renders as the
/// reserved empty-response token.
pub fn render_utterance(world: &World, acts: &ActList) -> Vec<String> {
    let mut out = Vec::new();
    for act in acts.iter() {
        render_act(world, act, &mut out);
    }
    if out.is_empty() {
        out.push(world::EMPTY.to_string());
    }
    out
}

pub fn render_act(world: &World, act: &Act, out: &mut Vec<String>) {
    match *act {
        Act::Inform { domain, slot, value } => {
            out.push(world::KW_INFORM.into());
            out.push(world.domain_name(domain).into());
            out.push(world.slot_name(domain, slot).into());
            out.push(world.value_name(domain, slot, value).into());
        }
        Act::Request { domain, slot } => {
            out.push(world::KW_REQUEST.into());
            out.push(world.domain_name(domain).into());
            out.push(world.slot_name(domain, slot).into());
        }
        Act::Offer { domain, entity } => {
            out.push(world::KW_OFFER.into());
            out.push(world.domain_name(domain).into());
            out.push(world.entity_name(domain, entity));
        }
        Act::Answer { domain, slot, entity } => {
            out.push(world::KW_ANSWER.into());
            out.push(world.domain_name(domain).into());
            out.push(world.slot_name(domain, slot).into());
            out.push(world::KW_IS.into());
            out.push(world.req_value(domain, slot, entity));
        }
        Act::Bye => out.push(world::KW_BYE.into()),
    }
}

/// Inverts the template grammar. Spans that do not match a template are
/// skipped one token at a time.
pub fn parse_utterance<S: AsRef<str>>(world: &World, tokens: &[S]) -> ActList {
    let toks: Vec<&str> = tokens.iter().map(|t| t.as_ref()).collect();
    let mut acts = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        match match_act(world, &toks[i..]) {
            Some((act, used)) => {
                acts.push(act);
                i += used;
            }
            None => i += 1,
        }
    }
    ActList(acts)
}

fn match_act(world: &World, t: &[&str]) -> Option<(Act, usize)> {
    let domain = |k: usize| t.get(k).and_then(|w| world.lookup_domain(w));
    match t[0] {
        world::KW_BYE => Some((Act::Bye, 1)),
        world::KW_INFORM => {
            let d = domain(1)?;
            let s = world.lookup_slot(d, t.get(2)?)?;
            let v = world.lookup_value(d, s, t.get(3)?)?;
            Some((Act::Inform { domain: d, slot: s, value: v }, 4))
        }
        world::KW_REQUEST => {
            let d = domain(1)?;
            let s = world.lookup_slot(d, t.get(2)?)?;
            Some((Act::Request { domain: d, slot: s }, 3))
        }
        world::KW_OFFER => {
            let d = domain(1)?;
            let (ed, e) = world.lookup_entity(t.get(2)?)?;
            (ed == d).then_some((Act::Offer { domain: d, entity: e }, 3))
        }
        world::KW_ANSWER => {
            let d = domain(1)?;
            let s = world.lookup_slot(d, t.get(2)?)?;
            if *t.get(3)? != world::KW_IS {
                return None;
            }
            let (rd, rs, e) = world.lookup_req_value(t.get(4)?)?;
            (rd == d && rs == s).then_some((Act::Answer { domain: d, slot: s, entity: e }, 5))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::schema::Schema;
    use proptest::prelude::*;

    fn world() -> World {
        World::new(Schema::default(), 1).unwrap()
    }

    fn act_strategy() -> impl Strategy<Value = Act> {
        prop_oneof![
            (0usize..2, 0usize..3, 0usize..3).prop_map(|(domain, slot, value)| Act::Inform { domain, slot, value }),
            (0usize..2, 0usize..5).prop_map(|(domain, slot)| Act::Request { domain, slot }),
            (0usize..2, 0usize..30).prop_map(|(domain, entity)| Act::Offer { domain, entity }),
            (0usize..2, 3usize..5, 0usize..30).prop_map(|(domain, slot, entity)| Act::Answer { domain, slot, entity }),
            Just(Act::Bye),
        ]
    }

    proptest! {
        #[test]
        fn grammar_round_trip(acts in prop::collection::vec(act_strategy(), 0..=MAX_ACTS)) {
            let w = world();
            let list = ActList(acts);
            prop_assert_eq!(parse_utterance(&w, &render_utterance(&w, &list)), list.clone());
            prop_assert_eq!(ActList::from_tokens(&w, &list.to_tokens(&w)).unwrap(), list);
        }
    }

    #[test]
    fn example_serialization() {
        let w = world();
        let list = ActList(vec![Act::Inform { domain: 0, slot: 0, value: 2 }]);
        assert_eq!(list.to_tokens(&w), vec!["restaurant-area=", "centre"]);
        assert_eq!(render_utterance(&w, &list), vec!["want", "restaurant", "area", "centre"]);
        assert_eq!(render_utterance(&w, &ActList::default()), vec![world::EMPTY]);
    }

    #[test]
    fn strict_parse_rejects_garbage() {
        let w = world();
        assert!(ActList::from_tokens(&w, &["restaurant-area=", "four"]).is_err());
        assert!(ActList::from_tokens(&w, &["restaurant-phone=", "hotel_3_phone"]).is_err());
        assert!(ActList::from_tokens(&w, &["restaurant-name="]).is_err());
        assert!(ActList::from_tokens(&w, &["want"]).is_err());
        let seven: Vec<&str> = std::iter::repeat(["restaurant-area=", "north"]).take(7).flatten().collect();
        assert!(ActList::from_tokens(&w, &seven).is_err());
    }

    #[test]
    fn lenient_parse_skips_broken_spans() {
        let w = world();
        let toks = ["want", "restaurant", "try", "hotel", "hotel_4", "what"];
        assert_eq!(parse_utterance(&w, &toks), ActList(vec![Act::Offer { domain: 1, entity: 4 }]));
    }

    #[test]
    fn canonical_order() {
        let a = ActList::canonical(vec![
            Act::Request { domain: 0, slot: 3 },
            Act::Inform { domain: 1, slot: 0, value: 0 },
            Act::Offer { domain: 0, entity: 5 },
            Act::Inform { domain: 0, slot: 2, value: 1 },
        ]);
        assert_eq!(
            a.0,
            vec![
                Act::Offer { domain: 0, entity: 5 },
                Act::Inform { domain: 0, slot: 2, value: 1 },
                Act::Request { domain: 0, slot: 3 },
                Act::Inform { domain: 1, slot: 0, value: 0 },
            ]
        );
    }
}
