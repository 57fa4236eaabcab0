//! Agenda-based user simulator.
//!
//! The agenda is a stack of pending user acts seeded with the goal's informs
//! followed by its requests. Each turn the user reacts to what it heard,
//! possibly re-pushing acts, then pops one or two acts from the top.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::acts::{render_utterance, Act, ActList};
use super::goal::DialogueGoal;
use super::world::World;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UserProfile {
    /// Probability that a goal spans two domains.
    pub p_two_domains: f64,
    /// Probability that a turn carries two acts rather than one.
    pub p_two_acts: f64,
    /// Repairs tolerated before the user abandons the dialogue.
    pub patience: usize,
}

impl Default for UserProfile {
    fn default() -> Self {
        Self {
            p_two_domains: 0.5,
            p_two_acts: 0.7,
            patience: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agenda {
    pub stack: VecDeque<Act>,
    /// `(domain, slot)` constraints uttered at least once.
    pub informed: BTreeSet<(usize, usize)>,
    pub answered: BTreeSet<(usize, usize)>,
    /// Last offer heard per domain.
    pub heard_offers: Vec<Option<usize>>,
    /// Acts re-pushed because the system failed to take them in.
    pub repairs: usize,
    pub abandoned: bool,
}

impl Agenda {
    pub fn new(world: &World, goal: &DialogueGoal) -> Self {
        let mut stack = VecDeque::new();
        for g in &goal.domains {
            for &(slot, value) in &g.constraints {
                stack.push_back(Act::Inform {
                    domain: g.domain,
                    slot,
                    value,
                });
            }
            for &slot in &g.requests {
                stack.push_back(Act::Request {
                    domain: g.domain,
                    slot,
                });
            }
        }
        Self {
            stack,
            informed: BTreeSet::new(),
            answered: BTreeSet::new(),
            heard_offers: vec![None; world.n_domains()],
            repairs: 0,
            abandoned: false,
        }
    }

    fn push_front(&mut self, act: Act, repair: bool) {
        if !self.stack.contains(&act) {
            self.stack.push_front(act);
            if repair {
                self.repairs += 1;
            }
        }
    }

    fn offer_acceptable(&self, world: &World, goal: &DialogueGoal, domain: usize) -> bool {
        let g = goal.domain(domain).expect("goal domain");
        self.heard_offers[domain].is_some_and(|e| world.db.satisfies(domain, e, &g.constraints))
    }

    /// Every request answered and every goal domain holds an acceptable offer.
    pub fn satisfied(&self, world: &World, goal: &DialogueGoal) -> bool {
        goal.domains.iter().all(|g| {
            g.requests.iter().all(|&s| self.answered.contains(&(g.domain, s)))
                && self.offer_acceptable(world, goal, g.domain)
        })
    }
}

pub struct UserTurn {
    pub acts: ActList,
    pub utterance: Vec<String>,
    pub done: bool,
}

/// One user turn in reaction to the acts heard from the system.
pub fn user_step<R: Rng>(
    world: &World,
    goal: &DialogueGoal,
    agenda: &mut Agenda,
    system_acts: &ActList,
    profile: &UserProfile,
    rng: &mut R,
) -> UserTurn {
    for act in system_acts.iter() {
        match *act {
            Act::Answer { domain, slot, .. } => {
                if goal.domain(domain).is_some_and(|g| g.requests.contains(&slot)) {
                    agenda.answered.insert((domain, slot));
                }
            }
            Act::Offer { domain, entity } => agenda.heard_offers[domain] = Some(entity),
            _ => {}
        }
    }
    for g in &goal.domains {
        if let Some(e) = agenda.heard_offers[g.domain] {
            let entity = world.db.entity(g.domain, e);
            for &(slot, value) in g.constraints.iter().rev() {
                if entity.values[slot] != value {
                    let repair = agenda.informed.contains(&(g.domain, slot));
                    agenda.push_front(Act::Inform { domain: g.domain, slot, value }, repair);
                }
            }
        }
    }
    for act in system_acts.iter() {
        if let Act::Request { domain, slot } = *act {
            if let Some(value) = goal.domain(domain).and_then(|g| g.value_of(slot)) {
                let repair = agenda.informed.contains(&(domain, slot));
                agenda.push_front(Act::Inform { domain, slot, value }, repair);
            }
        }
    }
    if agenda.stack.is_empty() {
        if agenda.satisfied(world, goal) {
            return bye(world, false, agenda);
        }
        for g in goal.domains.iter().rev() {
            for &slot in g.requests.iter().rev() {
                if !agenda.answered.contains(&(g.domain, slot)) {
                    agenda.push_front(Act::Request { domain: g.domain, slot }, true);
                }
            }
            if !agenda.offer_acceptable(world, goal, g.domain) {
                let (slot, value) = g.constraints[0];
                agenda.push_front(Act::Inform { domain: g.domain, slot, value }, true);
            }
        }
    }
    if agenda.repairs > profile.patience {
        return bye(world, true, agenda);
    }
    let n = if rng.random_bool(profile.p_two_acts) { 2 } else { 1 };
    let mut acts = Vec::with_capacity(n);
    while acts.len() < n {
        match agenda.stack.pop_front() {
            Some(act) => acts.push(act),
            None => break,
        }
    }
    for act in &acts {
        if let Act::Inform { domain, slot, .. } = *act {
            agenda.informed.insert((domain, slot));
        }
    }
    let acts = ActList::canonical(acts);
    let utterance = render_utterance(world, &acts);
    UserTurn {
        acts,
        utterance,
        done: false,
    }
}

fn bye(world: &World, abandoned: bool, agenda: &mut Agenda) -> UserTurn {
    agenda.abandoned = abandoned;
    let acts = ActList::new(vec![Act::Bye]);
    UserTurn {
        utterance: render_utterance(world, &acts),
        acts,
        done: true,
    }
}
