use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::acts::Act;
use super::dialogue::DialogueLog;
use super::goal::DialogueGoal;
use super::world::World;
use crate::mdp::ModuleStep;

pub const STEP_PENALTY: f64 = -0.1;
pub const TURN_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DialogueMetrics {
    pub success: bool,
    pub turns: usize,
    pub inform_recall: f64,
    pub inform_precision: f64,
    pub inform_f1: f64,
    pub match_rate: f64,
}

/// `-0.1` on every step except a successful terminal one, which earns `2*M`
/// in place of the penalty.
pub fn step_reward(_step: ModuleStep, terminal: bool, success: bool, module_count: usize) -> f64 {
    if terminal && success {
        2.0 * module_count as f64
    } else {
        STEP_PENALTY
    }
}

/// Scores a finished dialogue against its goal using what the user heard.
///
/// Recall counts goal requests that received an answer; precision divides
/// that by the distinct slots answered; match rate is the share of goal
/// domains whose last heard offer satisfies every constraint.
pub fn evaluate_dialogue(world: &World, log: &DialogueLog, goal: &DialogueGoal) -> DialogueMetrics {
    let mut answered: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut offers: Vec<Option<usize>> = vec![None; world.n_domains()];
    for turn in &log.turns {
        for act in turn.system_acts.iter() {
            match *act {
                Act::Answer { domain, slot, .. } => {
                    answered.insert((domain, slot));
                }
                Act::Offer { domain, entity } => offers[domain] = Some(entity),
                _ => {}
            }
        }
    }
    let requested: BTreeSet<(usize, usize)> = goal
        .domains
        .iter()
        .flat_map(|g| g.requests.iter().map(move |&s| (g.domain, s)))
        .collect();
    let hits = requested.intersection(&answered).count() as f64;
    let inform_recall = if requested.is_empty() { 1.0 } else { hits / requested.len() as f64 };
    let inform_precision = if answered.is_empty() { 0.0 } else { hits / answered.len() as f64 };
    let inform_f1 = if inform_recall + inform_precision > 0.0 {
        2.0 * inform_recall * inform_precision / (inform_recall + inform_precision)
    } else {
        0.0
    };
    let matched = goal
        .domains
        .iter()
        .filter(|g| offers[g.domain].is_some_and(|e| world.db.satisfies(g.domain, e, &g.constraints)))
        .count() as f64;
    let match_rate = matched / goal.domains.len() as f64;
    let turns = log.turns.len();
    DialogueMetrics {
        success: inform_recall == 1.0 && match_rate == 1.0 && turns <= TURN_CAP,
        turns,
        inform_recall,
        inform_precision,
        inform_f1,
        match_rate,
    }
}

/// Aggregate over many dialogues.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub dialogues: usize,
    pub success_rate: f64,
    pub mean_turns: f64,
    pub inform_recall: f64,
    pub inform_precision: f64,
    pub inform_f1: f64,
    pub match_rate: f64,
}

impl MetricsSummary {
    pub fn from_metrics(all: &[DialogueMetrics]) -> Self {
        let n = all.len().max(1) as f64;
        let mean = |f: &dyn Fn(&DialogueMetrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        Self {
            dialogues: all.len(),
            success_rate: mean(&|m| if m.success { 1.0 } else { 0.0 }),
            mean_turns: mean(&|m| m.turns as f64),
            inform_recall: mean(&|m| m.inform_recall),
            inform_precision: mean(&|m| m.inform_precision),
            inform_f1: mean(&|m| m.inform_f1),
            match_rate: mean(&|m| m.match_rate),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::acts::ActList;
    use crate::env::dialogue::TurnRecord;
    use crate::env::goal::DomainGoal;
    use crate::env::schema::Schema;

    fn turn(acts: Vec<Act>) -> TurnRecord {
        TurnRecord {
            system_acts: ActList::new(acts),
            ..TurnRecord::default()
        }
    }

    fn setup() -> (World, DialogueGoal, usize, usize) {
        let w = World::new(Schema::default(), 0).unwrap();
        let goal = DialogueGoal {
            domains: vec![DomainGoal {
                domain: 0,
                constraints: vec![(0, 0)],
                requests: vec![3, 4],
            }],
        };
        let good = w.db.query(0, &[(0, 0)])[0].id;
        let bad = w.db.domains[0].iter().find(|e| e.values[0] != 0).unwrap().id;
        (w, goal, good, bad)
    }

    #[test]
    fn rewards() {
        let s = ModuleStep::new(3, 2, 4).unwrap();
        assert_eq!(step_reward(s, false, true, 4), -0.1);
        assert_eq!(step_reward(s, true, true, 4), 8.0);
        assert_eq!(step_reward(s, true, false, 4), -0.1);
        let total: f64 = (0..80).map(|i| step_reward(s, i == 79, false, 4)).sum();
        assert!((total - (-8.0)).abs() < 1e-9);
    }

    #[test]
    fn full_success() {
        let (w, goal, good, _) = setup();
        let mut turns: Vec<TurnRecord> = (0..5).map(|_| turn(vec![])).collect();
        turns.push(turn(vec![
            Act::Offer { domain: 0, entity: good },
            Act::Answer { domain: 0, slot: 3, entity: good },
            Act::Answer { domain: 0, slot: 4, entity: good },
        ]));
        let log = DialogueLog { turns, ..Default::default() };
        let m = evaluate_dialogue(&w, &log, &goal);
        assert!(m.success);
        assert_eq!(m.turns, 6);
        assert_eq!(m.inform_recall, 1.0);
        assert_eq!(m.inform_f1, 1.0);
    }

    #[test]
    fn no_answers_zero_scores() {
        let (w, goal, good, _) = setup();
        let log = DialogueLog {
            turns: vec![turn(vec![Act::Offer { domain: 0, entity: good }])],
            ..Default::default()
        };
        let m = evaluate_dialogue(&w, &log, &goal);
        assert_eq!((m.inform_recall, m.inform_precision, m.inform_f1), (0.0, 0.0, 0.0));
        assert!(!m.success);
        assert_eq!(m.match_rate, 1.0);
    }

    #[test]
    fn half_recall_and_final_offer_counts() {
        let (w, goal, good, bad) = setup();
        let log = DialogueLog {
            turns: vec![
                turn(vec![Act::Offer { domain: 0, entity: good }]),
                turn(vec![Act::Answer { domain: 0, slot: 3, entity: good }]),
                turn(vec![Act::Offer { domain: 0, entity: bad }]),
            ],
            ..Default::default()
        };
        let m = evaluate_dialogue(&w, &log, &goal);
        assert_eq!(m.inform_recall, 0.5);
        assert_eq!(m.inform_precision, 1.0);
        assert_eq!(m.match_rate, 0.0);
        assert!(!m.success);
    }
}
