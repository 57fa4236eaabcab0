use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{generate_goal, run_dialogue, Env, NoPostProcessing};
use crate::seed::derive_seed;

/// One executed module at one turn of one dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IOHistoryEntry {
    /// Position within the module's history.
    pub id: usize,
    pub dialogue: usize,
    pub turn: usize,
    /// 1-based module index.
    pub module: usize,
    pub context: Vec<String>,
    pub input: Vec<String>,
    pub output: Vec<String>,
}

/// Per-module histories `H_1..H_M`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Histories {
    pub modules: Vec<Vec<IOHistoryEntry>>,
    pub dialogues: usize,
}

impl Histories {
    pub fn module_count(&self) -> usize {
        self.modules.len()
    }
}

pub const HISTORY_STREAM: u64 = 0x4849_5354;

/// Runs seeded dialogues through the unmodified pipeline until at least
/// `n_turns` turns have been recorded.
pub fn collect_io_history(env: &Env, n_turns: usize, seed: u64) -> Histories {
    let m_count = env.module_count();
    let mut h = Histories {
        modules: vec![Vec::new(); m_count],
        dialogues: 0,
    };
    let mut turns = 0;
    while turns < n_turns {
        let dialogue = h.dialogues;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, HISTORY_STREAM, dialogue as u64));
        let goal = generate_goal(&env.world, env.user.p_two_domains, &mut rng);
        let log = run_dialogue(env, &goal, &mut rng, &mut NoPostProcessing);
        for t in &log.turns {
            for rec in &t.modules {
                let hm = &mut h.modules[rec.module - 1];
                hm.push(IOHistoryEntry {
                    id: hm.len(),
                    dialogue,
                    turn: t.turn,
                    module: rec.module,
                    context: t.context.clone(),
                    input: rec.input.clone(),
                    output: rec.raw_output.clone(),
                });
            }
        }
        turns += log.turns.len();
        h.dialogues += 1;
    }
    h
}
