//! Dialogue rollouts: the user simulator talking to the module pipeline, with
//! a post-processing hook after every module.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::acts::{parse_utterance, render_utterance, ActList};
use super::goal::DialogueGoal;
use super::metrics::TURN_CAP;
use super::pipeline::{
    dst_forward, nlg_forward, nlu_forward, policy_forward, ModuleKind, ModuleOutput, NoiseProfile,
    PipelineKind,
};
use super::schema::Schema;
use super::state::DialogueState;
use super::user::{user_step, Agenda, UserProfile};
use super::world::{self, World};
use super::EnvError;
use crate::mdp::{next_step, ModuleStep};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Schema file; the built-in two-domain schema when absent.
    pub schema_path: Option<String>,
    pub db_seed: u64,
    pub noise: NoiseProfile,
    pub user: UserProfile,
    pub pipeline: PipelineKind,
    pub turn_cap: usize,
    pub context_utterances: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            schema_path: None,
            db_seed: 0,
            noise: NoiseProfile::default(),
            user: UserProfile::default(),
            pipeline: PipelineKind::Standard,
            turn_cap: TURN_CAP,
            context_utterances: 3,
        }
    }
}

/// Read-only environment shared by every rollout.
#[derive(Debug, Clone)]
pub struct Env {
    pub world: World,
    pub noise: NoiseProfile,
    pub user: UserProfile,
    pub pipeline: PipelineKind,
    pub turn_cap: usize,
    pub context_utterances: usize,
}

impl Env {
    pub fn new(cfg: &EnvConfig) -> Result<Self, EnvError> {
        let schema = match &cfg.schema_path {
            Some(p) => Schema::load(std::path::Path::new(p))?,
            None => Schema::default(),
        };
        Self::with_schema(schema, cfg)
    }

    pub fn with_schema(schema: Schema, cfg: &EnvConfig) -> Result<Self, EnvError> {
        cfg.noise.validate()?;
        if cfg.turn_cap == 0 || cfg.turn_cap > TURN_CAP {
            return Err(EnvError::Config(format!("turn_cap must lie in 1..={TURN_CAP}")));
        }
        Ok(Self {
            world: World::new(schema, cfg.db_seed)?,
            noise: cfg.noise,
            user: cfg.user,
            pipeline: cfg.pipeline,
            turn_cap: cfg.turn_cap,
            context_utterances: cfg.context_utterances,
        })
    }

    pub fn module_count(&self) -> usize {
        self.pipeline.module_count()
    }
}

/// What the post-processor sees for one module at one turn.
pub struct ModuleCall<'a> {
    pub step: ModuleStep,
    pub kind: ModuleKind,
    pub context: &'a [String],
    pub input: &'a [String],
    pub output_tokens: &'a [String],
    pub output: &'a ModuleOutput,
}

pub struct Processed {
    pub output: ModuleOutput,
    /// The replacement failed to parse and the original output was kept.
    pub fallback: bool,
}

pub trait PostProcessor {
    fn post_process(&mut self, world: &World, call: &ModuleCall<'_>) -> Processed;
}

/// Leaves every module output untouched.
pub struct NoPostProcessing;

impl PostProcessor for NoPostProcessing {
    fn post_process(&mut self, _world: &World, call: &ModuleCall<'_>) -> Processed {
        Processed {
            output: call.output.clone(),
            fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ModuleRecord {
    pub module: usize,
    pub kind: Option<ModuleKind>,
    pub input: Vec<String>,
    pub raw_output: Vec<String>,
    pub output: Vec<String>,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn: usize,
    pub user: Vec<String>,
    pub user_acts: ActList,
    pub context: Vec<String>,
    pub modules: Vec<ModuleRecord>,
    pub system: Vec<String>,
    /// System acts as heard by the user.
    pub system_acts: ActList,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DialogueLog {
    pub turns: Vec<TurnRecord>,
    pub user_done: bool,
    pub abandoned: bool,
}

impl DialogueLog {
    pub fn module_steps(&self) -> usize {
        self.turns.iter().map(|t| t.modules.len()).sum()
    }

    /// One JSON record per turn.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for t in &self.turns {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn context_window(utterances: &[Vec<String>], n: usize) -> Vec<String> {
    let start = utterances.len().saturating_sub(n);
    utterances[start..].iter().flatten().cloned().collect()
}

struct TurnRunner<'a> {
    env: &'a Env,
    context: &'a [String],
    step: ModuleStep,
    records: Vec<ModuleRecord>,
}

impl TurnRunner<'_> {
    fn apply(
        &mut self,
        pp: &mut dyn PostProcessor,
        kind: ModuleKind,
        input: Vec<String>,
        raw: ModuleOutput,
    ) -> ModuleOutput {
        let world = &self.env.world;
        let raw_tokens = raw.to_tokens(world);
        let call = ModuleCall {
            step: self.step,
            kind,
            context: self.context,
            input: &input,
            output_tokens: &raw_tokens,
            output: &raw,
        };
        let processed = pp.post_process(world, &call);
        self.records.push(ModuleRecord {
            module: self.step.module,
            kind: Some(kind),
            input,
            output: processed.output.to_tokens(world),
            raw_output: raw_tokens,
            fallback: processed.fallback,
        });
        self.step = next_step(self.step);
        processed.output
    }
}

fn tracker_input(world: &World, acts: &ActList, state: &DialogueState) -> Vec<String> {
    let mut input = acts.to_tokens(world);
    input.push(world::KW_STATE.to_string());
    input.extend(state.belief_tokens(world));
    input
}

/// Runs one dialogue to completion: the user leaves, abandons, or the turn
/// cap is reached. All module noise and user randomness come from `rng`.
pub fn run_dialogue<R: Rng>(env: &Env, goal: &DialogueGoal, rng: &mut R, pp: &mut dyn PostProcessor) -> DialogueLog {
    let world = &env.world;
    let m_count = env.module_count();
    let mut agenda = Agenda::new(world, goal);
    let mut state = DialogueState::empty(world);
    let mut heard = ActList::default();
    let mut utterances: Vec<Vec<String>> = Vec::new();
    let mut log = DialogueLog::default();
    for t in 0..env.turn_cap {
        let user = user_step(world, goal, &mut agenda, &heard, &env.user, rng);
        if user.done {
            log.user_done = !agenda.abandoned;
            log.abandoned = agenda.abandoned;
            return log;
        }
        let context = context_window(&utterances, env.context_utterances);
        utterances.push(user.utterance.clone());
        let mut runner = TurnRunner {
            env,
            context: &context,
            step: ModuleStep::new(t, 1, m_count).expect("valid step"),
            records: Vec::with_capacity(m_count),
        };
        let nlu_raw = nlu_forward(world, &user.utterance, &env.noise, rng);
        let acts = match runner.apply(pp, ModuleKind::Nlu, user.utterance.clone(), ModuleOutput::Acts(nlu_raw)) {
            ModuleOutput::Acts(a) => a,
            _ => unreachable!("nlu yields acts"),
        };
        let system = match env.pipeline {
            PipelineKind::Standard => {
                let input = tracker_input(world, &acts, &state);
                let raw = dst_forward(&state, &acts, &env.noise, rng);
                state = match runner.apply(pp, ModuleKind::Dst, input, ModuleOutput::State(raw)) {
                    ModuleOutput::State(s) => s,
                    _ => unreachable!("dst yields a state"),
                };
                let raw = policy_forward(world, &state, &env.noise, rng);
                let sys_acts = match runner.apply(pp, ModuleKind::Policy, state.belief_tokens(world), ModuleOutput::Acts(raw)) {
                    ModuleOutput::Acts(a) => a,
                    _ => unreachable!("policy yields acts"),
                };
                state.record_system_acts(sys_acts.acts());
                let raw = nlg_forward(world, &sys_acts, &env.noise, rng);
                match runner.apply(pp, ModuleKind::Nlg, sys_acts.to_tokens(world), ModuleOutput::Response(raw)) {
                    ModuleOutput::Response(r) => r,
                    _ => unreachable!("nlg yields a response"),
                }
            }
            PipelineKind::WordLevel => {
                let input = tracker_input(world, &acts, &state);
                state = dst_forward(&state, &acts, &env.noise, rng);
                let raw = policy_forward(world, &state, &env.noise, rng);
                let sys_acts = match runner.apply(pp, ModuleKind::DstPolicy, input, ModuleOutput::Acts(raw)) {
                    ModuleOutput::Acts(a) => a,
                    _ => unreachable!("fused module yields acts"),
                };
                state.record_system_acts(sys_acts.acts());
                render_utterance(world, &sys_acts)
            }
        };
        heard = parse_utterance(world, &system);
        utterances.push(system.clone());
        let modules = runner.records;
        log.turns.push(TurnRecord {
            turn: t,
            user: user.utterance,
            user_acts: user.acts,
            context,
            modules,
            system,
            system_acts: heard.clone(),
        });
    }
    log
}
