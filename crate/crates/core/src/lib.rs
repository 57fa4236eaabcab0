//! A laboratory for module-level reinforcement learning of a universal
//! post-processing policy over a pipelined task-oriented dialogue system.

pub mod env;
pub mod experiment;
pub mod imitation;
pub mod mdp;
pub mod seed;
pub mod model;
pub mod ppo;
