//! Built-in environments behind a common multi-agent interface.
//!
//! Cart-Pole is exposed as a one-agent instance; the harness runs one
//! independent instance per learning agent.

mod cartpole;
mod predator_prey;

pub use cartpole::{mechanical_energy, CartPole, CartPoleParams, CartPoleState};
pub use predator_prey::{
    Cell, Entity, Heading, PpAction, PpConfig, PpEvents, PpRewards, PredatorPrey, Prey, Team,
    OBS_CHANNELS, OBS_CODE_MAX, OBS_POSITIONS,
};

use rand::RngCore;

use crate::Result;

/// Outcome of one joint step.
#[derive(Debug, Clone, PartialEq)]
pub struct JointStep {
    pub observations: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Episode is over (terminal or truncated).
    pub done: bool,
    /// Episode ended in a true terminal state, so bootstrapping must stop.
    pub terminal: bool,
}

pub trait MultiAgentEnv {
    fn agent_count(&self) -> usize;
    fn observation_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<Vec<f64>>;
    fn step(&mut self, actions: &[usize], rng: &mut dyn RngCore) -> Result<JointStep>;
    /// One line of the optional trajectory dump for the current state.
    fn trace_line(&self, step: usize, actions: &[usize], rewards: &[f64]) -> String;
}

pub(crate) fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub(crate) fn join_usize(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
