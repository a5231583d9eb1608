//! Expert-free online transfer learning for multi-agent reinforcement learning.
//!
//! Agents learn in parallel with dueling Q-networks, label every interaction
//! they experience with an epistemic uncertainty estimate (state-action RND),
//! and periodically exchange uncertainty-labelled experience. At every transfer
//! step a temporary source agent is elected and every other agent pulls a batch
//! from the source's transfer buffer filtered to its own knowledge gaps.
//!
//! Module map:
//!
//! * [`nn`] feed-forward networks with exact backpropagation, Adam and RMSProp.
//! * [`replay`] transitions plus plain and proportional prioritized replay.
//! * [`agents`] dueling DQN learning processes and the ensemble-head variant.
//! * [`uncertainty`] RND / sa-RND estimators.
//! * [`transfer`] transfer buffers, source selection, filters and the transfer step.
//! * [`envs`] Cart-Pole and grid Predator-Prey.
//! * [`baselines`] action-advising baselines.
//! * [`harness`] configuration, the training loop, evaluation and CSV output.

pub mod agents;
pub mod baselines;
pub mod envs;
mod error;
pub mod harness;
pub mod nn;
pub mod replay;
pub mod transfer;
pub mod uncertainty;

pub use error::{Error, Result};
