//! Dueling DQN learning processes.

mod explore;
mod learner;
mod qnet;

pub use explore::{sample_categorical, Exploration};
pub use learner::{LearningProcess, LpConfig};
pub use qnet::{dueling_combine, ensemble_uncertainty, vote_disagreement, DuelingQNet, QArch};
