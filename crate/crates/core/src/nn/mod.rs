//! Small feed-forward network engine with exact backpropagation.

pub mod checkpoint;
mod functional;
mod layer;
mod matrix;
mod network;
mod optim;

pub use checkpoint::{Checkpoint, Tensor};
pub use functional::{argmax, mse_loss, softmax};
pub use layer::{Conv1x1, Dense, Layer};
pub use matrix::Matrix;
pub use network::{Gradients, Network};
pub use optim::{Optimizer, OptimizerKind};
