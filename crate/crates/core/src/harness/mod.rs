//! Configuration, optimizers, the training loop and the command
//! implementations behind the `agse` binary.

pub mod commands;
pub mod config;
pub mod optim;
pub mod train;

pub use config::{Optimizer, TrainConfig};
pub use train::{Checkpoint, RunReport, TrainResult};
