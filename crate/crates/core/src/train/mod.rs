//! L1 training loop, schedules, optimisers and checkpoints.

mod checkpoint;
mod config;
mod loss;
mod optim;
mod trainer;

pub use checkpoint::{Checkpoint, TensorEntry, CHECKPOINT_VERSION};
pub use config::{lr_at, OptimizerKind, Precision, RunConfig, TrainConfig};
pub use optim::{clip_global_norm, Optimizer};
pub use trainer::{load_state, save_state, TrainState, Trainer};
