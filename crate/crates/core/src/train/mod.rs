//! Training: Adam updates, best-validation checkpointing and Bayesian search
//! over the loss weights.

mod adam;
mod checkpoint;
mod gp;
mod trainer;
mod tune;

pub use adam::{adam_step, clip_global_norm, AdamState};
pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC,
};
pub use gp::GaussianProcess;
pub use trainer::{train, write_history, EpochRecord, TrainConfig, TrainOutcome};
pub use tune::{tune_lambdas, Configuration, LambdaGrid, TuneResult, GRID_VALUES};
