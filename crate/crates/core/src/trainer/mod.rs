//! Two-stage training: configuration, windowed datasets, the optimizer,
//! checkpoints and the training loop.

mod checkpoint;
mod config;
mod dataset;
mod optim;
mod train;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC};
pub use config::{DataSplit, TrainConfig, SEED_ENV};
pub use dataset::Dataset;
pub use optim::{clip_grad_norm, cosine_lr, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{
    stage_options, stage_trainable, train_stage1, train_stage2, StepRecord, Trainer,
};
