//! Optimization, evaluation, parameter accounting and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod optim;
pub mod run;
pub mod steps;

pub use checkpoint::Checkpoint;
pub use config::{Mode, RunConfig};
pub use model::Model;
pub use optim::{AdamW, OptimConfig};
pub use run::{pretrain, tune, tune_features, zero_shot, FeatureSplit, PretrainReport, TripletBank, TuneReport};
pub use steps::{
    count_learnable, evaluate, metrics_from_predictions, pretrain_step, tune_step, LearnableCount,
    Metrics, PretrainBatch, TuneBatch,
};
