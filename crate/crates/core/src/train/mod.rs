//! Two-phase training with SI-SDR loss, AMSGrad, clipping and plateau
//! scheduling, plus the ablation harness.

mod ablation;
mod config;
mod trainer;

pub use ablation::{ablation_run, AblationResult};
pub use config::{Ablation, TrainConfig};
pub use trainer::{
    loss, suffixed, train, validation_set, EpochRecord, StepStats, TrainData, TrainLog, TrainOutcome, Trainer,
};
