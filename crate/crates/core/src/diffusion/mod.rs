//! Noise schedules, the forward process, DDIM sampling, the two noise
//! prediction losses with exact gradients, and a small convolutional
//! denoiser that is cheap enough to train on a laptop core.

mod bundle;
mod checkpoint;
mod ddim;
mod denoiser;
mod latent;
mod schedule;
mod train;

pub use bundle::{embed_text, empty_text, ConditioningBundle, Mode, TEXT_WIDTH};
pub use checkpoint::{Checkpoint, Descriptor};
pub use ddim::{ddim_sample, gaussian, start_step, step_grid, DdimConfig};
pub use denoiser::{grad, loss, loss_and_grad, Architecture, EpsModel, ToyDenoiser, MAX_PARAMS};
pub use latent::{decode, BlockCodec, Latent, LatentCodec};
pub use schedule::{diffuse_with_alpha, forward_diffuse, NoiseSchedule, ScheduleKind};
pub use train::{evaluation_loss, train_from, train_toy, Optimizer, TrainConfig, TrainExample, TrainedModel, TrainingCurve, Weighting};

use std::path::PathBuf;

use crate::mask::MaskError;

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bundle does not match mode: {0}")]
    Bundle(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("loss diverged at step {step}")]
    Diverged { step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Mask(#[from] MaskError),
}
