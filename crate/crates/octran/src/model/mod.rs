//! Occupancy network variants B, V0 and V1.
//!
//! Pipeline (shared across variants): an image becomes a token matrix,
//! a small latent array cross-attends into the tokens and refines
//! itself with latent self-attention, and a transpose-convolution
//! decoder turns the latents into one logit per voxel. Training is
//! masked binary cross-entropy under Adam; everything is seeded and
//! checkpoints round-trip bit-exactly.

mod backbone;
mod config;
mod decoder;
mod loss;
mod net;
mod train;

pub use backbone::{Backbone, Conv2dLayer};
pub use config::{OctranConfig, Variant};
pub use decoder::Decoder;
pub use loss::masked_bce_loss;
pub use net::OctranModel;
pub use train::{baseline_iou, evaluate, logits_to_grid, Adam, TrainState};

use thiserror::Error;

use crate::attention::AttentionError;
use crate::formats::FormatError;
use crate::geometry::GeometryError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty-loss: every voxel was masked out")]
    EmptyLoss,
    #[error("diverged: non-finite loss at step {step}")]
    Diverged { step: u64 },
    #[error("dataset must contain at least one sample")]
    EmptyDataset,
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}
