//! QKV attention and the latent cross-attention machinery.
//!
//! A small learned latent array of N vectors queries M input tokens, so
//! the score computation costs O(MN) MACs instead of the O(M²) of
//! self-attention over the inputs. Fourier position features travel
//! with the tokens, which makes the cross-attention output invariant to
//! token order.

mod chunk;
mod fourier;
mod layers;
mod qkv;

pub use chunk::{chunk_features, reference_pyramid_shapes, FeaturePyramid};
pub use fourier::FourierEncoding;
pub use layers::{LatentArray, LayerNorm, Linear, MultiHeadAttention, PerceiverBlock};
pub use qkv::{complexity_row, qkv_attention, ComplexityRow};

use crate::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttentionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("head layout invalid: {0}")]
    HeadLayout(String),
    #[error("chunk count {chunks} does not divide layer {layer} width {width}")]
    ChunkMismatch { chunks: usize, layer: usize, width: usize },
    #[error("pyramid invalid: {0}")]
    InvalidPyramid(String),
    #[error("encoding invalid: {0}")]
    InvalidEncoding(String),
}

/// Head-count / width / depth hyperparameters of one perceiver stack.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionConfig {
    pub cross_heads: usize,
    pub cross_dim_per_head: usize,
    pub latent_heads: usize,
    pub latent_dim_per_head: usize,
    /// Number of latent self-attention blocks after the cross-attention.
    pub depth: usize,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<(), AttentionError> {
        if self.cross_heads == 0
            || self.cross_dim_per_head == 0
            || self.latent_heads == 0
            || self.latent_dim_per_head == 0
        {
            return Err(AttentionError::HeadLayout(
                "head counts and per-head dims must be >= 1".into(),
            ));
        }
        Ok(())
    }
}
