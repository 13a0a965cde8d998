//! The three OCTraN variants.
//!
//! All variants share the pipeline tokens → latent cross-attention →
//! latent self-attention → transpose-conv decoder. They differ in what
//! the tokens are:
//!
//! - B: raw pixels with 2D Fourier position features;
//! - V0: every cell of the feature pyramid with (y, x, level) features;
//! - V1: the pyramid split into C column chunks, each chunk decoded
//!   into one lateral slab of the grid by the shared transformer and
//!   decoder, slabs concatenated along the grid's y axis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backbone::Backbone;
use super::config::{OctranConfig, Variant};
use super::decoder::Decoder;
use super::ModelError;
use crate::attention::{FourierEncoding, PerceiverBlock};
use crate::tensor::{Tensor, Var};

pub struct OctranModel {
    cfg: OctranConfig,
    encoder: FourierEncoding,
    backbone: Option<Backbone>,
    perceiver: PerceiverBlock,
    decoder: Decoder,
}

/// Normalize an index to [-1, 1] by cell center: `2*(i+0.5)/n - 1`.
fn norm(i: usize, n: usize) -> f64 {
    2.0 * (i as f64 + 0.5) / n as f64 - 1.0
}

impl OctranModel {
    pub fn new(cfg: OctranConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = FourierEncoding::new(cfg.mf, cfg.num_bands, true)?;
        let backbone = match cfg.variant {
            Variant::B => None,
            _ => Some(Backbone::new(cfg.input_h, cfg.input_w, cfg.channels, &mut rng)),
        };
        let input_dim = match cfg.variant {
            Variant::B => encoder.feature_len(2) + 3,
            _ => cfg.channels + encoder.feature_len(3),
        };
        let perceiver =
            PerceiverBlock::new(cfg.latents, cfg.latent_dim, input_dim, cfg.attention(), &mut rng)?;
        let decoder = Decoder::new(
            cfg.latents,
            cfg.latent_dim,
            cfg.slab_dims(),
            cfg.decoder_stages,
            cfg.channels,
            &mut rng,
        )?;
        Ok(Self { cfg, encoder, backbone, perceiver, decoder })
    }

    pub fn config(&self) -> &OctranConfig {
        &self.cfg
    }

    pub fn params(&self) -> Vec<(String, Var)> {
        let mut out = Vec::new();
        if let Some(bb) = &self.backbone {
            bb.params("backbone", &mut out);
        }
        self.perceiver.params("perceiver", &mut out);
        self.decoder.params("decoder", &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// `image` is `[H, W, 3]`; returns logits shaped like the grid.
    pub fn forward(&self, image: &Tensor) -> Result<Var, ModelError> {
        if image.shape() != [self.cfg.input_h, self.cfg.input_w, 3] {
            return Err(ModelError::ShapeMismatch(format!(
                "expected [{}, {}, 3] image, got {:?}",
                self.cfg.input_h,
                self.cfg.input_w,
                image.shape()
            )));
        }
        match self.cfg.variant {
            Variant::B => self.forward_b(image),
            Variant::V0 => self.forward_v0(image),
            Variant::V1 => self.forward_v1(image),
        }
    }

    fn forward_b(&self, image: &Tensor) -> Result<Var, ModelError> {
        let (h, w) = (self.cfg.input_h, self.cfg.input_w);
        let mut pos = Vec::with_capacity(h * w * 2);
        for v in 0..h {
            for u in 0..w {
                pos.push(norm(v, h));
                pos.push(norm(u, w));
            }
        }
        let pos = self.encoder.encode_matrix(&Tensor::from_vec(&[h * w, 2], pos)?);
        let rgb = image.reshape(&[h * w, 3])?;
        let tokens = Var::leaf(Tensor::concat(1, &[&pos, &rgb])?);
        let latents = self.perceiver.forward(&tokens)?;
        self.decoder.forward(&latents)
    }

    /// Tokens of the column range `[c0, c1)` of one pyramid level:
    /// trainable features concatenated with constant position features.
    fn level_tokens(
        &self,
        level: &Var,
        j: usize,
        c0: usize,
        c1: usize,
    ) -> Result<Var, ModelError> {
        let (h, w_full, c) = (level.shape()[0], level.shape()[1], level.shape()[2]);
        let cols = c1 - c0;
        let feats = level.slice(1, c0, c1)?.reshape(&[h * cols, c])?;
        let mut pos = Vec::with_capacity(h * cols * 3);
        for r in 0..h {
            for col in c0..c1 {
                pos.push(norm(r, h));
                pos.push(norm(col, w_full));
                pos.push(j as f64 / 2.0 - 1.0);
            }
        }
        let pos = self.encoder.encode_matrix(&Tensor::from_vec(&[h * cols, 3], pos)?);
        Ok(Var::concat(1, &[&feats, &Var::leaf(pos)])?)
    }

    fn pyramid_tokens(&self, levels: &[Var], chunk: (usize, usize)) -> Result<Var, ModelError> {
        let (i, chunks) = chunk;
        let mut parts = Vec::new();
        for (j, level) in levels.iter().enumerate().skip(self.cfg.min_pyramid_level) {
            let w = level.shape()[1];
            let step = w / chunks;
            parts.push(self.level_tokens(level, j, i * step, (i + 1) * step)?);
        }
        let refs: Vec<&Var> = parts.iter().collect();
        Ok(Var::concat(0, &refs)?)
    }

    fn forward_v0(&self, image: &Tensor) -> Result<Var, ModelError> {
        let levels = self.backbone.as_ref().unwrap().forward(&Var::leaf(image.clone()))?;
        let tokens = self.pyramid_tokens(&levels, (0, 1))?;
        let latents = self.perceiver.forward(&tokens)?;
        self.decoder.forward(&latents)
    }

    fn forward_v1(&self, image: &Tensor) -> Result<Var, ModelError> {
        let levels = self.backbone.as_ref().unwrap().forward(&Var::leaf(image.clone()))?;
        let mut slabs = Vec::with_capacity(self.cfg.chunks);
        for i in 0..self.cfg.chunks {
            let tokens = self.pyramid_tokens(&levels, (i, self.cfg.chunks))?;
            let latents = self.perceiver.forward(&tokens)?;
            slabs.push(self.decoder.forward(&latents)?);
        }
        let refs: Vec<&Var> = slabs.iter().collect();
        Ok(Var::concat(1, &refs)?)
    }
}
