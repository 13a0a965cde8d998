//! Latents-to-voxels decoder.
//!
//! The latent array is flattened, projected to a coarse grid, then
//! grown by stride-2 transpose convolutions (each stage doubles every
//! axis) and finished with a 1x1x1 projection to one logit per voxel.

use rand::Rng;

use super::ModelError;
use crate::attention::Linear;
use crate::tensor::{Tensor, Var};

struct Stage {
    w: Var,
    b: Var,
}

pub struct Decoder {
    out_dims: [usize; 3],
    coarse: [usize; 3],
    channels: usize,
    lin: Linear,
    stages: Vec<Stage>,
    proj: Linear,
}

impl Decoder {
    pub fn new(
        latent_count: usize,
        latent_dim: usize,
        out_dims: [usize; 3],
        stages: usize,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        let div = 1usize << stages;
        let mut coarse = [0usize; 3];
        for a in 0..3 {
            if out_dims[a] % div != 0 || out_dims[a] == 0 {
                return Err(ModelError::InvalidConfig(format!(
                    "decoder output axis {a} ({}) must be a positive multiple of {div}",
                    out_dims[a]
                )));
            }
            coarse[a] = out_dims[a] / div;
        }
        let flat_in = latent_count * latent_dim;
        let flat_coarse = coarse.iter().product::<usize>() * channels;
        let lin = Linear::new(flat_in, flat_coarse, (1.0 / flat_in as f64).sqrt(), rng);
        let stages = (0..stages)
            .map(|_| {
                let std = (1.0 / (8 * channels) as f64).sqrt();
                Stage {
                    w: Var::leaf(Tensor::randn(&[2, 2, 2, channels, channels], std, rng)),
                    b: Var::leaf(Tensor::zeros(&[channels])),
                }
            })
            .collect();
        let proj = Linear::new(channels, 1, (1.0 / channels as f64).sqrt(), rng);
        Ok(Self { out_dims, coarse, channels, lin, stages, proj })
    }

    pub fn out_dims(&self) -> [usize; 3] {
        self.out_dims
    }

    /// `latents` is `[N, latent_dim]`; returns logits `[nx, ny, nz]`.
    pub fn forward(&self, latents: &Var) -> Result<Var, ModelError> {
        let flat = latents.reshape(&[1, latents.len()])?;
        let [cx, cy, cz] = self.coarse;
        let mut x = self
            .lin
            .forward(&flat)?
            .relu()
            .reshape(&[cx, cy, cz, self.channels])?;
        for stage in &self.stages {
            x = x.conv_transpose3d(&stage.w, &stage.b, 2, 0)?.relu();
        }
        let [nx, ny, nz] = self.out_dims;
        let logits = self.proj.forward(&x.reshape(&[nx * ny * nz, self.channels])?)?;
        Ok(logits.reshape(&[nx, ny, nz])?)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        self.lin.params(&format!("{prefix}.lin"), out);
        for (i, s) in self.stages.iter().enumerate() {
            out.push((format!("{prefix}.stage{i}.w"), s.w.clone()));
            out.push((format!("{prefix}.stage{i}.b"), s.b.clone()));
        }
        self.proj.params(&format!("{prefix}.proj"), out);
    }
}
