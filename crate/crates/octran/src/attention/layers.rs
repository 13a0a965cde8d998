//! Trainable attention layers on the autodiff graph.
//!
//! Pre-norm residual blocks: the latents query the inputs once through
//! multi-head cross-attention, then pass through `depth` latent
//! self-attention blocks. Queries project from the learned latent
//! array; keys and values project from the inputs.

use rand::Rng;

use super::{AttentionConfig, AttentionError};
use crate::tensor::{Tensor, TensorError, Var};

/// Learned linear map with bias.
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn new(d_in: usize, d_out: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self {
            w: Var::leaf(Tensor::randn(&[d_in, d_out], std, rng)),
            b: Var::leaf(Tensor::zeros(&[d_out])),
        }
    }

    pub fn forward(&self, x: &Var) -> Result<Var, TensorError> {
        x.matmul(&self.w)?.add_bias(&self.b)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

/// Layer normalization over the last axis with learned gain and bias.
pub struct LayerNorm {
    pub gain: Var,
    pub bias: Var,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Var::leaf(Tensor::full(&[dim], 1.0)),
            bias: Var::leaf(Tensor::zeros(&[dim])),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Var) -> Result<Var, TensorError> {
        x.layer_norm(&self.gain, &self.bias, self.eps)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.gain"), self.gain.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Multi-head scaled dot-product attention with learned projections.
pub struct MultiHeadAttention {
    heads: usize,
    dim_per_head: usize,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
}

impl MultiHeadAttention {
    pub fn new(
        q_dim: usize,
        kv_dim: usize,
        out_dim: usize,
        heads: usize,
        dim_per_head: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let inner = heads * dim_per_head;
        Self {
            heads,
            dim_per_head,
            wq: Linear::new(q_dim, inner, std, rng),
            wk: Linear::new(kv_dim, inner, std, rng),
            wv: Linear::new(kv_dim, inner, std, rng),
            wo: Linear::new(inner, out_dim, std, rng),
        }
    }

    /// `queries` is `[M_q, q_dim]`, `inputs` is `[M_k, kv_dim]`.
    pub fn forward(&self, queries: &Var, inputs: &Var) -> Result<Var, AttentionError> {
        let q = self.wq.forward(queries)?;
        let k = self.wk.forward(inputs)?;
        let v = self.wv.forward(inputs)?;
        let dh = self.dim_per_head;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads_out = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.slice(1, h * dh, (h + 1) * dh)?;
            let kh = k.slice(1, h * dh, (h + 1) * dh)?;
            let vh = v.slice(1, h * dh, (h + 1) * dh)?;
            let scores = qh.matmul(&kh.permute(&[1, 0])?)?.scale(scale);
            let weights = scores.softmax(1)?;
            heads_out.push(weights.matmul(&vh)?);
        }
        let refs: Vec<&Var> = heads_out.iter().collect();
        let cat = Var::concat(1, &refs)?;
        Ok(self.wo.forward(&cat)?)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        self.wq.params(&format!("{prefix}.wq"), out);
        self.wk.params(&format!("{prefix}.wk"), out);
        self.wv.params(&format!("{prefix}.wv"), out);
        self.wo.params(&format!("{prefix}.wo"), out);
    }
}

/// The learned latent array: N vectors of `dim` channels.
pub struct LatentArray {
    pub values: Var,
}

impl LatentArray {
    /// Seeded Gaussian init, std 0.02.
    pub fn new(count: usize, dim: usize, rng: &mut impl Rng) -> Self {
        Self { values: Var::leaf(Tensor::randn(&[count, dim], 0.02, rng)) }
    }

    pub fn count(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }
}

struct SelfBlock {
    norm: LayerNorm,
    attn: MultiHeadAttention,
}

/// Latent cross-attention followed by a stack of latent self-attention
/// blocks, all pre-norm with residual connections.
pub struct PerceiverBlock {
    pub latents: LatentArray,
    cfg: AttentionConfig,
    norm_latents: LayerNorm,
    norm_inputs: LayerNorm,
    cross: MultiHeadAttention,
    blocks: Vec<SelfBlock>,
}

impl PerceiverBlock {
    pub fn new(
        latent_count: usize,
        latent_dim: usize,
        input_dim: usize,
        cfg: AttentionConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, AttentionError> {
        cfg.validate()?;
        let std = 0.02;
        let latents = LatentArray::new(latent_count, latent_dim, rng);
        let cross = MultiHeadAttention::new(
            latent_dim,
            input_dim,
            latent_dim,
            cfg.cross_heads,
            cfg.cross_dim_per_head,
            std,
            rng,
        );
        let blocks = (0..cfg.depth)
            .map(|_| SelfBlock {
                norm: LayerNorm::new(latent_dim),
                attn: MultiHeadAttention::new(
                    latent_dim,
                    latent_dim,
                    latent_dim,
                    cfg.latent_heads,
                    cfg.latent_dim_per_head,
                    std,
                    rng,
                ),
            })
            .collect();
        Ok(Self {
            latents,
            cfg,
            norm_latents: LayerNorm::new(latent_dim),
            norm_inputs: LayerNorm::new(input_dim),
            cross,
            blocks,
        })
    }

    pub fn config(&self) -> &AttentionConfig {
        &self.cfg
    }

    /// `inputs` is `[M, input_dim]`; returns `[N, latent_dim]`.
    pub fn forward(&self, inputs: &Var) -> Result<Var, AttentionError> {
        let q = self.norm_latents.forward(&self.latents.values)?;
        let kv = self.norm_inputs.forward(inputs)?;
        let mut x = self.latents.values.add(&self.cross.forward(&q, &kv)?)?;
        for block in &self.blocks {
            let normed = block.norm.forward(&x)?;
            x = x.add(&block.attn.forward(&normed, &normed)?)?;
        }
        Ok(x)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.latents"), self.latents.values.clone()));
        self.norm_latents.params(&format!("{prefix}.norm_latents"), out);
        self.norm_inputs.params(&format!("{prefix}.norm_inputs"), out);
        self.cross.params(&format!("{prefix}.cross"), out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.norm.params(&format!("{prefix}.block{i}.norm"), out);
            b.attn.params(&format!("{prefix}.block{i}.attn"), out);
        }
    }
}
