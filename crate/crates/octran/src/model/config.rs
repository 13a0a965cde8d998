//! Flat key-value model configuration.
//!
//! Field names in files match the struct exactly (`variant=V0`,
//! `lr=0.0001`, ...); floats print in Rust's shortest round-trip form,
//! so write-then-parse is lossless.

use std::collections::BTreeMap;

use super::ModelError;
use crate::attention::{reference_pyramid_shapes, AttentionConfig};
use crate::geometry::VoxelGridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    B,
    V0,
    V1,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "B" => Some(Variant::B),
            "V0" => Some(Variant::V0),
            "V1" => Some(Variant::V1),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::B => "B",
            Variant::V0 => "V0",
            Variant::V1 => "V1",
        }
    }
}

/// Everything needed to build and train one model.
#[derive(Debug, Clone, PartialEq)]
pub struct OctranConfig {
    pub variant: Variant,
    /// Cross-attention heads.
    pub ch: usize,
    /// Cross-attention dim per head.
    pub cdh: usize,
    /// Loss mask probability: chance of dropping an empty voxel from
    /// the loss.
    pub lmp: f64,
    pub lr: f64,
    /// Batch size.
    pub bs: usize,
    /// Fourier max frequency.
    pub mf: f64,
    /// Latent transformer depth.
    pub d: usize,
    /// Latent self-attention heads.
    pub lh: usize,
    /// Latent self-attention dim per head.
    pub ldh: usize,
    /// Column chunk count (V1; must be 1 otherwise).
    pub chunks: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub grid: VoxelGridSpec,
    /// Latent array size N.
    pub latents: usize,
    pub latent_dim: usize,
    /// Backbone / decoder channel width.
    pub channels: usize,
    /// Transpose-conv stages (each doubles every grid axis).
    pub decoder_stages: usize,
    pub num_bands: usize,
    /// Coarsest pyramid level fed to the transformer (0 = all levels).
    pub min_pyramid_level: usize,
    pub seed: u64,
}

impl OctranConfig {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            cross_heads: self.ch,
            cross_dim_per_head: self.cdh,
            latent_heads: self.lh,
            latent_dim_per_head: self.ldh,
            depth: self.d,
        }
    }

    /// Grid dims decoded by one transformer pass: the full grid for B
    /// and V0, one lateral slab for V1.
    pub fn slab_dims(&self) -> [usize; 3] {
        let [nx, ny, nz] = self.grid.dims;
        match self.variant {
            Variant::V1 => [nx, ny / self.chunks, nz],
            _ => [nx, ny, nz],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        for (name, v) in [
            ("ch", self.ch),
            ("cdh", self.cdh),
            ("bs", self.bs),
            ("d", self.d),
            ("lh", self.lh),
            ("ldh", self.ldh),
            ("latents", self.latents),
            ("latent_dim", self.latent_dim),
            ("channels", self.channels),
            ("num_bands", self.num_bands),
            ("chunks", self.chunks),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(0.0..=1.0).contains(&self.lmp) {
            return bad(format!("lmp {} must be in [0, 1]", self.lmp));
        }
        if !(self.mf > 0.0) {
            return bad(format!("mf {} must be positive", self.mf));
        }
        if self.input_h % 32 != 0 || self.input_w % 32 != 0 {
            return bad(format!(
                "input {}x{} must be divisible by 32",
                self.input_h, self.input_w
            ));
        }
        if self.min_pyramid_level > 4 {
            return bad(format!("min_pyramid_level {} out of 0..=4", self.min_pyramid_level));
        }
        let slab = self.slab_dims();
        for (axis, &n) in slab.iter().enumerate() {
            let div = 1usize << self.decoder_stages;
            if n == 0 || n % div != 0 {
                return bad(format!(
                    "slab axis {axis} ({n} voxels) must be a positive multiple of 2^decoder_stages = {div}"
                ));
            }
        }
        match self.variant {
            Variant::V1 => {
                if self.grid.dims[1] % self.chunks != 0 {
                    return bad(format!(
                        "chunks {} must divide grid y dim {}",
                        self.chunks, self.grid.dims[1]
                    ));
                }
                let shapes = reference_pyramid_shapes(self.input_h, self.input_w);
                for (j, (_, w)) in shapes.iter().enumerate().skip(self.min_pyramid_level) {
                    if w % self.chunks != 0 {
                        return bad(format!(
                            "chunks {} must divide pyramid level {j} width {w}",
                            self.chunks
                        ));
                    }
                }
            }
            _ => {
                if self.chunks != 1 {
                    return bad(format!("variant {} requires chunks=1", self.variant.name()));
                }
            }
        }
        Ok(())
    }

    /// Serialize to the flat key-value file format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        for (k, v) in [
            ("variant", self.variant.name().to_string()),
            ("ch", self.ch.to_string()),
            ("cdh", self.cdh.to_string()),
            ("lmp", self.lmp.to_string()),
            ("lr", self.lr.to_string()),
            ("bs", self.bs.to_string()),
            ("mf", self.mf.to_string()),
            ("d", self.d.to_string()),
            ("lh", self.lh.to_string()),
            ("ldh", self.ldh.to_string()),
            ("chunks", self.chunks.to_string()),
            ("input_h", self.input_h.to_string()),
            ("input_w", self.input_w.to_string()),
            ("grid_nx", g.dims[0].to_string()),
            ("grid_ny", g.dims[1].to_string()),
            ("grid_nz", g.dims[2].to_string()),
            ("extent_x", g.extent[0].to_string()),
            ("extent_y", g.extent[1].to_string()),
            ("extent_z", g.extent[2].to_string()),
            ("origin_x", g.origin[0].to_string()),
            ("origin_y", g.origin[1].to_string()),
            ("origin_z", g.origin[2].to_string()),
            ("latents", self.latents.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("channels", self.channels.to_string()),
            ("decoder_stages", self.decoder_stages.to_string()),
            ("num_bands", self.num_bands.to_string()),
            ("min_pyramid_level", self.min_pyramid_level.to_string()),
            ("seed", self.seed.to_string()),
        ] {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    /// Parse the flat key-value format; `#` starts a comment line.
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut kv = BTreeMap::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ModelError::InvalidConfig(format!("line {}: expected key=value, got {line:?}", ln + 1))
            })?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(ModelError::InvalidConfig(format!("duplicate key {k:?}")));
            }
        }
        fn take<T: std::str::FromStr>(
            kv: &mut BTreeMap<String, String>,
            key: &str,
        ) -> Result<T, ModelError> {
            let raw = kv
                .remove(key)
                .ok_or_else(|| ModelError::InvalidConfig(format!("missing key {key:?}")))?;
            raw.parse()
                .map_err(|_| ModelError::InvalidConfig(format!("unparseable {key}={raw:?}")))
        }
        let variant_raw: String = take(&mut kv, "variant")?;
        let variant = Variant::parse(&variant_raw)
            .ok_or_else(|| ModelError::InvalidConfig(format!("unknown variant {variant_raw:?}")))?;
        let cfg = OctranConfig {
            variant,
            ch: take(&mut kv, "ch")?,
            cdh: take(&mut kv, "cdh")?,
            lmp: take(&mut kv, "lmp")?,
            lr: take(&mut kv, "lr")?,
            bs: take(&mut kv, "bs")?,
            mf: take(&mut kv, "mf")?,
            d: take(&mut kv, "d")?,
            lh: take(&mut kv, "lh")?,
            ldh: take(&mut kv, "ldh")?,
            chunks: take(&mut kv, "chunks")?,
            input_h: take(&mut kv, "input_h")?,
            input_w: take(&mut kv, "input_w")?,
            grid: VoxelGridSpec::new(
                [take(&mut kv, "grid_nx")?, take(&mut kv, "grid_ny")?, take(&mut kv, "grid_nz")?],
                [take(&mut kv, "extent_x")?, take(&mut kv, "extent_y")?, take(&mut kv, "extent_z")?],
                [take(&mut kv, "origin_x")?, take(&mut kv, "origin_y")?, take(&mut kv, "origin_z")?],
            )?,
            latents: take(&mut kv, "latents")?,
            latent_dim: take(&mut kv, "latent_dim")?,
            channels: take(&mut kv, "channels")?,
            decoder_stages: take(&mut kv, "decoder_stages")?,
            num_bands: take(&mut kv, "num_bands")?,
            min_pyramid_level: take(&mut kv, "min_pyramid_level")?,
            seed: take(&mut kv, "seed")?,
        };
        if let Some(extra) = kv.keys().next() {
            return Err(ModelError::InvalidConfig(format!("unknown key {extra:?}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Desk-scale reference configuration for one variant: runs in
    /// minutes on a single CPU core. Attention hyperparameters follow
    /// the full-scale table; learning rate, max frequency, and sizes
    /// are rescaled for the small input.
    pub fn desk(variant: Variant) -> Self {
        let base = OctranConfig {
            variant,
            ch: 8,
            cdh: 32,
            lmp: 0.5,
            lr: 3e-3,
            bs: 2,
            mf: 16.0,
            d: 2,
            lh: 8,
            ldh: 32,
            chunks: 1,
            input_h: 32,
            input_w: 128,
            grid: VoxelGridSpec::new([16, 16, 4], [16.0, 8.0, 16.0], [-8.0, -4.0, 0.0]).unwrap(),
            latents: 32,
            latent_dim: 64,
            channels: 32,
            decoder_stages: 2,
            num_bands: 6,
            min_pyramid_level: 0,
            seed: 42,
        };
        match variant {
            Variant::B => OctranConfig { ch: 1, cdh: 64, lmp: 0.0, bs: 1, d: 1, ..base },
            Variant::V0 => base,
            // level widths at 32x128 are 2,4,8,16,32; C=4 divides
            // levels 2..=4, so the coarser two are excluded
            Variant::V1 => OctranConfig { chunks: 4, d: 2, lh: 4, min_pyramid_level: 2, ..base },
        }
    }

    /// Full-scale hyperparameter rows (CH, CDH, LMP, LR, BS, MF, D, LH,
    /// LDH per variant) at the 128x512 reference input. Parsing and
    /// validation targets; training these sizes is out of scope here.
    pub fn full_scale(variant: Variant) -> Self {
        let base = OctranConfig {
            variant,
            ch: 8,
            cdh: 32,
            lmp: 0.5,
            lr: 1e-4,
            bs: 2,
            mf: 500_000.0,
            d: 4,
            lh: 8,
            ldh: 32,
            chunks: 1,
            input_h: 128,
            input_w: 512,
            grid: VoxelGridSpec::new([64, 64, 8], [64.0, 16.0, 64.0], [-32.0, -8.0, 0.0]).unwrap(),
            latents: 256,
            latent_dim: 512,
            channels: 64,
            decoder_stages: 3,
            num_bands: 6,
            min_pyramid_level: 0,
            seed: 42,
        };
        match variant {
            Variant::B => OctranConfig {
                ch: 1,
                cdh: 64,
                lmp: 0.0,
                lr: 1e-3,
                bs: 1,
                mf: 1000.0,
                d: 1,
                ..base
            },
            Variant::V0 => base,
            Variant::V1 => OctranConfig { bs: 4, d: 8, lh: 4, chunks: 8, ..base },
        }
    }
}
