//! Convolutional pyramid backbone.
//!
//! A stride-2 stem followed by five stride-2 downsampling convolutions
//! produces encoder maps at 1/4 .. 1/64 of the input, then a top-down
//! pass (nearest upsample + 1x1 lateral) emits five feature maps whose
//! shapes obey the pyramid law: level j is `2^(j+1) x 2^(j+3) x C` at
//! the 128x512 reference input, scaled proportionally (floored at 1)
//! for smaller inputs.

use rand::Rng;

use super::ModelError;
use crate::attention::reference_pyramid_shapes;
use crate::tensor::{Tensor, Var};

/// One trainable 2D convolution.
pub struct Conv2dLayer {
    pub w: Var,
    pub b: Var,
    stride: (usize, usize),
    pad: (usize, usize),
}

impl Conv2dLayer {
    pub fn new(
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
        stride: (usize, usize),
        pad: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        let std = (1.0 / (kh * kw * cin) as f64).sqrt();
        Self {
            w: Var::leaf(Tensor::randn(&[kh, kw, cin, cout], std, rng)),
            b: Var::leaf(Tensor::zeros(&[cout])),
            stride,
            pad,
        }
    }

    pub fn forward(&self, x: &Var) -> Result<Var, ModelError> {
        Ok(x.conv2d(&self.w, &self.b, self.stride, self.pad)?)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        out.push((format!("{prefix}.w"), self.w.clone()));
        out.push((format!("{prefix}.b"), self.b.clone()));
    }
}

pub struct Backbone {
    input_h: usize,
    input_w: usize,
    stem: Conv2dLayer,
    downs: Vec<Conv2dLayer>,
    laterals: Vec<Conv2dLayer>,
}

impl Backbone {
    pub fn new(input_h: usize, input_w: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let stem = Conv2dLayer::new(3, 3, 3, channels, (2, 2), (1, 1), rng);
        let downs = (0..5)
            .map(|_| Conv2dLayer::new(3, 3, channels, channels, (2, 2), (1, 1), rng))
            .collect();
        let laterals = (0..5)
            .map(|_| Conv2dLayer::new(1, 1, channels, channels, (1, 1), (0, 0), rng))
            .collect();
        Self { input_h, input_w, stem, downs, laterals }
    }

    /// `image` is `[H, W, 3]`; returns pyramid levels coarsest first
    /// (j = 0 .. 4), each `[h_j, w_j, channels]`.
    pub fn forward(&self, image: &Var) -> Result<Vec<Var>, ModelError> {
        if image.shape() != [self.input_h, self.input_w, 3] {
            return Err(ModelError::ShapeMismatch(format!(
                "backbone expects [{}, {}, 3] input, got {:?}",
                self.input_h,
                self.input_w,
                image.shape()
            )));
        }
        let mut x = self.stem.forward(image)?.relu();
        // encoder maps finest (1/4) to coarsest (1/64)
        let mut enc = Vec::with_capacity(5);
        for down in &self.downs {
            x = down.forward(&x)?.relu();
            enc.push(x.clone());
        }
        // top-down: lateral at the coarsest level, then upsample + add
        let mut levels = Vec::with_capacity(5);
        let mut top = self.laterals[4].forward(&enc[4])?;
        levels.push(top.clone());
        for j in 1..5 {
            let lat = self.laterals[4 - j].forward(&enc[4 - j])?;
            let (th, tw) = (top.shape()[0], top.shape()[1]);
            let (lh, lw) = (lat.shape()[0], lat.shape()[1]);
            top = lat.add(&top.upsample_nearest2d(lh / th, lw / tw)?)?;
            levels.push(top.clone());
        }
        let want = reference_pyramid_shapes(self.input_h, self.input_w);
        for (j, (level, &(h, w))) in levels.iter().zip(&want).enumerate() {
            if level.shape()[0] != h || level.shape()[1] != w {
                return Err(ModelError::ShapeMismatch(format!(
                    "pyramid level {j} is {:?}, law requires ({h}, {w})",
                    &level.shape()[..2]
                )));
            }
        }
        Ok(levels)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Var)>) {
        self.stem.params(&format!("{prefix}.stem"), out);
        for (i, d) in self.downs.iter().enumerate() {
            d.params(&format!("{prefix}.down{i}"), out);
        }
        for (i, l) in self.laterals.iter().enumerate() {
            l.params(&format!("{prefix}.lateral{i}"), out);
        }
    }
}
