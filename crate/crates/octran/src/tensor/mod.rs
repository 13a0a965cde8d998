//! Dense f64 tensors with the kernels the occupancy network needs.
//!
//! Everything is row-major, last index fastest. Reductions use a fixed
//! sequential order so identical inputs produce bit-identical outputs.

mod autodiff;
mod conv;
mod fd;
mod tnsr;

pub use autodiff::Var;
pub use conv::{conv2d, conv2d_im2col, conv_out_len, conv_transpose3d, conv_transpose_out_len};
pub use fd::finite_difference_grad;
pub use tnsr::{read_tnsr, write_tnsr};

use crate::flops;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape for {op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },
    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

/// Dense N-dimensional array of f64, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        if numel(shape) != data.len() {
            return Err(TensorError::InvalidShape {
                op: "from_vec",
                detail: format!("shape {:?} needs {} values, got {}", shape, numel(shape), data.len()),
            });
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; numel(shape)] }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![], data: vec![value] }
    }

    /// Seeded Gaussian tensor (Box-Muller), mean 0.
    pub fn randn(shape: &[usize], std: f64, rng: &mut impl rand::Rng) -> Self {
        let data = (0..numel(shape))
            .map(|_| {
                let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
                let u2: f64 = rng.random();
                std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        Self { shape: shape.to_vec(), data }
    }

    /// 2D identity matrix.
    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Extract the single value of a rank-0 or one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor with {} elements", self.data.len());
        self.data[0]
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1usize; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.shape.len());
        let strides = self.strides();
        let mut off = 0;
        for (i, &d) in idx.iter().enumerate() {
            debug_assert!(d < self.shape[i]);
            off += d * strides[i];
        }
        self.data[off]
    }

    pub fn check_finite(&self, op: &'static str) -> Result<(), TensorError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, rhs: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        if self.shape != rhs.shape {
            return Err(TensorError::ShapeMismatch { op, lhs: self.shape.clone(), rhs: rhs.shape.clone() });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.zip(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.zip(rhs, "sub", |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        self.zip(rhs, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(|v| 1.0 / (1.0 + (-v).exp()))
    }

    /// Sum of all elements, fixed left-to-right order.
    pub fn sum(&self) -> f64 {
        let mut acc = 0.0;
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// 2D matrix product. Records `p*q*r` MACs in the flop ledger.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor, TensorError> {
        if self.rank() != 2 || rhs.rank() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let (p, q) = (self.shape[0], self.shape[1]);
        let r = rhs.shape[1];
        flops::record("matmul", (p * q * r) as u64);
        let mut out = vec![0.0; p * r];
        for i in 0..p {
            for k in 0..q {
                let a = self.data[i * q + k];
                let row = &rhs.data[k * r..(k + 1) * r];
                let dst = &mut out[i * r..(i + 1) * r];
                for j in 0..r {
                    dst[j] += a * row[j];
                }
            }
        }
        Ok(Tensor { shape: vec![p, r], data: out })
    }

    /// 2D transpose.
    pub fn transpose(&self) -> Result<Tensor, TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::InvalidShape {
                op: "transpose",
                detail: format!("expected rank 2, got {:?}", self.shape),
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor { shape: vec![c, r], data: out })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        if numel(shape) != self.data.len() {
            return Err(TensorError::InvalidShape {
                op: "reshape",
                detail: format!("{:?} -> {:?} changes element count", self.shape, shape),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor, TensorError> {
        let rank = self.rank();
        if axes.len() != rank || {
            let mut seen = vec![false; rank];
            axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
        } {
            return Err(TensorError::InvalidShape {
                op: "permute",
                detail: format!("axes {:?} is not a permutation of 0..{}", axes, rank),
            });
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let in_strides = self.strides();
        let mut out = vec![0.0; self.data.len()];
        let mut idx = vec![0usize; rank];
        for slot in out.iter_mut() {
            let mut off = 0;
            for (i, &a) in axes.iter().enumerate() {
                off += idx[i] * in_strides[a];
            }
            *slot = self.data[off];
            for i in (0..rank).rev() {
                idx[i] += 1;
                if idx[i] < out_shape[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        Ok(Tensor { shape: out_shape, data: out })
    }

    /// Decompose the shape around `axis` into (outer, axis_len, inner).
    fn lanes(&self, axis: usize) -> Result<(usize, usize, usize), TensorError> {
        if axis >= self.rank() {
            return Err(TensorError::InvalidAxis { axis, rank: self.rank() });
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }

    /// Numerically stable softmax along `axis` (max subtraction).
    pub fn softmax(&self, axis: usize) -> Result<Tensor, TensorError> {
        let (outer, n, inner) = self.lanes(axis)?;
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut m = f64::NEG_INFINITY;
                for k in 0..n {
                    m = m.max(out[base + k * inner]);
                }
                let mut z = 0.0;
                for k in 0..n {
                    let e = (out[base + k * inner] - m).exp();
                    out[base + k * inner] = e;
                    z += e;
                }
                for k in 0..n {
                    out[base + k * inner] /= z;
                }
            }
        }
        Ok(Tensor { shape: self.shape.clone(), data: out })
    }

    /// Half-open slice `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor, TensorError> {
        let (outer, n, inner) = self.lanes(axis)?;
        if start > end || end > n {
            return Err(TensorError::InvalidShape {
                op: "slice",
                detail: format!("[{start}, {end}) out of range for axis length {n}"),
            });
        }
        let m = end - start;
        let mut shape = self.shape.clone();
        shape[axis] = m;
        let mut out = Vec::with_capacity(outer * m * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            out.extend_from_slice(&self.data[base..base + m * inner]);
        }
        Ok(Tensor { shape, data: out })
    }

    /// Concatenate along `axis`; all other dims must agree.
    pub fn concat(axis: usize, parts: &[&Tensor]) -> Result<Tensor, TensorError> {
        let first = parts.first().ok_or(TensorError::InvalidShape {
            op: "concat",
            detail: "no tensors given".into(),
        })?;
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { axis, rank });
        }
        let mut axis_total = 0;
        for p in parts {
            if p.rank() != rank
                || p.shape.iter().enumerate().any(|(i, &d)| i != axis && d != first.shape[i])
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            axis_total += p.shape[axis];
        }
        let mut shape = first.shape.clone();
        shape[axis] = axis_total;
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let n = p.shape[axis];
                out.extend_from_slice(&p.data[o * n * inner..(o + 1) * n * inner]);
            }
        }
        Ok(Tensor { shape, data: out })
    }
}
