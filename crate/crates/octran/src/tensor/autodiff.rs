//! Trace-based reverse-mode differentiation.
//!
//! [`Var`] wraps a [`Tensor`] in a shared graph node. Every op records
//! its parents and a backward closure that maps the upstream gradient
//! to per-parent gradient contributions. Node ids increase with
//! creation order, so reverse-id order is a valid topological order for
//! the backward sweep.

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::conv::{
    conv2d, conv2d_backward, conv_transpose3d, conv_transpose3d_backward, upsample_nearest2d,
    upsample_nearest2d_backward,
};
use super::{Tensor, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

type BackFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    id: u64,
    value: Tensor,
    grad: Tensor,
    parents: Vec<Var>,
    backward: Option<BackFn>,
}

/// A tensor-valued node in the differentiation trace.
#[derive(Clone)]
pub struct Var {
    inner: Rc<RefCell<Node>>,
}

impl Var {
    /// New leaf (parameter or constant input).
    pub fn leaf(value: Tensor) -> Self {
        Self::node(value, vec![], None)
    }

    fn node(value: Tensor, parents: Vec<Var>, backward: Option<BackFn>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Var {
            inner: Rc::new(RefCell::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                value,
                grad,
                parents,
                backward,
            })),
        }
    }

    pub fn value(&self) -> Ref<'_, Tensor> {
        Ref::map(self.inner.borrow(), |n| &n.value)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.inner.borrow().value.clone()
    }

    pub fn grad(&self) -> Tensor {
        self.inner.borrow().grad.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn reset_grad(&self) {
        let mut n = self.inner.borrow_mut();
        n.grad = Tensor::zeros(n.value.shape());
    }

    /// Overwrite a leaf's value in place (optimizer updates).
    pub fn set_value(&self, value: Tensor) {
        let mut n = self.inner.borrow_mut();
        assert_eq!(n.value.shape(), value.shape(), "set_value must preserve shape");
        n.value = value;
    }

    /// Accumulate gradients of every node reachable from `self`,
    /// seeding with all-ones (use a scalar output for a plain gradient).
    pub fn backward(&self) {
        let mut reachable: Vec<Rc<RefCell<Node>>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.inner.clone()];
        while let Some(n) = stack.pop() {
            let id = n.borrow().id;
            if !seen.insert(id) {
                continue;
            }
            for p in &n.borrow().parents {
                stack.push(p.inner.clone());
            }
            reachable.push(n);
        }
        reachable.sort_by_key(|n| std::cmp::Reverse(n.borrow().id));

        {
            let mut root = self.inner.borrow_mut();
            let shape = root.value.shape().to_vec();
            root.grad = Tensor::full(&shape, 1.0);
        }
        for n in reachable {
            let (grads, parents) = {
                let node = n.borrow();
                match &node.backward {
                    Some(f) => (f(&node.grad), node.parents.clone()),
                    None => continue,
                }
            };
            debug_assert_eq!(grads.len(), parents.len());
            for (p, g) in parents.iter().zip(grads) {
                let mut pn = p.inner.borrow_mut();
                pn.grad = pn.grad.add(&g).expect("gradient shape mismatch");
            }
        }
    }

    // ---- primitive ops ----

    pub fn add(&self, rhs: &Var) -> Result<Var, TensorError> {
        let v = self.value().add(&rhs.value())?;
        Ok(Var::node(
            v,
            vec![self.clone(), rhs.clone()],
            Some(Box::new(|g: &Tensor| vec![g.clone(), g.clone()])),
        ))
    }

    pub fn sub(&self, rhs: &Var) -> Result<Var, TensorError> {
        let v = self.value().sub(&rhs.value())?;
        Ok(Var::node(
            v,
            vec![self.clone(), rhs.clone()],
            Some(Box::new(|g: &Tensor| vec![g.clone(), g.scale(-1.0)])),
        ))
    }

    pub fn mul(&self, rhs: &Var) -> Result<Var, TensorError> {
        let v = self.value().mul(&rhs.value())?;
        let (a, b) = (self.to_tensor(), rhs.to_tensor());
        Ok(Var::node(
            v,
            vec![self.clone(), rhs.clone()],
            Some(Box::new(move |g: &Tensor| {
                vec![g.mul(&b).unwrap(), g.mul(&a).unwrap()]
            })),
        ))
    }

    pub fn scale(&self, c: f64) -> Var {
        let v = self.value().scale(c);
        Var::node(
            v,
            vec![self.clone()],
            Some(Box::new(move |g: &Tensor| vec![g.scale(c)])),
        )
    }

    pub fn relu(&self) -> Var {
        let v = self.value().relu();
        let x = self.to_tensor();
        Var::node(
            v,
            vec![self.clone()],
            Some(Box::new(move |g: &Tensor| {
                vec![g
                    .zip(&x, "relu_back", |gv, xv| if xv > 0.0 { gv } else { 0.0 })
                    .unwrap()]
            })),
        )
    }

    pub fn sigmoid(&self) -> Var {
        let v = self.value().sigmoid();
        let s = v.clone();
        Var::node(
            v,
            vec![self.clone()],
            Some(Box::new(move |g: &Tensor| {
                vec![g.zip(&s, "sigmoid_back", |gv, sv| gv * sv * (1.0 - sv)).unwrap()]
            })),
        )
    }

    pub fn matmul(&self, rhs: &Var) -> Result<Var, TensorError> {
        let v = self.value().matmul(&rhs.value())?;
        let (a, b) = (self.to_tensor(), rhs.to_tensor());
        Ok(Var::node(
            v,
            vec![self.clone(), rhs.clone()],
            Some(Box::new(move |g: &Tensor| {
                let ga = g.matmul(&b.transpose().unwrap()).unwrap();
                let gb = a.transpose().unwrap().matmul(g).unwrap();
                vec![ga, gb]
            })),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var, TensorError> {
        let v = self.value().reshape(shape)?;
        let orig = self.shape();
        Ok(Var::node(
            v,
            vec![self.clone()],
            Some(Box::new(move |g: &Tensor| vec![g.reshape(&orig).unwrap()])),
        ))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Var, TensorError> {
        let v = self.value().permute(axes)?;
        let mut inverse = vec![0usize; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Ok(Var::node(
            v,
            vec![self.clone()],
            Some(Box::new(move |g: &Tensor| vec![g.permute(&inverse).unwrap()])),
        ))
    }

    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var, TensorError> {
        let v = self.value().slice(axis, start, end)?;
        let parent_shape = self.shape();
        Ok(Var::node(
            v,
            vec![self.clone()],
            Some(Box::new(move |g: &Tensor| {
                let mut gp = Tensor::zeros(&parent_shape);
                let outer: usize = parent_shape[..axis].iter().product();
                let inner: usize = parent_shape[axis + 1..].iter().product();
                let n = parent_shape[axis];
                let m = end - start;
                let gd = g.data();
                for o in 0..outer {
                    let dst = o * n * inner + start * inner;
                    let src = o * m * inner;
                    gp.data_mut()[dst..dst + m * inner].copy_from_slice(&gd[src..src + m * inner]);
                }
                vec![gp]
            })),
        ))
    }

    pub fn concat(axis: usize, parts: &[&Var]) -> Result<Var, TensorError> {
        let tensors: Vec<Tensor> = parts.iter().map(|p| p.to_tensor()).collect();
        let refs: Vec<&Tensor> = tensors.iter().collect();
        let v = Tensor::concat(axis, &refs)?;
        let sizes: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let parents: Vec<Var> = parts.iter().map(|p| (*p).clone()).collect();
        Ok(Var::node(
            v,
            parents,
            Some(Box::new(move |g: &Tensor| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut off = 0;
                for &s in &sizes {
                    out.push(g.slice(axis, off, off + s).unwrap());
                    off += s;
                }
                out
            })),
        ))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var, TensorError> {
        let s = self.value().softmax(axis)?;
        let sv = s.clone();
        Ok(Var::node(
            s,
            vec![self.clone()],
            Some(Box::new(move |g: &Tensor| {
                // dx = s * (g - sum_lane(g * s))
                let shape = sv.shape().to_vec();
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let n = shape[axis];
                let mut gx = vec![0.0; sv.len()];
                let (sd, gd) = (sv.data(), g.data());
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let mut dot = 0.0;
                        for k in 0..n {
                            dot += gd[base + k * inner] * sd[base + k * inner];
                        }
                        for k in 0..n {
                            let idx = base + k * inner;
                            gx[idx] = sd[idx] * (gd[idx] - dot);
                        }
                    }
                }
                vec![Tensor::from_vec(&shape, gx).unwrap()]
            })),
        ))
    }

    /// Mean over all elements, producing a rank-0 scalar.
    pub fn mean_all(&self) -> Var {
        let n = self.len() as f64;
        let v = Tensor::scalar(self.value().mean());
        let shape = self.shape();
        Var::node(
            v,
            vec![self.clone()],
            Some(Box::new(move |g: &Tensor| {
                vec![Tensor::full(&shape, g.item() / n)]
            })),
        )
    }

    /// Broadcast-add a `[C]` bias over the last axis.
    pub fn add_bias(&self, bias: &Var) -> Result<Var, TensorError> {
        let shape = self.shape();
        let c = *shape.last().ok_or(TensorError::InvalidShape {
            op: "add_bias",
            detail: "rank-0 input".into(),
        })?;
        if bias.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: shape,
                rhs: bias.shape(),
            });
        }
        let bv = bias.to_tensor();
        let mut v = self.to_tensor();
        for row in v.data_mut().chunks_mut(c) {
            for (x, &b) in row.iter_mut().zip(bv.data()) {
                *x += b;
            }
        }
        Ok(Var::node(
            v,
            vec![self.clone(), bias.clone()],
            Some(Box::new(move |g: &Tensor| {
                let mut gb = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (acc, &gv) in gb.iter_mut().zip(row) {
                        *acc += gv;
                    }
                }
                vec![g.clone(), Tensor::from_vec(&[c], gb).unwrap()]
            })),
        ))
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&self, gain: &Var, bias: &Var, eps: f64) -> Result<Var, TensorError> {
        let shape = self.shape();
        let c = *shape.last().ok_or(TensorError::InvalidShape {
            op: "layer_norm",
            detail: "rank-0 input".into(),
        })?;
        if gain.shape() != [c] || bias.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: shape,
                rhs: gain.shape(),
            });
        }
        let x = self.to_tensor();
        let gv = gain.to_tensor();
        let bv = bias.to_tensor();
        let lanes = x.len() / c;
        let mut out = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut rstds = vec![0.0; lanes];
        for l in 0..lanes {
            let row = &x.data()[l * c..(l + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            rstds[l] = rstd;
            for i in 0..c {
                let h = (row[i] - mu) * rstd;
                xhat[l * c + i] = h;
                out[l * c + i] = h * gv.data()[i] + bv.data()[i];
            }
        }
        let value = Tensor::from_vec(&shape, out)?;
        let gain_t = gv.clone();
        let in_shape = shape.clone();
        Ok(Var::node(
            value,
            vec![self.clone(), gain.clone(), bias.clone()],
            Some(Box::new(move |g: &Tensor| {
                let gd = g.data();
                let mut gx = vec![0.0; gd.len()];
                let mut ggain = vec![0.0; c];
                let mut gbias = vec![0.0; c];
                for l in 0..lanes {
                    let rstd = rstds[l];
                    let h = &xhat[l * c..(l + 1) * c];
                    let gl = &gd[l * c..(l + 1) * c];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for i in 0..c {
                        let dh = gl[i] * gain_t.data()[i];
                        sum_dh += dh;
                        sum_dh_h += dh * h[i];
                        ggain[i] += gl[i] * h[i];
                        gbias[i] += gl[i];
                    }
                    for i in 0..c {
                        let dh = gl[i] * gain_t.data()[i];
                        gx[l * c + i] =
                            rstd * (dh - sum_dh / c as f64 - h[i] * sum_dh_h / c as f64);
                    }
                }
                vec![
                    Tensor::from_vec(&in_shape, gx).unwrap(),
                    Tensor::from_vec(&[c], ggain).unwrap(),
                    Tensor::from_vec(&[c], gbias).unwrap(),
                ]
            })),
        ))
    }

    pub fn conv2d(
        &self,
        w: &Var,
        bias: &Var,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var, TensorError> {
        let v = conv2d(&self.value(), &w.value(), Some(&bias.value()), stride, pad)?;
        let (x, wt) = (self.to_tensor(), w.to_tensor());
        Ok(Var::node(
            v,
            vec![self.clone(), w.clone(), bias.clone()],
            Some(Box::new(move |g: &Tensor| {
                let (gx, gw, gb) = conv2d_backward(&x, &wt, g, stride, pad);
                vec![gx, gw, gb]
            })),
        ))
    }

    pub fn conv_transpose3d(
        &self,
        w: &Var,
        bias: &Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let v = conv_transpose3d(&self.value(), &w.value(), Some(&bias.value()), stride, pad)?;
        let (x, wt) = (self.to_tensor(), w.to_tensor());
        Ok(Var::node(
            v,
            vec![self.clone(), w.clone(), bias.clone()],
            Some(Box::new(move |g: &Tensor| {
                let (gx, gw, gb) = conv_transpose3d_backward(&x, &wt, g, stride, pad);
                vec![gx, gw, gb]
            })),
        ))
    }

    pub fn upsample_nearest2d(&self, fy: usize, fx: usize) -> Result<Var, TensorError> {
        let v = upsample_nearest2d(&self.value(), fy, fx)?;
        let in_shape = self.shape();
        Ok(Var::node(
            v,
            vec![self.clone()],
            Some(Box::new(move |g: &Tensor| {
                vec![upsample_nearest2d_backward(g, fy, fx, &in_shape)]
            })),
        ))
    }

    /// Weighted binary cross-entropy on logits: mean over elements with
    /// `weight > 0` of `BCE(sigmoid(l), t)`, computed in the stable
    /// `max(l,0) - l*t + ln(1 + exp(-|l|))` form. `weight_sum` must be
    /// positive.
    pub fn bce_with_logits(&self, target: &Tensor, weight: &Tensor) -> Result<Var, TensorError> {
        let logits = self.to_tensor();
        if logits.shape() != target.shape() || logits.shape() != weight.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: logits.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let wsum = weight.sum();
        if wsum <= 0.0 {
            return Err(TensorError::InvalidShape {
                op: "bce_with_logits",
                detail: "weight sum must be positive".into(),
            });
        }
        let mut acc = 0.0;
        for ((&l, &t), &w) in logits.data().iter().zip(target.data()).zip(weight.data()) {
            if w > 0.0 {
                acc += w * (l.max(0.0) - l * t + (-(l.abs())).exp().ln_1p());
            }
        }
        let value = Tensor::scalar(acc / wsum);
        let (t, w) = (target.clone(), weight.clone());
        Ok(Var::node(
            value,
            vec![self.clone()],
            Some(Box::new(move |g: &Tensor| {
                let gs = g.item() / wsum;
                let mut gl = vec![0.0; logits.len()];
                for (i, ((&l, &tv), &wv)) in
                    logits.data().iter().zip(t.data()).zip(w.data()).enumerate()
                {
                    if wv > 0.0 {
                        let s = 1.0 / (1.0 + (-l).exp());
                        gl[i] = gs * wv * (s - tv);
                    }
                }
                vec![Tensor::from_vec(logits.shape(), gl).unwrap()]
            })),
        ))
    }
}
