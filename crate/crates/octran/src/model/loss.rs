//! Masked binary cross-entropy.
//!
//! Empty scenes dominate occupancy grids, so each EMPTY target voxel is
//! dropped from the loss mean with probability LMP (occupied voxels are
//! always kept). LMP = 0 is the plain unmasked mean.

use rand::Rng;

use super::ModelError;
use crate::geometry::OccupancyGrid;
use crate::tensor::{Tensor, Var};

/// Row-major `[nx, ny, nz]` layout offset for grid index `(i, j, k)`.
fn logit_offset(dims: [usize; 3], idx: [usize; 3]) -> usize {
    (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]
}

/// Target and mask tensors in the logits' `[nx, ny, nz]` layout. Mask
/// draws happen in fixed (i, j, k) row-major order, one per empty
/// voxel, so the result is a pure function of the RNG state.
fn target_and_weight(
    target: &OccupancyGrid,
    lmp: f64,
    rng: &mut impl Rng,
) -> (Tensor, Tensor) {
    let dims = target.spec().dims;
    let n = dims[0] * dims[1] * dims[2];
    let mut t = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let off = logit_offset(dims, [i, j, k]);
                if target.get([i, j, k]) {
                    t[off] = 1.0;
                    w[off] = 1.0;
                } else {
                    w[off] = if rng.random::<f64>() < lmp { 0.0 } else { 1.0 };
                }
            }
        }
    }
    let shape = [dims[0], dims[1], dims[2]];
    (
        Tensor::from_vec(&shape, t).unwrap(),
        Tensor::from_vec(&shape, w).unwrap(),
    )
}

/// Mean sigmoid-BCE over the included voxels; scalar [`Var`] on the
/// logits' graph.
pub fn masked_bce_loss(
    logits: &Var,
    target: &OccupancyGrid,
    lmp: f64,
    rng: &mut impl Rng,
) -> Result<Var, ModelError> {
    if !(0.0..=1.0).contains(&lmp) {
        return Err(ModelError::InvalidConfig(format!("lmp {lmp} must be in [0, 1]")));
    }
    let dims = target.spec().dims;
    if logits.shape() != dims {
        return Err(ModelError::ShapeMismatch(format!(
            "logits {:?} vs target grid {:?}",
            logits.shape(),
            dims
        )));
    }
    let (t, w) = target_and_weight(target, lmp, rng);
    if w.sum() == 0.0 {
        return Err(ModelError::EmptyLoss);
    }
    Ok(logits.bce_with_logits(&t, &w)?)
}
