//! octran: a desk-scale occupancy-prediction pipeline.
//!
//! The crate is organized around five subsystems:
//!
//! - [`geometry`]: exact pinhole/stereo geometry — triangulation, inverse
//!   projection, the quadratic depth-error law, voxelization and IoU,
//!   plus the `OCGR` occupancy container and ASCII PLY export.
//! - [`tensor`]: a minimal dense f64 tensor engine with reverse-mode
//!   autodiff, direct-loop convolutions, a finite-difference gradient
//!   oracle and the `TNSR` serialization container.
//! - [`attention`]: QKV attention, learned-latent cross-attention,
//!   Fourier position encoding and column-wise pyramid chunking.
//! - [`scenes`]: a synthetic box-world generator with analytic disparity
//!   rendering, exact occupancy ground truth, PFM interchange and a
//!   shard container for datasets.
//! - [`model`]: the OCTraN network variants (B, V0, V1), masked BCE
//!   loss, Adam training, evaluation and checkpointing.
//!
//! Data-parallel inner loops (rendering, batch evaluation, dataset
//! generation) run on rayon when the default `parallel` feature is
//! enabled and fall back to sequential iteration otherwise. Both paths
//! produce bit-identical results; per-element work is independent and
//! every reduction keeps a fixed order.

pub mod attention;
pub mod flops;
pub mod formats;
pub mod geometry;
pub mod model;
pub mod parallel;
pub mod scenes;
pub mod tensor;
