//! Direct-loop convolution kernels, channels-last.
//!
//! Layouts: 2D inputs are `[H, W, Cin]` with kernels `[kh, kw, Cin, Cout]`;
//! 3D transpose inputs are `[X, Y, Z, Cin]` with kernels
//! `[kx, ky, kz, Cin, Cout]`. Output sizes follow the usual formulas:
//!
//! - conv:           `out = floor((in + 2*pad - k) / stride) + 1`
//! - transpose conv: `out = (in - 1)*stride + k - 2*pad`
//!
//! An im2col fast path for conv2d exists and is bit-compared against the
//! direct loops in tests (same per-output accumulation order).

use super::{Tensor, TensorError};
use crate::flops;

pub fn conv_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

pub fn conv_transpose_out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input == 0 {
        return None;
    }
    let grown = (input - 1) * stride + kernel;
    if grown < 2 * pad {
        return None;
    }
    Some(grown - 2 * pad)
}

fn conv2d_geometry(
    x: &Tensor,
    w: &Tensor,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize), TensorError> {
    if x.rank() != 3 || w.rank() != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let (h, wid, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, kcin, cout) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if kcin != cin {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let ho = conv_out_len(h, kh, stride.0, pad.0).ok_or(TensorError::InvalidShape {
        op: "conv2d",
        detail: format!("input {h} too small for kernel {kh}, stride {}, pad {}", stride.0, pad.0),
    })?;
    let wo = conv_out_len(wid, kw, stride.1, pad.1).ok_or(TensorError::InvalidShape {
        op: "conv2d",
        detail: format!("input {wid} too small for kernel {kw}, stride {}, pad {}", stride.1, pad.1),
    })?;
    Ok((h, wid, cin, kh, kw, cout, ho, wo))
}

/// 2D cross-correlation, direct loops.
pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor, TensorError> {
    let (h, wid, cin, kh, kw, cout, ho, wo) = conv2d_geometry(x, w, stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d-bias",
                lhs: vec![cout],
                rhs: b.shape().to_vec(),
            });
        }
    }
    flops::record("conv2d", (ho * wo * kh * kw * cin * cout) as u64);
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![0.0; ho * wo * cout];
    for oy in 0..ho {
        for ox in 0..wo {
            let dst = &mut out[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
            for ky in 0..kh {
                let iy = (oy * stride.0 + ky) as isize - pad.0 as isize;
                if iy < 0 || iy as usize >= h {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride.1 + kx) as isize - pad.1 as isize;
                    if ix < 0 || ix as usize >= wid {
                        continue;
                    }
                    let xoff = (iy as usize * wid + ix as usize) * cin;
                    let woff = (ky * kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let xv = xd[xoff + ci];
                        let wrow = &wd[woff + ci * cout..woff + (ci + 1) * cout];
                        for co in 0..cout {
                            dst[co] += xv * wrow[co];
                        }
                    }
                }
            }
            // bias last, matching the im2col path's matmul-then-bias order
            if let Some(b) = bias {
                for (v, &bv) in dst.iter_mut().zip(b.data()) {
                    *v += bv;
                }
            }
        }
    }
    Tensor::from_vec(&[ho, wo, cout], out)
}

/// im2col fast path; identical accumulation order to [`conv2d`].
pub fn conv2d_im2col(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Result<Tensor, TensorError> {
    let (h, wid, cin, kh, kw, cout, ho, wo) = conv2d_geometry(x, w, stride, pad)?;
    let xd = x.data();
    let mut cols = vec![0.0; ho * wo * kh * kw * cin];
    let k = kh * kw * cin;
    for oy in 0..ho {
        for ox in 0..wo {
            let base = (oy * wo + ox) * k;
            for ky in 0..kh {
                let iy = (oy * stride.0 + ky) as isize - pad.0 as isize;
                for kx in 0..kw {
                    let ix = (ox * stride.1 + kx) as isize - pad.1 as isize;
                    let dst = base + (ky * kw + kx) * cin;
                    if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < wid {
                        let src = (iy as usize * wid + ix as usize) * cin;
                        cols[dst..dst + cin].copy_from_slice(&xd[src..src + cin]);
                    }
                }
            }
        }
    }
    let cols = Tensor::from_vec(&[ho * wo, k], cols)?;
    let wmat = w.reshape(&[k, cout])?;
    let mut y = cols.matmul(&wmat)?;
    if let Some(b) = bias {
        let bd = b.data();
        for row in y.data_mut().chunks_mut(cout) {
            for (v, &bv) in row.iter_mut().zip(bd) {
                *v += bv;
            }
        }
    }
    y.reshape(&[ho, wo, cout])
}

/// Gradient of conv2d w.r.t. its input, kernel and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    stride: (usize, usize),
    pad: (usize, usize),
) -> (Tensor, Tensor, Tensor) {
    let (h, wid, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, _, cout) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (ho, wo) = (gout.shape()[0], gout.shape()[1]);
    let xd = x.data();
    let wd = w.data();
    let gd = gout.data();
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; cout];
    for oy in 0..ho {
        for ox in 0..wo {
            let g = &gd[(oy * wo + ox) * cout..(oy * wo + ox + 1) * cout];
            for (co, &gv) in g.iter().enumerate() {
                gb[co] += gv;
            }
            for ky in 0..kh {
                let iy = (oy * stride.0 + ky) as isize - pad.0 as isize;
                if iy < 0 || iy as usize >= h {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride.1 + kx) as isize - pad.1 as isize;
                    if ix < 0 || ix as usize >= wid {
                        continue;
                    }
                    let xoff = (iy as usize * wid + ix as usize) * cin;
                    let woff = (ky * kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let xv = xd[xoff + ci];
                        let mut acc = 0.0;
                        for co in 0..cout {
                            let gv = g[co];
                            acc += wd[woff + ci * cout + co] * gv;
                            gw[woff + ci * cout + co] += xv * gv;
                        }
                        gx[xoff + ci] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), gx).unwrap(),
        Tensor::from_vec(w.shape(), gw).unwrap(),
        Tensor::from_vec(&[cout], gb).unwrap(),
    )
}

/// 3D transposed convolution (scatter form), uniform stride/pad.
pub fn conv_transpose3d(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor, TensorError> {
    if x.rank() != 4 || w.rank() != 5 || x.shape()[3] != w.shape()[3] {
        return Err(TensorError::ShapeMismatch {
            op: "conv_transpose3d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let dims_in = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let k = [w.shape()[0], w.shape()[1], w.shape()[2]];
    let (cin, cout) = (w.shape()[3], w.shape()[4]);
    let mut dims_out = [0usize; 3];
    for a in 0..3 {
        dims_out[a] = conv_transpose_out_len(dims_in[a], k[a], stride, pad).ok_or_else(|| {
            TensorError::InvalidShape {
                op: "conv_transpose3d",
                detail: format!(
                    "axis {a}: input {} with kernel {}, stride {stride}, pad {pad} has no valid output size",
                    dims_in[a], k[a]
                ),
            }
        })?;
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose3d-bias",
                lhs: vec![cout],
                rhs: b.shape().to_vec(),
            });
        }
    }
    flops::record(
        "conv_transpose3d",
        (dims_in.iter().product::<usize>() * k.iter().product::<usize>() * cin * cout) as u64,
    );
    let xd = x.data();
    let wd = w.data();
    let out_len = dims_out.iter().product::<usize>() * cout;
    let mut out = vec![0.0; out_len];
    if let Some(b) = bias {
        for chunk in out.chunks_mut(cout) {
            chunk.copy_from_slice(b.data());
        }
    }
    let (oy_s, oz_s) = (dims_out[1] * dims_out[2], dims_out[2]);
    for ix in 0..dims_in[0] {
        for iy in 0..dims_in[1] {
            for iz in 0..dims_in[2] {
                let xoff = ((ix * dims_in[1] + iy) * dims_in[2] + iz) * cin;
                for kx in 0..k[0] {
                    let ox = (ix * stride + kx) as isize - pad as isize;
                    if ox < 0 || ox as usize >= dims_out[0] {
                        continue;
                    }
                    for ky in 0..k[1] {
                        let oy = (iy * stride + ky) as isize - pad as isize;
                        if oy < 0 || oy as usize >= dims_out[1] {
                            continue;
                        }
                        for kz in 0..k[2] {
                            let oz = (iz * stride + kz) as isize - pad as isize;
                            if oz < 0 || oz as usize >= dims_out[2] {
                                continue;
                            }
                            let ooff = (ox as usize * oy_s + oy as usize * oz_s + oz as usize) * cout;
                            let woff = (((kx * k[1] + ky) * k[2] + kz) * cin) * cout;
                            for ci in 0..cin {
                                let xv = xd[xoff + ci];
                                let wrow = &wd[woff + ci * cout..woff + (ci + 1) * cout];
                                for co in 0..cout {
                                    out[ooff + co] += xv * wrow[co];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[dims_out[0], dims_out[1], dims_out[2], cout], out)
}

/// Gradient of conv_transpose3d w.r.t. input, kernel and bias.
pub fn conv_transpose3d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor, Tensor) {
    let dims_in = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let k = [w.shape()[0], w.shape()[1], w.shape()[2]];
    let (cin, cout) = (w.shape()[3], w.shape()[4]);
    let dims_out = [gout.shape()[0], gout.shape()[1], gout.shape()[2]];
    let xd = x.data();
    let wd = w.data();
    let gd = gout.data();
    let mut gx = vec![0.0; xd.len()];
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; cout];
    for chunk in gd.chunks(cout) {
        for (co, &gv) in chunk.iter().enumerate() {
            gb[co] += gv;
        }
    }
    let (oy_s, oz_s) = (dims_out[1] * dims_out[2], dims_out[2]);
    for ix in 0..dims_in[0] {
        for iy in 0..dims_in[1] {
            for iz in 0..dims_in[2] {
                let xoff = ((ix * dims_in[1] + iy) * dims_in[2] + iz) * cin;
                for kx in 0..k[0] {
                    let ox = (ix * stride + kx) as isize - pad as isize;
                    if ox < 0 || ox as usize >= dims_out[0] {
                        continue;
                    }
                    for ky in 0..k[1] {
                        let oy = (iy * stride + ky) as isize - pad as isize;
                        if oy < 0 || oy as usize >= dims_out[1] {
                            continue;
                        }
                        for kz in 0..k[2] {
                            let oz = (iz * stride + kz) as isize - pad as isize;
                            if oz < 0 || oz as usize >= dims_out[2] {
                                continue;
                            }
                            let ooff = (ox as usize * oy_s + oy as usize * oz_s + oz as usize) * cout;
                            let woff = (((kx * k[1] + ky) * k[2] + kz) * cin) * cout;
                            for ci in 0..cin {
                                let xv = xd[xoff + ci];
                                let mut acc = 0.0;
                                for co in 0..cout {
                                    let gv = gd[ooff + co];
                                    acc += wd[woff + ci * cout + co] * gv;
                                    gw[woff + ci * cout + co] += xv * gv;
                                }
                                gx[xoff + ci] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(x.shape(), gx).unwrap(),
        Tensor::from_vec(w.shape(), gw).unwrap(),
        Tensor::from_vec(&[cout], gb).unwrap(),
    )
}

/// Nearest-neighbour upsampling of an `[H, W, C]` tensor by integer factors.
pub fn upsample_nearest2d(x: &Tensor, fy: usize, fx: usize) -> Result<Tensor, TensorError> {
    if x.rank() != 3 || fy == 0 || fx == 0 {
        return Err(TensorError::InvalidShape {
            op: "upsample_nearest2d",
            detail: format!("shape {:?}, factors ({fy}, {fx})", x.shape()),
        });
    }
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = vec![0.0; h * fy * w * fx * c];
    let xd = x.data();
    for oy in 0..h * fy {
        for ox in 0..w * fx {
            let src = ((oy / fy) * w + ox / fx) * c;
            let dst = (oy * w * fx + ox) * c;
            out[dst..dst + c].copy_from_slice(&xd[src..src + c]);
        }
    }
    Tensor::from_vec(&[h * fy, w * fx, c], out)
}

/// Gradient of nearest-neighbour upsampling: sum-pool the upstream grad.
pub fn upsample_nearest2d_backward(gout: &Tensor, fy: usize, fx: usize, in_shape: &[usize]) -> Tensor {
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let gw_total = w * fx;
    let mut gx = vec![0.0; h * w * c];
    let gd = gout.data();
    for oy in 0..h * fy {
        for ox in 0..gw_total {
            let dst = ((oy / fy) * w + ox / fx) * c;
            let src = (oy * gw_total + ox) * c;
            for ci in 0..c {
                gx[dst + ci] += gd[src + ci];
            }
        }
    }
    Tensor::from_vec(in_shape, gx).unwrap()
}
