//! Analytic disparity and shading renderer.
//!
//! Pixel `(u, v)` casts the ray `((u−o_x)/f_x, (v−o_y)/f_y, 1)` so that
//! back-projecting the rendered disparity with the triangulation
//! formula lands exactly on the intersected surface. Disparity values
//! are quantized to f32 so PFM round-trips are lossless.

use super::Scene;
use crate::geometry::{DisparityMap, StereoCamera};
use crate::tensor::Tensor;

/// Nearest intersection of the pixel ray with any box: `(z, box index)`.
fn nearest_hit(scene: &Scene, dir: [f64; 3]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (bi, b) in scene.boxes.iter().enumerate() {
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        let mut miss = false;
        for a in 0..3 {
            if dir[a] == 0.0 {
                if 0.0 < b.min[a] || 0.0 > b.max[a] {
                    miss = true;
                    break;
                }
            } else {
                let t0 = b.min[a] / dir[a];
                let t1 = b.max[a] / dir[a];
                let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
                t_enter = t_enter.max(lo);
                t_exit = t_exit.min(hi);
            }
        }
        if miss || t_exit < t_enter || t_enter <= 1e-9 {
            continue;
        }
        // dir.z == 1, so the depth equals the ray parameter
        if best.map_or(true, |(z, _)| t_enter < z) {
            best = Some((t_enter, bi));
        }
    }
    best
}

fn ray_dir(cam: &StereoCamera, u: u32, v: u32) -> [f64; 3] {
    [
        (u as f64 - cam.o_x) / cam.f_x,
        (v as f64 - cam.o_y) / cam.f_y,
        1.0,
    ]
}

fn disparity_row(scene: &Scene, cam: &StereoCamera, v: u32) -> Vec<f64> {
    (0..cam.width)
        .map(|u| match nearest_hit(scene, ray_dir(cam, u, v)) {
            Some((z, _)) => (cam.b * cam.f_x / z) as f32 as f64,
            None => 0.0,
        })
        .collect()
}

/// Render per-pixel disparity; background pixels are 0.
pub fn render_disparity(scene: &Scene, cam: &StereoCamera) -> DisparityMap {
    let rows = crate::parallel::map_indexed(cam.height as usize, |v| {
        disparity_row(scene, cam, v as u32)
    });
    DisparityMap::new(cam.width, cam.height, rows.concat()).unwrap()
}

/// Sequential reference path for [`render_disparity`]; bit-identical.
pub fn render_disparity_sequential(scene: &Scene, cam: &StereoCamera) -> DisparityMap {
    let rows: Vec<Vec<f64>> = (0..cam.height).map(|v| disparity_row(scene, cam, v)).collect();
    DisparityMap::new(cam.width, cam.height, rows.concat()).unwrap()
}

/// Deterministic RGB shading: per-box flat albedo attenuated with
/// depth, constant dim background. Shape `[H, W, 3]`.
pub fn render_image(scene: &Scene, cam: &StereoCamera) -> Tensor {
    let w = cam.width as usize;
    let rows = crate::parallel::map_indexed(cam.height as usize, |v| {
        let mut row = vec![0.0; w * 3];
        for u in 0..cam.width {
            let px = &mut row[u as usize * 3..u as usize * 3 + 3];
            match nearest_hit(scene, ray_dir(cam, u, v as u32)) {
                Some((z, bi)) => {
                    let shade = 1.0 / (1.0 + 0.12 * z);
                    let albedo = scene.boxes[bi].albedo;
                    for c in 0..3 {
                        px[c] = albedo[c] * shade;
                    }
                }
                None => {
                    let horizon = 0.02 + 0.05 * (v as f64 / cam.height as f64);
                    px.copy_from_slice(&[horizon, horizon, horizon]);
                }
            }
        }
        row
    });
    Tensor::from_vec(&[cam.height as usize, w, 3], rows.concat()).unwrap()
}
