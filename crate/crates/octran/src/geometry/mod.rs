//! Exact pinhole/stereo geometry.
//!
//! Camera frame: x right, y down, z forward. Triangulation maps a pixel
//! `(u, v)` with disparity `d > 0` to
//! `(b(u−o_x)/d, b·f_x·(v−o_y)/(f_y·d), b·f_x/d)`; disparity 0 means
//! "no measurement". All geometry is double precision.

mod ocgr;
mod ply;

pub use ocgr::{read_ocgr, write_ocgr, OCGR_VERSION};
pub use ply::{write_ply_grid_centroids, write_ply_points};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("no-depth: disparity must be positive, got {0}")]
    NoDepth(f64),
    #[error("out-of-frame: pixel ({u}, {v}) outside {width}x{height} sensor")]
    OutOfFrame { u: f64, v: f64, width: u32, height: u32 },
    #[error("behind-camera: z = {0} is not positive")]
    BehindCamera(f64),
    #[error("invalid-depth: z = {0} is not positive")]
    InvalidDepth(f64),
    #[error("invalid disparity perturbation {0} (must be >= 0)")]
    InvalidDisparityDelta(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid disparity map: {0}")]
    InvalidDisparity(String),
    #[error("disparity map is {got_w}x{got_h} but camera sensor is {want_w}x{want_h}")]
    DimensionMismatch { got_w: u32, got_h: u32, want_w: u32, want_h: u32 },
    #[error("occupancy grids have different specs")]
    SpecMismatch,
}

/// Pinhole camera with a virtual stereo baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoCamera {
    pub f_x: f64,
    pub f_y: f64,
    pub o_x: f64,
    pub o_y: f64,
    /// Virtual baseline in meters.
    pub b: f64,
    pub width: u32,
    pub height: u32,
}

impl StereoCamera {
    pub fn new(
        f_x: f64,
        f_y: f64,
        o_x: f64,
        o_y: f64,
        b: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(f_x > 0.0 && f_y > 0.0 && b > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths and baseline must be positive (f_x={f_x}, f_y={f_y}, b={b})"
            )));
        }
        if !(0.0..width as f64).contains(&o_x) || !(0.0..height as f64).contains(&o_y) {
            return Err(GeometryError::InvalidCamera(format!(
                "principal point ({o_x}, {o_y}) outside {width}x{height} sensor"
            )));
        }
        Ok(Self { f_x, f_y, o_x, o_y, b, width, height })
    }

    fn in_frame(&self, u: f64, v: f64) -> bool {
        (0.0..self.width as f64).contains(&u) && (0.0..self.height as f64).contains(&v)
    }
}

/// Back-project pixel `(u, v)` with disparity `d` into the camera frame.
pub fn triangulate(cam: &StereoCamera, u: f64, v: f64, d: f64) -> Result<[f64; 3], GeometryError> {
    if d <= 0.0 {
        return Err(GeometryError::NoDepth(d));
    }
    if !cam.in_frame(u, v) {
        return Err(GeometryError::OutOfFrame { u, v, width: cam.width, height: cam.height });
    }
    Ok([
        cam.b * (u - cam.o_x) / d,
        cam.b * cam.f_x * (v - cam.o_y) / (cam.f_y * d),
        cam.b * cam.f_x / d,
    ])
}

/// Exact inverse of [`triangulate`]: the unique `(u, v, d)` that
/// back-projects to `p`.
pub fn project(cam: &StereoCamera, p: [f64; 3]) -> Result<(f64, f64, f64), GeometryError> {
    let [x, y, z] = p;
    if z <= 0.0 {
        return Err(GeometryError::BehindCamera(z));
    }
    let d = cam.b * cam.f_x / z;
    let u = cam.o_x + x * d / cam.b;
    let v = cam.o_y + y * cam.f_y / z;
    Ok((u, v, d))
}

/// First-order depth error from a disparity perturbation:
/// `Δz = z²·Δd / (b·f_x)`.
pub fn depth_error(cam: &StereoCamera, z: f64, delta_d: f64) -> Result<f64, GeometryError> {
    if z <= 0.0 {
        return Err(GeometryError::InvalidDepth(z));
    }
    if delta_d < 0.0 {
        return Err(GeometryError::InvalidDisparityDelta(delta_d));
    }
    Ok(z * z * delta_d / (cam.b * cam.f_x))
}

/// Per-pixel disparity in pixels; 0 (or a masked-out pixel) means "no
/// measurement". Values should be f32-representable if the map is going
/// to round-trip losslessly through PFM files.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    pub width: u32,
    pub height: u32,
    values: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl DisparityMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self, GeometryError> {
        if values.len() != (width as usize) * (height as usize) {
            return Err(GeometryError::InvalidDisparity(format!(
                "{} values for {width}x{height} map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(GeometryError::InvalidDisparity(
                "values must be finite and non-negative".into(),
            ));
        }
        Ok(Self { width, height, values, mask: None })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self { width, height, values: vec![0.0; (width * height) as usize], mask: None }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self, GeometryError> {
        if mask.len() != self.values.len() {
            return Err(GeometryError::InvalidDisparity("mask length mismatch".into()));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.values[(v * self.width + u) as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, d: f64) {
        self.values[(v * self.width + u) as usize] = d;
    }

    /// Pixel carries a depth measurement.
    pub fn is_valid(&self, u: u32, v: u32) -> bool {
        let i = (v * self.width + u) as usize;
        self.values[i] > 0.0 && self.mask.as_ref().map_or(true, |m| m[i])
    }

    pub fn valid_count(&self) -> usize {
        (0..self.height)
            .flat_map(|v| (0..self.width).map(move |u| (u, v)))
            .filter(|&(u, v)| self.is_valid(u, v))
            .count()
    }
}

/// Points in the camera frame, z > 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

/// One point per valid pixel, row-major pixel order.
pub fn disparity_to_pointcloud(
    cam: &StereoCamera,
    dm: &DisparityMap,
) -> Result<PointCloud, GeometryError> {
    if dm.width != cam.width || dm.height != cam.height {
        return Err(GeometryError::DimensionMismatch {
            got_w: dm.width,
            got_h: dm.height,
            want_w: cam.width,
            want_h: cam.height,
        });
    }
    let rows = crate::parallel::map_indexed(dm.height as usize, |v| {
        let v = v as u32;
        let mut pts = Vec::new();
        for u in 0..dm.width {
            if dm.is_valid(u, v) {
                // d > 0 and (u, v) in frame by construction
                pts.push(triangulate(cam, u as f64, v as f64, dm.get(u, v)).unwrap());
            }
        }
        pts
    });
    Ok(PointCloud { points: rows.into_iter().flatten().collect() })
}

/// Axis-aligned metric voxel lattice: per-axis voxel size is
/// `extent / dims`, `origin` is the minimum corner.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGridSpec {
    pub dims: [usize; 3],
    pub extent: [f64; 3],
    pub origin: [f64; 3],
}

impl VoxelGridSpec {
    pub fn new(dims: [usize; 3], extent: [f64; 3], origin: [f64; 3]) -> Result<Self, GeometryError> {
        if dims.iter().any(|&d| d == 0) {
            return Err(GeometryError::InvalidSpec(format!("dims {dims:?} must all be >= 1")));
        }
        if extent.iter().any(|&e| !(e > 0.0)) {
            return Err(GeometryError::InvalidSpec(format!("extent {extent:?} must be positive")));
        }
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidSpec("origin must be finite".into()));
        }
        Ok(Self { dims, extent, origin })
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        [
            self.extent[0] / self.dims[0] as f64,
            self.extent[1] / self.dims[1] as f64,
            self.extent[2] / self.dims[2] as f64,
        ]
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Voxel index of a point, if it falls inside the half-open extent.
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let size = self.voxel_size();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let rel = (p[a] - self.origin[a]) / size[a];
            if rel < 0.0 {
                return None;
            }
            let i = rel.floor() as usize;
            if i >= self.dims[a] {
                return None;
            }
            idx[a] = i;
        }
        Some(idx)
    }

    /// Metric center of voxel `(i, j, k)`.
    pub fn centroid(&self, idx: [usize; 3]) -> [f64; 3] {
        let size = self.voxel_size();
        [
            self.origin[0] + (idx[0] as f64 + 0.5) * size[0],
            self.origin[1] + (idx[1] as f64 + 0.5) * size[1],
            self.origin[2] + (idx[2] as f64 + 0.5) * size[2],
        ]
    }
}

/// Dense binary occupancy over a [`VoxelGridSpec`], x index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    spec: VoxelGridSpec,
    occ: Vec<u8>,
}

impl OccupancyGrid {
    pub fn empty(spec: VoxelGridSpec) -> Self {
        let n = spec.voxel_count();
        Self { spec, occ: vec![0; n] }
    }

    pub fn from_cells(spec: VoxelGridSpec, occ: Vec<u8>) -> Result<Self, GeometryError> {
        if occ.len() != spec.voxel_count() {
            return Err(GeometryError::InvalidSpec(format!(
                "{} cells for dims {:?}",
                occ.len(),
                spec.dims
            )));
        }
        if occ.iter().any(|&c| c > 1) {
            return Err(GeometryError::InvalidSpec("cells must be 0 or 1".into()));
        }
        Ok(Self { spec, occ })
    }

    pub fn spec(&self) -> &VoxelGridSpec {
        &self.spec
    }

    pub fn cells(&self) -> &[u8] {
        &self.occ
    }

    fn linear(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.spec.dims[0] * (idx[1] + self.spec.dims[1] * idx[2])
    }

    pub fn get(&self, idx: [usize; 3]) -> bool {
        self.occ[self.linear(idx)] != 0
    }

    pub fn set(&mut self, idx: [usize; 3], occupied: bool) {
        let i = self.linear(idx);
        self.occ[i] = occupied as u8;
    }

    pub fn occupied_count(&self) -> usize {
        self.occ.iter().filter(|&&c| c != 0).count()
    }

    pub fn occupied_indices(&self) -> Vec<[usize; 3]> {
        let [nx, ny, nz] = self.spec.dims;
        let mut out = Vec::new();
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    if self.get([i, j, k]) {
                        out.push([i, j, k]);
                    }
                }
            }
        }
        out
    }

    /// Centers of all occupied voxels.
    pub fn occupied_centroids(&self) -> Vec<[f64; 3]> {
        self.occupied_indices().iter().map(|&i| self.spec.centroid(i)).collect()
    }

    /// Grid with every occupied voxel grown to its 26-neighborhood
    /// (Chebyshev distance 1).
    pub fn dilate(&self) -> OccupancyGrid {
        let [nx, ny, nz] = self.spec.dims;
        let mut out = OccupancyGrid::empty(self.spec.clone());
        for idx in self.occupied_indices() {
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    for dk in -1i64..=1 {
                        let i = idx[0] as i64 + di;
                        let j = idx[1] as i64 + dj;
                        let k = idx[2] as i64 + dk;
                        if i >= 0 && j >= 0 && k >= 0
                            && (i as usize) < nx && (j as usize) < ny && (k as usize) < nz
                        {
                            out.set([i as usize, j as usize, k as usize], true);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Result of [`voxelize`]: the grid plus how many points fell outside.
#[derive(Debug, Clone)]
pub struct VoxelizeResult {
    pub grid: OccupancyGrid,
    pub dropped: usize,
}

/// Mark every voxel containing at least one point. Half-open intervals
/// per axis; points at or beyond `origin + extent` are dropped.
pub fn voxelize(pc: &PointCloud, spec: &VoxelGridSpec) -> VoxelizeResult {
    let mut grid = OccupancyGrid::empty(spec.clone());
    let mut dropped = 0;
    for &p in &pc.points {
        match spec.voxel_of(p) {
            Some(idx) => grid.set(idx, true),
            None => dropped += 1,
        }
    }
    VoxelizeResult { grid, dropped }
}

/// Intersection-over-union of two grids with identical specs. Both
/// grids empty is defined as 1.0.
pub fn iou(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<f64, GeometryError> {
    if a.spec != b.spec {
        return Err(GeometryError::SpecMismatch);
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&x, &y) in a.occ.iter().zip(&b.occ) {
        inter += (x & y) as u64;
        union += (x | y) as u64;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn example_cam() -> StereoCamera {
        StereoCamera::new(1000.0, 1000.0, 960.0, 540.0, 0.5, 1920, 1080).unwrap()
    }

    #[test]
    fn triangulate_hand_examples() {
        let cam = example_cam();
        let p = triangulate(&cam, 960.0, 540.0, 100.0).unwrap();
        assert_eq!(p, [0.0, 0.0, 5.0]);
        let p = triangulate(&cam, 1060.0, 540.0, 100.0).unwrap();
        assert_eq!(p, [0.5, 0.0, 5.0]);
        let p = triangulate(&cam, 960.0, 640.0, 100.0).unwrap();
        assert_eq!(p, [0.0, 0.5, 5.0]);
    }

    #[test]
    fn triangulate_errors() {
        let cam = example_cam();
        assert!(matches!(
            triangulate(&cam, 960.0, 540.0, 0.0),
            Err(GeometryError::NoDepth(_))
        ));
        assert!(matches!(
            triangulate(&cam, 2000.0, 540.0, 10.0),
            Err(GeometryError::OutOfFrame { .. })
        ));
    }

    #[test]
    fn project_hand_examples() {
        let cam = example_cam();
        assert_eq!(project(&cam, [0.0, 0.0, 5.0]).unwrap(), (960.0, 540.0, 100.0));
        assert_eq!(project(&cam, [0.5, 0.0, 5.0]).unwrap(), (1060.0, 540.0, 100.0));
        assert!(matches!(
            project(&cam, [0.0, 0.0, -1.0]),
            Err(GeometryError::BehindCamera(_))
        ));
    }

    #[test]
    fn depth_error_law() {
        let cam = example_cam();
        assert_abs_diff_eq!(depth_error(&cam, 5.0, 1.0).unwrap(), 0.05, epsilon = 1e-15);
        let e10 = depth_error(&cam, 10.0, 1.0).unwrap();
        assert_abs_diff_eq!(e10, 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(e10 / depth_error(&cam, 5.0, 1.0).unwrap(), 4.0, epsilon = 1e-12);
        assert_eq!(depth_error(&cam, 7.3, 0.0).unwrap(), 0.0);
        assert!(depth_error(&cam, -1.0, 1.0).is_err());
    }

    #[test]
    fn pointcloud_from_disparity() {
        let cam = example_cam();
        let empty = disparity_to_pointcloud(&cam, &DisparityMap::zeros(1920, 1080)).unwrap();
        assert!(empty.points.is_empty());

        let mut dm = DisparityMap::zeros(1920, 1080);
        dm.set(960, 540, 100.0);
        let pc = disparity_to_pointcloud(&cam, &dm).unwrap();
        assert_eq!(pc.points, vec![[0.0, 0.0, 5.0]]);

        let bad = DisparityMap::zeros(4, 4);
        assert!(matches!(
            disparity_to_pointcloud(&cam, &bad),
            Err(GeometryError::DimensionMismatch { .. })
        ));
    }

    fn unit_spec() -> VoxelGridSpec {
        VoxelGridSpec::new([4, 4, 4], [4.0, 4.0, 4.0], [0.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn voxelize_boundary_rules() {
        let spec = unit_spec();
        let r = voxelize(&PointCloud::default(), &spec);
        assert_eq!(r.grid.occupied_count(), 0);

        // point exactly at the origin lands in voxel (0,0,0)
        let r = voxelize(&PointCloud { points: vec![[0.0, 0.0, 0.0]] }, &spec);
        assert!(r.grid.get([0, 0, 0]));
        assert_eq!(r.dropped, 0);

        // max corner is outside the half-open extent
        let r = voxelize(&PointCloud { points: vec![[4.0, 4.0, 4.0]] }, &spec);
        assert_eq!(r.grid.occupied_count(), 0);
        assert_eq!(r.dropped, 1);
    }

    #[test]
    fn voxelize_idempotent_on_centroids() {
        let spec = unit_spec();
        let pts = vec![[0.1, 0.2, 0.3], [3.9, 3.9, 3.9], [2.0, 1.0, 0.5]];
        let r = voxelize(&PointCloud { points: pts }, &spec);
        let again = voxelize(&PointCloud { points: r.grid.occupied_centroids() }, &spec);
        assert_eq!(again.grid, r.grid);
        assert_eq!(again.dropped, 0);
    }

    #[test]
    fn iou_cases() {
        let spec = unit_spec();
        let mut a = OccupancyGrid::empty(spec.clone());
        let mut b = OccupancyGrid::empty(spec.clone());
        assert_eq!(iou(&a, &b).unwrap(), 1.0); // both empty

        a.set([0, 0, 0], true);
        a.set([1, 0, 0], true); // a = {v1, v2}
        b.set([1, 0, 0], true);
        b.set([2, 0, 0], true); // b = {v2, v3}
        assert_abs_diff_eq!(iou(&a, &b).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);

        let mut c = OccupancyGrid::empty(spec.clone());
        c.set([3, 3, 3], true);
        let mut d = OccupancyGrid::empty(spec);
        d.set([0, 3, 3], true);
        assert_eq!(iou(&c, &d).unwrap(), 0.0);

        let other = OccupancyGrid::empty(
            VoxelGridSpec::new([2, 2, 2], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]).unwrap(),
        );
        assert!(matches!(iou(&c, &other), Err(GeometryError::SpecMismatch)));
    }
}
