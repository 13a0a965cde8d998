//! ASCII PLY 1.0 export: vertex elements with float x, y, z.

use std::io::Write;

use super::OccupancyGrid;
use crate::formats::FormatError;

/// Write points as an ASCII PLY vertex list. Coordinates are emitted as
/// 32-bit floats per the `property float` declaration.
pub fn write_ply_points(w: &mut impl Write, points: &[[f64; 3]]) -> Result<(), FormatError> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "end_header")?;
    for p in points {
        writeln!(w, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32)?;
    }
    Ok(())
}

/// Write the centroids of all occupied voxels.
pub fn write_ply_grid_centroids(w: &mut impl Write, grid: &OccupancyGrid) -> Result<(), FormatError> {
    write_ply_points(w, &grid.occupied_centroids())
}
