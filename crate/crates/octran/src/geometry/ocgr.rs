//! `OCGR` occupancy-grid container.
//!
//! Layout: magic `OCGR`, version (u32 LE), dims (3 x u32 LE), origin and
//! extent (6 x f64 LE, meters), then bit-packed occupancy — x index
//! fastest, then y, then z, LSB-first within each byte, padded to a byte
//! boundary.

use std::io::{Read, Write};

use super::{OccupancyGrid, VoxelGridSpec};
use crate::formats::FormatError;

const MAGIC: &[u8; 4] = b"OCGR";
pub const OCGR_VERSION: u32 = 1;

pub fn write_ocgr(w: &mut impl Write, grid: &OccupancyGrid) -> Result<(), FormatError> {
    let spec = grid.spec();
    w.write_all(MAGIC)?;
    w.write_all(&OCGR_VERSION.to_le_bytes())?;
    for &d in &spec.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in &spec.origin {
        w.write_all(&v.to_le_bytes())?;
    }
    for &v in &spec.extent {
        w.write_all(&v.to_le_bytes())?;
    }
    let cells = grid.cells();
    let mut packed = vec![0u8; cells.len().div_ceil(8)];
    for (i, &c) in cells.iter().enumerate() {
        packed[i / 8] |= c << (i % 8);
    }
    w.write_all(&packed)?;
    Ok(())
}

pub fn read_ocgr(r: &mut impl Read) -> Result<OccupancyGrid, FormatError> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(FormatError::BadMagic {
            format: "ocgr",
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let version = read_u32(r)?;
    if version != OCGR_VERSION {
        return Err(FormatError::UnsupportedVersion { format: "ocgr", version });
    }
    let dims = [read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize];
    let mut origin = [0.0; 3];
    let mut extent = [0.0; 3];
    for v in &mut origin {
        *v = read_f64(r)?;
    }
    for v in &mut extent {
        *v = read_f64(r)?;
    }
    let spec = VoxelGridSpec::new(dims, extent, origin).map_err(|e| FormatError::BadHeader {
        format: "ocgr",
        detail: e.to_string(),
    })?;
    let n = spec.voxel_count();
    let mut packed = vec![0u8; n.div_ceil(8)];
    read_exact(r, &mut packed)?;
    let cells: Vec<u8> = (0..n).map(|i| (packed[i / 8] >> (i % 8)) & 1).collect();
    OccupancyGrid::from_cells(spec, cells)
        .map_err(|e| FormatError::BadHeader { format: "ocgr", detail: e.to_string() })
}

fn read_u32(r: &mut impl Read) -> Result<u32, FormatError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64, FormatError> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), FormatError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            FormatError::Truncated { format: "ocgr" }
        } else {
            FormatError::Io(e)
        }
    })
}
