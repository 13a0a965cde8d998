//! `TNSR` container: magic bytes, rank and dims as unsigned 32-bit
//! little-endian, then the row-major payload as 64-bit little-endian
//! floats. Used for checkpoints and test fixtures.

use std::io::{Read, Write};

use super::Tensor;
use crate::formats::FormatError;

const MAGIC: &[u8; 4] = b"TNSR";

pub fn write_tnsr(w: &mut impl Write, t: &Tensor) -> Result<(), FormatError> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tnsr(r: &mut impl Read) -> Result<Tensor, FormatError> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(FormatError::BadMagic {
            format: "tnsr",
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let rank = read_u32(r)? as usize;
    if rank > 16 {
        return Err(FormatError::BadHeader {
            format: "tnsr",
            detail: format!("implausible rank {rank}"),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        read_exact(r, &mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Tensor::from_vec(&shape, data).map_err(|e| FormatError::BadHeader {
        format: "tnsr",
        detail: e.to_string(),
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, FormatError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), FormatError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            FormatError::Truncated { format: "tnsr" }
        } else {
            FormatError::Io(e)
        }
    })
}
