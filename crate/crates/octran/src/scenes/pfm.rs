//! Portable Float Map (grayscale `Pf`) disparity interchange.
//!
//! Header: `Pf`, then `width height`, then the scale line (negative =
//! little-endian). Payload is rows bottom-to-top, f32 per pixel.
//! Writes always use scale `-1.0`; save then load is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::formats::FormatError;
use crate::geometry::DisparityMap;

pub fn write_pfm(w: &mut impl Write, dm: &DisparityMap) -> Result<(), FormatError> {
    write!(w, "Pf\n{} {}\n-1.0\n", dm.width, dm.height)?;
    for v in (0..dm.height).rev() {
        for u in 0..dm.width {
            w.write_all(&(dm.get(u, v) as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pfm(r: &mut impl Read) -> Result<DisparityMap, FormatError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (magic, rest) = next_token(&bytes, 0)?;
    match magic {
        b"Pf" => {}
        b"PF" => return Err(FormatError::UnsupportedChannels),
        other => {
            return Err(FormatError::BadMagic {
                format: "pfm",
                found: String::from_utf8_lossy(other).into_owned(),
            })
        }
    }
    let (w_tok, rest) = next_token(&bytes, rest)?;
    let (h_tok, rest) = next_token(&bytes, rest)?;
    let (scale_tok, payload_start) = next_token(&bytes, rest)?;
    let width: u32 = parse_token(w_tok, "width")?;
    let height: u32 = parse_token(h_tok, "height")?;
    let scale: f64 = parse_token(scale_tok, "scale")?;
    if scale == 0.0 {
        return Err(FormatError::BadHeader { format: "pfm", detail: "scale must be nonzero".into() });
    }
    let little_endian = scale < 0.0;
    let n = width as usize * height as usize;
    let payload = &bytes[payload_start..];
    if payload.len() < n * 4 {
        return Err(FormatError::Truncated { format: "pfm" });
    }
    if payload.len() > n * 4 {
        return Err(FormatError::TrailingData { format: "pfm" });
    }
    let mut values = vec![0.0f64; n];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let f = if little_endian { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        // rows are stored bottom-to-top
        let row = height as usize - 1 - i / width as usize;
        let col = i % width as usize;
        values[row * width as usize + col] = f as f64;
    }
    DisparityMap::new(width, height, values)
        .map_err(|e| FormatError::Invalid { format: "pfm", detail: e.to_string() })
}

pub fn save_pfm(dm: &DisparityMap, path: &Path) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pfm(&mut w, dm)
}

pub fn load_pfm(path: &Path) -> Result<DisparityMap, FormatError> {
    let mut r = BufReader::new(File::open(path)?);
    read_pfm(&mut r)
}

/// Next whitespace-delimited token starting at `from`; returns the token
/// and the byte offset just past its trailing whitespace character.
fn next_token(bytes: &[u8], from: usize) -> Result<(&[u8], usize), FormatError> {
    let mut start = from;
    while start < bytes.len() && bytes[start].is_ascii_whitespace() {
        start += 1;
    }
    let mut end = start;
    while end < bytes.len() && !bytes[end].is_ascii_whitespace() {
        end += 1;
    }
    if start == end {
        return Err(FormatError::Truncated { format: "pfm" });
    }
    if end >= bytes.len() {
        return Err(FormatError::Truncated { format: "pfm" });
    }
    Ok((&bytes[start..end], end + 1))
}

fn parse_token<T: std::str::FromStr>(tok: &[u8], what: &str) -> Result<T, FormatError> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| FormatError::BadHeader {
            format: "pfm",
            detail: format!("unparseable {what}: {:?}", String::from_utf8_lossy(tok)),
        })
}
