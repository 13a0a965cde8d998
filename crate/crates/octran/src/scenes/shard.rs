//! Dataset shard container.
//!
//! A text manifest (count, camera, grid spec, image size) terminated by
//! a blank line, followed per sample by three length-prefixed blobs
//! (u32 LE): the PFM disparity, the OCGR ground-truth grid, and the
//! TNSR RGB image. Truncation and trailing bytes are both errors; a
//! failed read returns no partial data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::pfm::{read_pfm, write_pfm};
use super::SceneError;
use crate::formats::FormatError;
use crate::geometry::{read_ocgr, write_ocgr, DisparityMap, OccupancyGrid, StereoCamera, VoxelGridSpec};
use crate::tensor::{read_tnsr, write_tnsr, Tensor};

const HEADER: &str = "octran-shard v1";

/// One training sample: shaded RGB image, rendered disparity, and the
/// exact occupancy ground truth from the same scene.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSample {
    pub image: Tensor,
    pub disparity: DisparityMap,
    pub gt: OccupancyGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardManifest {
    pub count: usize,
    pub camera: StereoCamera,
    pub grid: VoxelGridSpec,
    pub image_height: usize,
    pub image_width: usize,
}

pub fn write_shard(
    w: &mut impl Write,
    camera: &StereoCamera,
    samples: &[RenderedSample],
) -> Result<(), SceneError> {
    let first = samples.first().ok_or(SceneError::EmptyShard)?;
    let grid = first.gt.spec();
    let (ih, iw) = (first.image.shape()[0], first.image.shape()[1]);
    for s in samples {
        if s.gt.spec() != grid
            || s.image.shape() != [ih, iw, 3]
            || s.disparity.width != camera.width
            || s.disparity.height != camera.height
        {
            return Err(SceneError::InvalidSpec("samples disagree on shapes".into()));
        }
    }
    writeln!(w, "{HEADER}").map_err(FormatError::Io)?;
    writeln!(w, "count={}", samples.len()).map_err(FormatError::Io)?;
    writeln!(
        w,
        "cam={} {} {} {} {} {} {}",
        camera.f_x, camera.f_y, camera.o_x, camera.o_y, camera.b, camera.width, camera.height
    )
    .map_err(FormatError::Io)?;
    writeln!(w, "grid_dims={} {} {}", grid.dims[0], grid.dims[1], grid.dims[2])
        .map_err(FormatError::Io)?;
    writeln!(w, "grid_origin={} {} {}", grid.origin[0], grid.origin[1], grid.origin[2])
        .map_err(FormatError::Io)?;
    writeln!(w, "grid_extent={} {} {}", grid.extent[0], grid.extent[1], grid.extent[2])
        .map_err(FormatError::Io)?;
    writeln!(w, "image={ih} {iw}").map_err(FormatError::Io)?;
    writeln!(w).map_err(FormatError::Io)?;
    for s in samples {
        let mut blob = Vec::new();
        write_pfm(&mut blob, &s.disparity)?;
        write_blob(w, &blob)?;
        blob.clear();
        write_ocgr(&mut blob, &s.gt)?;
        write_blob(w, &blob)?;
        blob.clear();
        write_tnsr(&mut blob, &s.image)?;
        write_blob(w, &blob)?;
    }
    Ok(())
}

pub fn read_shard(r: &mut impl Read) -> Result<(ShardManifest, Vec<RenderedSample>), SceneError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(FormatError::Io)?;
    let blank = find_blank_line(&bytes).ok_or(FormatError::Truncated { format: "shard" })?;
    let text = std::str::from_utf8(&bytes[..blank]).map_err(|_| FormatError::BadHeader {
        format: "shard",
        detail: "manifest is not utf-8".into(),
    })?;
    let manifest = parse_manifest(text)?;
    let mut cursor = &bytes[blank + 1..];
    let mut samples = Vec::with_capacity(manifest.count);
    for _ in 0..manifest.count {
        let disparity = read_pfm(&mut read_blob(&mut cursor)?.as_slice())?;
        let gt = read_ocgr(&mut read_blob(&mut cursor)?.as_slice())?;
        let image = read_tnsr(&mut read_blob(&mut cursor)?.as_slice())?;
        samples.push(RenderedSample { image, disparity, gt });
    }
    if !cursor.is_empty() {
        return Err(FormatError::TrailingData { format: "shard" }.into());
    }
    for s in &samples {
        if s.gt.spec() != &manifest.grid
            || s.image.shape() != [manifest.image_height, manifest.image_width, 3]
        {
            return Err(FormatError::Invalid {
                format: "shard",
                detail: "payload disagrees with manifest".into(),
            }
            .into());
        }
    }
    Ok((manifest, samples))
}

pub fn save_shard(
    path: &Path,
    camera: &StereoCamera,
    samples: &[RenderedSample],
) -> Result<(), SceneError> {
    let mut w = BufWriter::new(File::create(path).map_err(FormatError::Io)?);
    write_shard(&mut w, camera, samples)
}

pub fn load_shard(path: &Path) -> Result<(ShardManifest, Vec<RenderedSample>), SceneError> {
    let mut r = BufReader::new(File::open(path).map_err(FormatError::Io)?);
    read_shard(&mut r)
}

fn write_blob(w: &mut impl Write, blob: &[u8]) -> Result<(), FormatError> {
    w.write_all(&(blob.len() as u32).to_le_bytes())?;
    w.write_all(blob)?;
    Ok(())
}

fn read_blob(cursor: &mut &[u8]) -> Result<Vec<u8>, FormatError> {
    if cursor.len() < 4 {
        return Err(FormatError::Truncated { format: "shard" });
    }
    let len = u32::from_le_bytes([cursor[0], cursor[1], cursor[2], cursor[3]]) as usize;
    if cursor.len() < 4 + len {
        return Err(FormatError::Truncated { format: "shard" });
    }
    let blob = cursor[4..4 + len].to_vec();
    *cursor = &cursor[4 + len..];
    Ok(blob)
}

fn find_blank_line(bytes: &[u8]) -> Option<usize> {
    bytes.windows(2).position(|w| w == b"\n\n").map(|p| p + 1)
}

fn parse_manifest(text: &str) -> Result<ShardManifest, FormatError> {
    let bad = |detail: String| FormatError::BadHeader { format: "shard", detail };
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(FormatError::BadMagic {
            format: "shard",
            found: text.lines().next().unwrap_or("").to_string(),
        });
    }
    let mut count = None;
    let mut cam = None;
    let mut dims = None;
    let mut origin = None;
    let mut extent = None;
    let mut image = None;
    for line in lines {
        let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("bad line {line:?}")))?;
        let fields: Vec<&str> = value.split_whitespace().collect();
        match key {
            "count" => count = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "cam" => {
                if fields.len() != 7 {
                    return Err(bad("cam needs 7 fields".into()));
                }
                let f: Vec<f64> = parse_all(&fields[..5]).map_err(bad)?;
                let wh: Vec<u32> = parse_all(&fields[5..]).map_err(bad)?;
                cam = Some(
                    StereoCamera::new(f[0], f[1], f[2], f[3], f[4], wh[0], wh[1])
                        .map_err(|e| bad(e.to_string()))?,
                );
            }
            "grid_dims" => dims = Some(parse_all::<usize>(&fields).map_err(bad)?),
            "grid_origin" => origin = Some(parse_all::<f64>(&fields).map_err(bad)?),
            "grid_extent" => extent = Some(parse_all::<f64>(&fields).map_err(bad)?),
            "image" => image = Some(parse_all::<usize>(&fields).map_err(bad)?),
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    let count = count.ok_or_else(|| bad("missing count".into()))?;
    let camera = cam.ok_or_else(|| bad("missing cam".into()))?;
    let dims = dims.ok_or_else(|| bad("missing grid_dims".into()))?;
    let origin = origin.ok_or_else(|| bad("missing grid_origin".into()))?;
    let extent = extent.ok_or_else(|| bad("missing grid_extent".into()))?;
    let image = image.ok_or_else(|| bad("missing image".into()))?;
    if dims.len() != 3 || origin.len() != 3 || extent.len() != 3 || image.len() != 2 {
        return Err(bad("wrong field counts".into()));
    }
    let grid = VoxelGridSpec::new(
        [dims[0], dims[1], dims[2]],
        [extent[0], extent[1], extent[2]],
        [origin[0], origin[1], origin[2]],
    )
    .map_err(|e| bad(e.to_string()))?;
    Ok(ShardManifest { count, camera, grid, image_height: image[0], image_width: image[1] })
}

fn parse_all<T: std::str::FromStr>(fields: &[&str]) -> Result<Vec<T>, String> {
    fields
        .iter()
        .map(|f| f.parse::<T>().map_err(|_| format!("unparseable field {f:?}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{generate_dataset, test_spec, GtMode};

    #[test]
    fn roundtrip_four_samples() {
        let spec = test_spec(5);
        let samples = generate_dataset(&spec, 4, GtMode::Volume).unwrap();
        let mut buf = Vec::new();
        write_shard(&mut buf, &spec.camera, &samples).unwrap();
        let (manifest, back) = read_shard(&mut buf.as_slice()).unwrap();
        assert_eq!(manifest.count, 4);
        assert_eq!(manifest.camera, spec.camera);
        assert_eq!(back, samples);
        // byte-identical on rewrite
        let mut buf2 = Vec::new();
        write_shard(&mut buf2, &spec.camera, &back).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn truncated_shard_fails_closed() {
        let spec = test_spec(6);
        let samples = generate_dataset(&spec, 2, GtMode::Volume).unwrap();
        let mut buf = Vec::new();
        write_shard(&mut buf, &spec.camera, &samples).unwrap();
        let short = &buf[..buf.len() - 10];
        assert!(read_shard(&mut &short[..]).is_err());
        // trailing garbage is also rejected
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(
            read_shard(&mut long.as_slice()),
            Err(SceneError::Format(FormatError::TrailingData { .. }))
        ));
    }

    #[test]
    fn empty_shard_rejected_at_write() {
        let spec = test_spec(6);
        let mut buf = Vec::new();
        assert!(matches!(
            write_shard(&mut buf, &spec.camera, &[]),
            Err(SceneError::EmptyShard)
        ));
    }
}
