//! Column-wise chunking of feature pyramids.
//!
//! Layer j of a pyramid over a 128x512 input has shape
//! `2^(j+1) x 2^(j+3) x channels` for j in 0..=4. Chunk i of C takes
//! columns `[i*w/C, (i+1)*w/C)` of every layer (all rows), so the
//! chunks partition each layer with no overlap or omission.

use super::AttentionError;
use crate::tensor::Tensor;

/// Multi-resolution feature maps, channels-last `[h, w, c]`, uniform
/// channel count across layers, ordered coarsest (j = 0) first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    layers: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(layers: Vec<Tensor>) -> Result<Self, AttentionError> {
        if layers.is_empty() {
            return Err(AttentionError::InvalidPyramid("no layers".into()));
        }
        let c = layers[0].shape().last().copied().unwrap_or(0);
        for (j, l) in layers.iter().enumerate() {
            if l.rank() != 3 {
                return Err(AttentionError::InvalidPyramid(format!(
                    "layer {j} has rank {} (want 3)",
                    l.rank()
                )));
            }
            if l.shape()[2] != c {
                return Err(AttentionError::InvalidPyramid(format!(
                    "layer {j} has {} channels, layer 0 has {c}",
                    l.shape()[2]
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub fn channels(&self) -> usize {
        self.layers[0].shape()[2]
    }
}

/// Per-layer `(height, width)` of the pyramid for a given input size.
/// At the reference 128x512 input this is exactly
/// `2^(j+1) x 2^(j+3)`; smaller inputs scale proportionally with each
/// axis floored at 1.
pub fn reference_pyramid_shapes(input_h: usize, input_w: usize) -> Vec<(usize, usize)> {
    (0..5)
        .map(|j| {
            let div = 1usize << (6 - j);
            ((input_h / div).max(1), (input_w / div).max(1))
        })
        .collect()
}

/// Split every layer into `chunks` column slices. Chunk `i` of layer `j`
/// holds columns `[i*w/chunks, (i+1)*w/chunks)` and all rows.
pub fn chunk_features(
    pyramid: &FeaturePyramid,
    chunks: usize,
) -> Result<Vec<Vec<Tensor>>, AttentionError> {
    if chunks == 0 {
        return Err(AttentionError::InvalidPyramid("chunk count must be >= 1".into()));
    }
    for (j, layer) in pyramid.layers().iter().enumerate() {
        let width = layer.shape()[1];
        if width % chunks != 0 {
            return Err(AttentionError::ChunkMismatch { chunks, layer: j, width });
        }
    }
    let mut out = Vec::with_capacity(chunks);
    for i in 0..chunks {
        let mut per_layer = Vec::with_capacity(pyramid.layers().len());
        for layer in pyramid.layers() {
            let w = layer.shape()[1];
            let step = w / chunks;
            per_layer.push(layer.slice(1, i * step, (i + 1) * step)?);
        }
        out.push(per_layer);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pyramid_128x512(channels: usize) -> FeaturePyramid {
        let layers = reference_pyramid_shapes(128, 512)
            .into_iter()
            .map(|(h, w)| {
                let n = h * w * channels;
                Tensor::from_vec(&[h, w, channels], (0..n).map(|v| v as f64).collect()).unwrap()
            })
            .collect();
        FeaturePyramid::new(layers).unwrap()
    }

    #[test]
    fn reference_shape_law() {
        let shapes = reference_pyramid_shapes(128, 512);
        assert_eq!(shapes, vec![(2, 8), (4, 16), (8, 32), (16, 64), (32, 128)]);
        // every level of a quarter-size input keeps the aspect, floored at 1
        let desk = reference_pyramid_shapes(32, 128);
        assert_eq!(desk, vec![(1, 2), (1, 4), (2, 8), (4, 16), (8, 32)]);
    }

    #[test]
    fn chunk_of_layer_one_holds_expected_columns() {
        // layer j=1 is 4x16; with C=4, chunk i=1 holds columns [4, 8)
        let p = pyramid_128x512(2);
        let chunks = chunk_features(&p, 4).unwrap();
        let c1 = &chunks[1][1];
        assert_eq!(c1.shape(), &[4, 4, 2]);
        let full = &p.layers()[1];
        for row in 0..4 {
            for col in 0..4 {
                for ch in 0..2 {
                    assert_eq!(c1.at(&[row, col, ch]), full.at(&[row, col + 4, ch]));
                }
            }
        }
    }

    #[test]
    fn single_chunk_is_identity() {
        let p = pyramid_128x512(1);
        let chunks = chunk_features(&p, 1).unwrap();
        assert_eq!(chunks.len(), 1);
        for (c, l) in chunks[0].iter().zip(p.layers()) {
            assert_eq!(c, l);
        }
    }

    #[test]
    fn chunks_reassemble_exactly() {
        let p = pyramid_128x512(3);
        for c in [1usize, 2, 4, 8] {
            let chunks = chunk_features(&p, c).unwrap();
            for (j, layer) in p.layers().iter().enumerate() {
                let parts: Vec<&Tensor> = chunks.iter().map(|ch| &ch[j]).collect();
                let rebuilt = Tensor::concat(1, &parts).unwrap();
                assert_eq!(&rebuilt, layer, "C={c} layer {j}");
            }
        }
    }

    #[test]
    fn indivisible_chunk_count_is_rejected() {
        let p = pyramid_128x512(1);
        assert!(matches!(
            chunk_features(&p, 3),
            Err(AttentionError::ChunkMismatch { chunks: 3, layer: 0, width: 8 })
        ));
    }
}
