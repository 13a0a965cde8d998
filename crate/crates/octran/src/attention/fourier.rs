//! Fourier position features.
//!
//! For each coordinate `p` in [−1, 1] and each of `num_bands`
//! frequencies geometrically spaced in `[1, max_frequency/2]`, the
//! encoding emits `sin(π f p)` then `cos(π f p)` per band, optionally
//! followed by the raw coordinates.

use super::AttentionError;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FourierEncoding {
    pub max_frequency: f64,
    pub num_bands: usize,
    pub include_input: bool,
}

impl FourierEncoding {
    pub fn new(max_frequency: f64, num_bands: usize, include_input: bool) -> Result<Self, AttentionError> {
        if !(max_frequency > 0.0) || num_bands == 0 {
            return Err(AttentionError::InvalidEncoding(format!(
                "max_frequency {max_frequency} must be > 0 and num_bands {num_bands} >= 1"
            )));
        }
        Ok(Self { max_frequency, num_bands, include_input })
    }

    /// Band frequencies, geometric from 1 to `max_frequency / 2`.
    pub fn bands(&self) -> Vec<f64> {
        let top = (self.max_frequency / 2.0).max(1.0);
        if self.num_bands == 1 {
            return vec![1.0];
        }
        (0..self.num_bands)
            .map(|b| top.powf(b as f64 / (self.num_bands - 1) as f64))
            .collect()
    }

    pub fn feature_len(&self, dims: usize) -> usize {
        dims * 2 * self.num_bands + if self.include_input { dims } else { 0 }
    }

    /// Encode one position (coords in [−1, 1]).
    pub fn encode(&self, position: &[f64]) -> Vec<f64> {
        let bands = self.bands();
        let mut out = Vec::with_capacity(self.feature_len(position.len()));
        for &p in position {
            for &f in &bands {
                out.push((std::f64::consts::PI * f * p).sin());
            }
            for &f in &bands {
                out.push((std::f64::consts::PI * f * p).cos());
            }
        }
        if self.include_input {
            out.extend_from_slice(position);
        }
        out
    }

    /// Encode an `[M, dims]` matrix of positions row by row.
    pub fn encode_matrix(&self, positions: &Tensor) -> Tensor {
        let dims = *positions.shape().last().unwrap();
        let m = positions.len() / dims;
        let fl = self.feature_len(dims);
        let mut data = Vec::with_capacity(m * fl);
        for row in positions.data().chunks(dims) {
            data.extend(self.encode(row));
        }
        Tensor::from_vec(&[m, fl], data).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_position_gives_zero_sins_unit_cosines() {
        let enc = FourierEncoding::new(64.0, 4, false).unwrap();
        let f = enc.encode(&[0.0, 0.0]);
        assert_eq!(f.len(), enc.feature_len(2));
        for coord in 0..2 {
            for b in 0..4 {
                assert_eq!(f[coord * 8 + b], 0.0);
                assert_eq!(f[coord * 8 + 4 + b], 1.0);
            }
        }
    }

    #[test]
    fn single_band_mf_two_is_unit_frequency() {
        let enc = FourierEncoding::new(2.0, 1, false).unwrap();
        assert_eq!(enc.bands(), vec![1.0]);
        let p = 0.25;
        let f = enc.encode(&[p]);
        assert_abs_diff_eq!(f[0], (std::f64::consts::PI * p).sin(), epsilon = 1e-15);
        assert_abs_diff_eq!(f[1], (std::f64::consts::PI * p).cos(), epsilon = 1e-15);
    }

    #[test]
    fn feature_length_counts() {
        let enc = FourierEncoding::new(100.0, 6, true).unwrap();
        assert_eq!(enc.feature_len(3), 3 * 12 + 3);
        let enc = FourierEncoding::new(100.0, 6, false).unwrap();
        assert_eq!(enc.feature_len(3), 36);
    }

    #[test]
    fn bands_are_geometric_up_to_half_mf() {
        let enc = FourierEncoding::new(32.0, 5, false).unwrap();
        let b = enc.bands();
        assert_abs_diff_eq!(b[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b[4], 16.0, epsilon = 1e-12);
        for w in b.windows(2) {
            assert_abs_diff_eq!(w[1] / w[0], 2.0, epsilon = 1e-12);
        }
    }
}
