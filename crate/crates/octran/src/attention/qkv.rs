//! Scaled dot-product attention on plain tensors.
//!
//! `softmax(QKᵀ/√d_k)V` per head, heads concatenated. This is the
//! kernel the trainable modules are built on and the path used for MAC
//! accounting.

use super::AttentionError;
use crate::flops;
use crate::tensor::Tensor;

/// Multi-head scaled dot-product attention.
///
/// `q` is `[M_q, heads*d_k]`, `k` is `[M_k, heads*d_k]`, `v` is
/// `[M_k, heads*d_v]`; the result is `[M_q, heads*d_v]`. Score MACs are
/// recorded under the `attention.scores` key, the value-weighting under
/// `attention.values`.
pub fn qkv_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
) -> Result<Tensor, AttentionError> {
    if heads == 0 {
        return Err(AttentionError::HeadLayout("heads must be >= 1".into()));
    }
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 {
        return Err(AttentionError::HeadLayout(format!(
            "expected rank-2 q/k/v, got {:?}/{:?}/{:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if q.shape()[1] != k.shape()[1] || k.shape()[0] != v.shape()[0] {
        return Err(AttentionError::HeadLayout(format!(
            "inner dims disagree: q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if q.shape()[1] % heads != 0 || v.shape()[1] % heads != 0 {
        return Err(AttentionError::HeadLayout(format!(
            "width {} / {} not divisible by {heads} heads",
            q.shape()[1],
            v.shape()[1]
        )));
    }
    let dk = q.shape()[1] / heads;
    let dv = v.shape()[1] / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = q.slice(1, h * dk, (h + 1) * dk)?;
        let kh = k.slice(1, h * dk, (h + 1) * dk)?;
        let vh = v.slice(1, h * dv, (h + 1) * dv)?;
        let scores = {
            let _s = flops::scope("attention.scores");
            qh.matmul(&kh.transpose()?)?
        }
        .scale(scale);
        let weights = scores.softmax(1)?;
        let out = {
            let _s = flops::scope("attention.values");
            weights.matmul(&vh)?
        };
        outputs.push(out);
    }
    let refs: Vec<&Tensor> = outputs.iter().collect();
    Ok(Tensor::concat(1, &refs)?)
}

/// Recorded score MACs for latent cross-attention vs input
/// self-attention at one input size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityRow {
    pub m: usize,
    pub cross_score_macs: u64,
    pub self_score_macs: u64,
}

/// Run both attention patterns and report what the flop ledger recorded
/// for their score computations (single head, no projections).
pub fn complexity_row(m: usize, n: usize, d: usize) -> Result<ComplexityRow, AttentionError> {
    let inputs = Tensor::from_vec(&[m, d], (0..m * d).map(|i| ((i % 13) as f64) * 0.1 - 0.6).collect())
        .unwrap();
    let latents = Tensor::from_vec(&[n, d], (0..n * d).map(|i| ((i % 7) as f64) * 0.1 - 0.3).collect())
        .unwrap();

    let before = flops::count("cross.scores");
    {
        let _s = flops::scope("cross.scores");
        let _ = {
            let _inner = flops::scope("attention.scores");
            latents.matmul(&inputs.transpose()?)?
        };
    }
    let cross = flops::count("cross.scores") - before;

    let before = flops::count("self.scores");
    {
        let _s = flops::scope("self.scores");
        let _ = {
            let _inner = flops::scope("attention.scores");
            inputs.matmul(&inputs.transpose()?)?
        };
    }
    let self_macs = flops::count("self.scores") - before;

    Ok(ComplexityRow { m, cross_score_macs: cross, self_score_macs: self_macs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_key_returns_value_row() {
        let q = Tensor::from_vec(&[3, 2], vec![5.0, -1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        let k = Tensor::from_vec(&[1, 2], vec![0.3, 0.7]).unwrap();
        let v = Tensor::from_vec(&[1, 2], vec![4.0, -9.0]).unwrap();
        let out = qkv_attention(&q, &k, &v, 1).unwrap();
        for row in out.data().chunks(2) {
            assert_eq!(row, [4.0, -9.0]);
        }
    }

    #[test]
    fn equal_scores_average_values() {
        let q = Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap();
        // both keys have the same dot product with q
        let k = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = Tensor::from_vec(&[2, 2], vec![2.0, 0.0, 0.0, 4.0]).unwrap();
        let out = qkv_attention(&q, &k, &v, 1).unwrap();
        assert_abs_diff_eq!(out.data()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.data()[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn hand_computed_two_key_example() {
        // Q=[[1,0]], K=[[1,0],[0,1]], V=[[1,0],[0,1]], d_k=2:
        // scores [1/sqrt(2), 0], sigma = e^(1/sqrt2)/(e^(1/sqrt2)+1)
        let q = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let k = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = qkv_attention(&q, &k, &v, 1).unwrap();
        let s = (1.0f64 / 2.0f64.sqrt()).exp();
        let sigma = s / (s + 1.0);
        assert_abs_diff_eq!(out.data()[0], sigma, epsilon = 1e-12);
        assert_abs_diff_eq!(out.data()[1], 1.0 - sigma, epsilon = 1e-12);
        assert_abs_diff_eq!(out.data()[0], 0.6698, epsilon = 5e-5);
    }

    #[test]
    fn recorded_macs_match_closed_forms() {
        let row = complexity_row(64, 8, 16).unwrap();
        assert_eq!(row.cross_score_macs, 8 * 64 * 16); // N*M*d = 8192
        assert_eq!(row.self_score_macs, 64 * 64 * 16); // M^2*d = 65536
        let double = complexity_row(128, 8, 16).unwrap();
        assert_eq!(double.cross_score_macs, 2 * row.cross_score_macs);
        assert_eq!(double.self_score_macs, 4 * row.self_score_macs);
    }
}
