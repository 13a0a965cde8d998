//! Central finite-difference gradient oracle.

use super::Tensor;

/// Gradient of a scalar-valued function by central differences:
/// `(f(x + h·e_i) − f(x − h·e_i)) / (2h)` per element. `f` must be pure.
pub fn finite_difference_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    assert!(h > 0.0, "step size must be positive");
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::from_vec(&[3], vec![0.3, -2.0, 7.5]).unwrap();
        let g = finite_difference_grad(|t| t.sum(), &x, 1e-5);
        for &v in g.data() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn square_at_three_gives_six() {
        let x = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let g = finite_difference_grad(|t| t.data()[0] * t.data()[0], &x, 1e-5);
        assert_abs_diff_eq!(g.data()[0], 6.0, epsilon = 1e-8);
    }

    #[test]
    fn matches_analytic_matmul_gradient_on_2x2() {
        // f(A) = sum(A @ B); df/dA = ones @ B^T
        let b = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = Tensor::from_vec(&[2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let g = finite_difference_grad(|t| t.matmul(&b).unwrap().sum(), &a, 1e-5);
        let analytic = Tensor::full(&[2, 2], 1.0)
            .matmul(&b.transpose().unwrap())
            .unwrap();
        for (x, y) in g.data().iter().zip(analytic.data()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-6);
        }
    }
}
