use crate::numerics::Matrix;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Central-difference gradient of a scalar function: each entry is
/// `(f(x + h·e) − f(x − h·e)) / 2h`.
pub fn central_diff_grad(mut f: impl FnMut(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
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

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both are zero.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    let diff = analytic.sub(numeric).expect("relative_error shape mismatch");
    let scale = analytic.frobenius_norm().max(numeric.frobenius_norm());
    if scale == 0.0 {
        0.0
    } else {
        diff.frobenius_norm() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{row_softmax, Rng};

    #[test]
    fn gradient_of_sum_is_ones() {
        let x = Rng::new(1).uniform_matrix(3, 4, -1.0, 1.0);
        let g = central_diff_grad(|m| m.sum(), &x, FD_STEP);
        assert!(g.max_abs_diff(&Matrix::filled(3, 4, 1.0)) < 1e-9);
    }

    #[test]
    fn gradient_of_half_square_norm_is_identity() {
        let x = Rng::new(2).uniform_matrix(3, 4, -1.0, 1.0);
        let g = central_diff_grad(|m| 0.5 * m.dot(m), &x, FD_STEP);
        assert!(g.max_abs_diff(&x) < 1e-8);
    }

    #[test]
    fn softmax_row_sums_are_constant() {
        let x = Rng::new(3).uniform_matrix(3, 5, -2.0, 2.0);
        let g = central_diff_grad(|m| row_softmax(m).sum(), &x, FD_STEP);
        assert!(g.max_abs() < 1e-8);
    }

    #[test]
    fn relative_error_cases() {
        let a = Matrix::from_rows(&[[1.0, 0.0]]);
        assert_eq!(relative_error(&a, &a), 0.0);
        assert_eq!(relative_error(&Matrix::zeros(1, 2), &Matrix::zeros(1, 2)), 0.0);
        let b = Matrix::from_rows(&[[0.0, 0.0]]);
        assert_eq!(relative_error(&a, &b), 1.0);
    }
}
