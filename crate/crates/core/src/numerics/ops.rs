//! Activations, softmax and layer normalization, with their reverse-mode
//! counterparts.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Default layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

/// Row-wise softmax with max subtraction.
pub fn row_softmax(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Gradient of the logits given softmax outputs `probs` and the upstream
/// gradient `d_probs`: `p ⊙ (dp − ⟨dp, p⟩)` per row.
pub fn softmax_backward(probs: &Matrix, d_probs: &Matrix) -> Result<Matrix> {
    if probs.shape() != d_probs.shape() {
        return Err(Error::shape("softmax_backward", probs.shape(), d_probs.shape()));
    }
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dp = d_probs.row(r);
        let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for ((o, &pi), &dpi) in out.row_mut(r).iter_mut().zip(p).zip(dp) {
            *o = pi * (dpi - inner);
        }
    }
    Ok(out)
}

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

/// Masks `upstream` by the sign of the pre-activation `pre`.
pub fn relu_backward(pre: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if pre.shape() != upstream.shape() {
        return Err(Error::shape("relu_backward", pre.shape(), upstream.shape()));
    }
    let data = pre
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect();
    Matrix::new(pre.rows(), pre.cols(), data)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x · σ(x)`.
#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Saved statistics for [`layer_norm_backward`].
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

/// Per-row normalization with population variance and `eps` inside the root,
/// then `gamma ⊙ x̂ + beta`. `gamma` and `beta` are `1×d` row vectors.
pub fn layer_norm(x: &Matrix, gamma: &Matrix, beta: &Matrix, eps: f64) -> Result<Matrix> {
    layer_norm_cached(x, gamma, beta, eps).map(|(y, _)| y)
}

pub fn layer_norm_cached(x: &Matrix, gamma: &Matrix, beta: &Matrix, eps: f64) -> Result<(Matrix, LayerNormCache)> {
    let d = x.cols();
    if gamma.shape() != (1, d) {
        return Err(Error::shape("layer_norm gamma", x.shape(), gamma.shape()));
    }
    if beta.shape() != (1, d) {
        return Err(Error::shape("layer_norm beta", x.shape(), beta.shape()));
    }
    if !(eps > 0.0) {
        return Err(Error::Config(format!("layer_norm eps must be positive, got {eps}")));
    }
    let mut normalized = Matrix::zeros(x.rows(), d);
    let mut out = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std.push(istd);
        let n_row = normalized.row_mut(r);
        for (n, &v) in n_row.iter_mut().zip(row) {
            *n = (v - mean) * istd;
        }
        let n_row = normalized.row(r).to_vec();
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = gamma.data()[c] * n_row[c] + beta.data()[c];
        }
    }
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward(cache: &LayerNormCache, gamma: &Matrix, dy: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let x_hat = &cache.normalized;
    if dy.shape() != x_hat.shape() {
        return Err(Error::shape("layer_norm_backward", x_hat.shape(), dy.shape()));
    }
    let d = x_hat.cols();
    let d_gamma = x_hat.hadamard(dy)?.column_sums();
    let d_beta = dy.column_sums();
    let mut dx = Matrix::zeros(x_hat.rows(), d);
    for r in 0..x_hat.rows() {
        let xr = x_hat.row(r);
        let dxhat: Vec<f64> = dy.row(r).iter().zip(gamma.data()).map(|(g, w)| g * w).collect();
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_x = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let istd = cache.inv_std[r];
        for ((o, &g), &xh) in dx.row_mut(r).iter_mut().zip(&dxhat).zip(xr) {
            *o = istd * (g - mean_dxhat - xh * mean_dxhat_x);
        }
    }
    Ok((dx, d_gamma, d_beta))
}
