use crate::error::Result;
use crate::numerics::{relu, relu_backward, xavier_uniform_init, Matrix, Rng};
use crate::params::{join, Parameters};

/// Position-wise feed-forward layer `relu(x W_a + b_a) W_b + b_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnParams {
    pub w_a: Matrix,
    pub b_a: Matrix,
    pub w_b: Matrix,
    pub b_b: Matrix,
}

#[derive(Debug, Clone)]
pub struct FfnCache {
    x: Matrix,
    pre: Matrix,
    hidden: Matrix,
}

impl FfnParams {
    pub fn init(d: usize, inner: usize, rng: &mut Rng) -> Self {
        Self {
            w_a: xavier_uniform_init(d, inner, rng),
            b_a: Matrix::zeros(1, inner),
            w_b: xavier_uniform_init(inner, d, rng),
            b_b: Matrix::zeros(1, d),
        }
    }
}

impl Parameters for FfnParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        f(join(prefix, "w_a"), &self.w_a);
        f(join(prefix, "b_a"), &self.b_a);
        f(join(prefix, "w_b"), &self.w_b);
        f(join(prefix, "b_b"), &self.b_b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        f(join(prefix, "w_a"), &mut self.w_a);
        f(join(prefix, "b_a"), &mut self.b_a);
        f(join(prefix, "w_b"), &mut self.w_b);
        f(join(prefix, "b_b"), &mut self.b_b);
    }
}

pub fn ffn_forward(x: &Matrix, p: &FfnParams) -> Result<Matrix> {
    ffn_forward_cached(x, p).map(|(y, _)| y)
}

pub fn ffn_forward_cached(x: &Matrix, p: &FfnParams) -> Result<(Matrix, FfnCache)> {
    let pre = x.matmul(&p.w_a)?.add_row_vector(&p.b_a)?;
    let hidden = relu(&pre);
    let y = hidden.matmul(&p.w_b)?.add_row_vector(&p.b_b)?;
    Ok((
        y,
        FfnCache {
            x: x.clone(),
            pre,
            hidden,
        },
    ))
}

pub fn ffn_backward(p: &FfnParams, cache: &FfnCache, dy: &Matrix) -> Result<(FfnParams, Matrix)> {
    let w_b = cache.hidden.matmul_tn(dy)?;
    let b_b = dy.column_sums();
    let d_pre = relu_backward(&cache.pre, &dy.matmul_nt(&p.w_b)?)?;
    let w_a = cache.x.matmul_tn(&d_pre)?;
    let b_a = d_pre.column_sums();
    let dx = d_pre.matmul_nt(&p.w_a)?;
    Ok((FfnParams { w_a, b_a, w_b, b_b }, dx))
}
