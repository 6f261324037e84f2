//! Conformer-style convolution module:
//! pointwise `d → 2d`, GLU back to `d`, depthwise convolution over time with
//! zero "same" padding, layer norm, swish, pointwise `d → d`.

use crate::error::{Error, Result};
use crate::numerics::{
    layer_norm_backward, layer_norm_cached, sigmoid, swish, swish_grad, xavier_uniform_init, LayerNormCache, Matrix,
    Rng, LN_EPS,
};
use crate::params::{join, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvModuleParams {
    /// `d × 2d`
    pub pointwise_in: Matrix,
    pub pointwise_in_bias: Matrix,
    /// `kernel × d`, one column per channel.
    pub depthwise: Matrix,
    pub depthwise_bias: Matrix,
    pub norm_gamma: Matrix,
    pub norm_beta: Matrix,
    /// `d × d`
    pub pointwise_out: Matrix,
    pub pointwise_out_bias: Matrix,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    x: Matrix,
    expanded: Matrix,
    gated: Matrix,
    norm: LayerNormCache,
    normed: Matrix,
    activated: Matrix,
}

impl ConvModuleParams {
    pub fn init(d: usize, kernel: usize, rng: &mut Rng) -> Self {
        Self {
            pointwise_in: xavier_uniform_init(d, 2 * d, rng),
            pointwise_in_bias: Matrix::zeros(1, 2 * d),
            depthwise: xavier_uniform_init(kernel, d, rng),
            depthwise_bias: Matrix::zeros(1, d),
            norm_gamma: Matrix::filled(1, d, 1.0),
            norm_beta: Matrix::zeros(1, d),
            pointwise_out: xavier_uniform_init(d, d, rng),
            pointwise_out_bias: Matrix::zeros(1, d),
        }
    }

    pub fn kernel(&self) -> usize {
        self.depthwise.rows()
    }

    fn validate(&self, x: &Matrix) -> Result<()> {
        let d = self.pointwise_out.rows();
        if x.cols() != d {
            return Err(Error::shape("conv module input", x.shape(), (x.rows(), d)));
        }
        if self.kernel().is_multiple_of(2) {
            return Err(Error::Config(format!("conv kernel {} must be odd", self.kernel())));
        }
        if self.pointwise_in.shape() != (d, 2 * d) || self.depthwise.cols() != d {
            return Err(Error::shape(
                "conv module weights",
                self.pointwise_in.shape(),
                (d, 2 * d),
            ));
        }
        Ok(())
    }
}

impl Parameters for ConvModuleParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        f(join(prefix, "pointwise_in"), &self.pointwise_in);
        f(join(prefix, "pointwise_in_bias"), &self.pointwise_in_bias);
        f(join(prefix, "depthwise"), &self.depthwise);
        f(join(prefix, "depthwise_bias"), &self.depthwise_bias);
        f(join(prefix, "norm.gamma"), &self.norm_gamma);
        f(join(prefix, "norm.beta"), &self.norm_beta);
        f(join(prefix, "pointwise_out"), &self.pointwise_out);
        f(join(prefix, "pointwise_out_bias"), &self.pointwise_out_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        f(join(prefix, "pointwise_in"), &mut self.pointwise_in);
        f(join(prefix, "pointwise_in_bias"), &mut self.pointwise_in_bias);
        f(join(prefix, "depthwise"), &mut self.depthwise);
        f(join(prefix, "depthwise_bias"), &mut self.depthwise_bias);
        f(join(prefix, "norm.gamma"), &mut self.norm_gamma);
        f(join(prefix, "norm.beta"), &mut self.norm_beta);
        f(join(prefix, "pointwise_out"), &mut self.pointwise_out);
        f(join(prefix, "pointwise_out_bias"), &mut self.pointwise_out_bias);
    }
}

/// Per-channel 1-D convolution over time, zero padded so length is kept.
fn depthwise_conv(x: &Matrix, kernel: &Matrix, bias: &Matrix) -> Matrix {
    let (len, d) = x.shape();
    let half = kernel.rows() / 2;
    let mut out = Matrix::zeros(len, d);
    for t in 0..len {
        let row = out.row_mut(t);
        row.copy_from_slice(bias.data());
        for m in 0..kernel.rows() {
            let Some(s) = (t + m).checked_sub(half).filter(|s| *s < len) else {
                continue;
            };
            for ((o, &k), &v) in row.iter_mut().zip(kernel.row(m)).zip(x.row(s)) {
                *o += k * v;
            }
        }
    }
    out
}

pub fn conv_module_forward(x: &Matrix, p: &ConvModuleParams) -> Result<Matrix> {
    conv_module_forward_cached(x, p).map(|(y, _)| y)
}

pub fn conv_module_forward_cached(x: &Matrix, p: &ConvModuleParams) -> Result<(Matrix, ConvCache)> {
    p.validate(x)?;
    let d = x.cols();
    let expanded = x.matmul(&p.pointwise_in)?.add_row_vector(&p.pointwise_in_bias)?;
    let gated = Matrix::from_fn(x.rows(), d, |t, c| expanded.get(t, c) * sigmoid(expanded.get(t, c + d)));
    let conv = depthwise_conv(&gated, &p.depthwise, &p.depthwise_bias);
    let (normed, norm) = layer_norm_cached(&conv, &p.norm_gamma, &p.norm_beta, LN_EPS)?;
    let activated = normed.map(swish);
    let y = activated
        .matmul(&p.pointwise_out)?
        .add_row_vector(&p.pointwise_out_bias)?;
    Ok((
        y,
        ConvCache {
            x: x.clone(),
            expanded,
            gated,
            norm,
            normed,
            activated,
        },
    ))
}

pub fn conv_module_backward(
    p: &ConvModuleParams,
    cache: &ConvCache,
    dy: &Matrix,
) -> Result<(ConvModuleParams, Matrix)> {
    let (len, d) = cache.gated.shape();
    let pointwise_out = cache.activated.matmul_tn(dy)?;
    let pointwise_out_bias = dy.column_sums();
    let d_act = dy.matmul_nt(&p.pointwise_out)?;
    let d_normed = Matrix::from_fn(len, d, |t, c| d_act.get(t, c) * swish_grad(cache.normed.get(t, c)));
    let (d_conv, norm_gamma, norm_beta) = layer_norm_backward(&cache.norm, &p.norm_gamma, &d_normed)?;

    let half = p.kernel() / 2;
    let mut depthwise = Matrix::zeros(p.kernel(), d);
    let mut d_gated = Matrix::zeros(len, d);
    for t in 0..len {
        for m in 0..p.kernel() {
            let Some(s) = (t + m).checked_sub(half).filter(|s| *s < len) else {
                continue;
            };
            for c in 0..d {
                let g = d_conv.get(t, c);
                depthwise.data_mut()[m * d + c] += g * cache.gated.get(s, c);
                d_gated.data_mut()[s * d + c] += g * p.depthwise.get(m, c);
            }
        }
    }
    let depthwise_bias = d_conv.column_sums();

    let mut d_expanded = Matrix::zeros(len, 2 * d);
    for t in 0..len {
        for c in 0..d {
            let a = cache.expanded.get(t, c);
            let s = sigmoid(cache.expanded.get(t, c + d));
            let g = d_gated.get(t, c);
            d_expanded.set(t, c, g * s);
            d_expanded.set(t, c + d, g * a * s * (1.0 - s));
        }
    }
    let pointwise_in = cache.x.matmul_tn(&d_expanded)?;
    let pointwise_in_bias = d_expanded.column_sums();
    let dx = d_expanded.matmul_nt(&p.pointwise_in)?;
    Ok((
        ConvModuleParams {
            pointwise_in,
            pointwise_in_bias,
            depthwise,
            depthwise_bias,
            norm_gamma,
            norm_beta,
            pointwise_out,
            pointwise_out_bias,
        },
        dx,
    ))
}
