//! Convolutional down-sampling frontend: two 3×3, stride-2, unpadded
//! convolutions (each followed by ReLU) over the time × frequency plane, a
//! linear projection of the flattened channels to `d`, and optional sinusoidal
//! positional encoding.

use crate::error::{Error, Result};
use crate::numerics::{xavier_uniform_init, Matrix, Rng};
use crate::params::{join, Parameters};

const KERNEL: usize = 3;
const STRIDE: usize = 2;

/// Shortest input (in frames or frequency bins) that survives both stages.
pub const MIN_FRONTEND_LEN: usize = 7;

/// Output length of one unpadded 3-wide stride-2 pass.
pub fn conv_out_len(n: usize) -> usize {
    if n < KERNEL {
        0
    } else {
        (n - KERNEL) / STRIDE + 1
    }
}

/// Frames left after both stages: `⌊(⌊(T−1)/2⌋ − 1)/2⌋` for `T ≥ 7`.
pub fn frontend_out_len(n: usize) -> usize {
    conv_out_len(conv_out_len(n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontendParams {
    /// `channels × 9` (single input channel).
    pub conv1: Matrix,
    pub conv1_bias: Matrix,
    /// `channels × (channels·9)`
    pub conv2: Matrix,
    pub conv2_bias: Matrix,
    /// `(channels·freq_out) × d`
    pub proj: Matrix,
    pub proj_bias: Matrix,
    pub positional_encoding: bool,
}

impl FrontendParams {
    pub fn init(feat_dim: usize, channels: usize, d: usize, rng: &mut Rng) -> Self {
        let taps = KERNEL * KERNEL;
        let freq_out = frontend_out_len(feat_dim);
        Self {
            conv1: xavier_uniform_init(channels, taps, rng),
            conv1_bias: Matrix::zeros(1, channels),
            conv2: xavier_uniform_init(channels, channels * taps, rng),
            conv2_bias: Matrix::zeros(1, channels),
            proj: xavier_uniform_init(channels * freq_out, d, rng),
            proj_bias: Matrix::zeros(1, d),
            positional_encoding: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.conv1.rows()
    }

    pub fn d_model(&self) -> usize {
        self.proj.cols()
    }
}

impl Parameters for FrontendParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        f(join(prefix, "conv1"), &self.conv1);
        f(join(prefix, "conv1_bias"), &self.conv1_bias);
        f(join(prefix, "conv2"), &self.conv2);
        f(join(prefix, "conv2_bias"), &self.conv2_bias);
        f(join(prefix, "proj"), &self.proj);
        f(join(prefix, "proj_bias"), &self.proj_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        f(join(prefix, "conv1"), &mut self.conv1);
        f(join(prefix, "conv1_bias"), &mut self.conv1_bias);
        f(join(prefix, "conv2"), &mut self.conv2);
        f(join(prefix, "conv2_bias"), &mut self.conv2_bias);
        f(join(prefix, "proj"), &mut self.proj);
        f(join(prefix, "proj_bias"), &mut self.proj_bias);
    }
}

/// One `time × freq` plane per channel.
type FeatureMaps = Vec<Matrix>;

fn conv2d(input: &[Matrix], weight: &Matrix, bias: &Matrix) -> FeatureMaps {
    let (rows_in, cols_in) = input[0].shape();
    let (rows_out, cols_out) = (conv_out_len(rows_in), conv_out_len(cols_in));
    let taps = KERNEL * KERNEL;
    (0..weight.rows())
        .map(|o| {
            let w = weight.row(o);
            let mut out = Matrix::filled(rows_out, cols_out, bias.get(0, o));
            for (i, plane) in input.iter().enumerate() {
                let wi = &w[i * taps..(i + 1) * taps];
                for t in 0..rows_out {
                    for f in 0..cols_out {
                        let mut acc = 0.0;
                        for kt in 0..KERNEL {
                            let src = &plane.row(STRIDE * t + kt)[STRIDE * f..STRIDE * f + KERNEL];
                            for (kf, &v) in src.iter().enumerate() {
                                acc += wi[kt * KERNEL + kf] * v;
                            }
                        }
                        out.data_mut()[t * cols_out + f] += acc;
                    }
                }
            }
            out
        })
        .collect()
}

/// Returns `(dW, db, d_input)`; `d_input` is skipped when `need_input` is false.
fn conv2d_backward(
    input: &[Matrix],
    weight: &Matrix,
    d_out: &[Matrix],
    need_input: bool,
) -> (Matrix, Matrix, Option<FeatureMaps>) {
    let taps = KERNEL * KERNEL;
    let (rows_in, cols_in) = input[0].shape();
    let mut d_weight = Matrix::zeros(weight.rows(), weight.cols());
    let d_bias = Matrix::row_vector(d_out.iter().map(Matrix::sum).collect());
    let mut d_input = need_input.then(|| vec![Matrix::zeros(rows_in, cols_in); input.len()]);
    for (o, g) in d_out.iter().enumerate() {
        let (rows_out, cols_out) = g.shape();
        for (i, plane) in input.iter().enumerate() {
            for t in 0..rows_out {
                for f in 0..cols_out {
                    let go = g.get(t, f);
                    if go == 0.0 {
                        continue;
                    }
                    for kt in 0..KERNEL {
                        for kf in 0..KERNEL {
                            let (r, c) = (STRIDE * t + kt, STRIDE * f + kf);
                            let tap = i * taps + kt * KERNEL + kf;
                            d_weight.data_mut()[o * weight.cols() + tap] += go * plane.get(r, c);
                            if let Some(d_in) = d_input.as_mut() {
                                d_in[i].data_mut()[r * cols_in + c] += go * weight.get(o, tap);
                            }
                        }
                    }
                }
            }
        }
    }
    (d_weight, d_bias, d_input)
}

fn relu_maps(maps: &mut FeatureMaps) {
    for m in maps.iter_mut() {
        m.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    }
}

fn mask_by_activation(grads: &mut FeatureMaps, activated: &[Matrix]) {
    for (g, a) in grads.iter_mut().zip(activated) {
        for (gv, &av) in g.data_mut().iter_mut().zip(a.data()) {
            if av <= 0.0 {
                *gv = 0.0;
            }
        }
    }
}

/// Channel-major flattening: row `t` is `[ch0 bins…, ch1 bins…, …]`.
fn flatten(maps: &[Matrix]) -> Matrix {
    let (len, bins) = maps[0].shape();
    Matrix::from_fn(len, maps.len() * bins, |t, k| maps[k / bins].get(t, k % bins))
}

fn unflatten(flat: &Matrix, channels: usize) -> FeatureMaps {
    let bins = flat.cols() / channels;
    (0..channels)
        .map(|ch| flat.columns(ch * bins, (ch + 1) * bins))
        .collect()
}

/// Sinusoidal encoding: `sin(t / 10000^(2i/d))` in even columns,
/// `cos` of the same angle in odd columns.
pub fn positional_encoding(len: usize, d: usize) -> Matrix {
    Matrix::from_fn(len, d, |t, k| {
        let i = (k / 2) as f64;
        let angle = t as f64 / 10000f64.powf(2.0 * i / d as f64);
        if k % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone)]
pub struct FrontendCache {
    input: FeatureMaps,
    stage1: FeatureMaps,
    stage2: FeatureMaps,
    flat: Matrix,
}

pub fn conv_frontend(features: &Matrix, p: &FrontendParams) -> Result<Matrix> {
    conv_frontend_cached(features, p).map(|(y, _)| y)
}

pub fn conv_frontend_cached(features: &Matrix, p: &FrontendParams) -> Result<(Matrix, FrontendCache)> {
    let (len, bins) = features.shape();
    if len < MIN_FRONTEND_LEN {
        return Err(Error::TooShort {
            len,
            min: MIN_FRONTEND_LEN,
        });
    }
    if bins < MIN_FRONTEND_LEN {
        return Err(Error::Config(format!(
            "{bins} frequency bins is below the frontend minimum of {MIN_FRONTEND_LEN}"
        )));
    }
    let channels = p.channels();
    let expected_flat = channels * frontend_out_len(bins);
    if p.proj.rows() != expected_flat || p.conv2.shape() != (channels, channels * 9) {
        return Err(Error::shape(
            "frontend projection",
            p.proj.shape(),
            (expected_flat, p.d_model()),
        ));
    }
    let input = vec![features.clone()];
    let mut stage1 = conv2d(&input, &p.conv1, &p.conv1_bias);
    relu_maps(&mut stage1);
    let mut stage2 = conv2d(&stage1, &p.conv2, &p.conv2_bias);
    relu_maps(&mut stage2);
    let flat = flatten(&stage2);
    let mut y = flat.matmul(&p.proj)?.add_row_vector(&p.proj_bias)?;
    if p.positional_encoding {
        y.add_assign(&positional_encoding(y.rows(), y.cols()))?;
    }
    Ok((
        y,
        FrontendCache {
            input,
            stage1,
            stage2,
            flat,
        },
    ))
}

/// Parameter gradients only; the input features are not trainable.
pub fn conv_frontend_backward(p: &FrontendParams, cache: &FrontendCache, dy: &Matrix) -> Result<FrontendParams> {
    let proj = cache.flat.matmul_tn(dy)?;
    let proj_bias = dy.column_sums();
    let mut d_stage2 = unflatten(&dy.matmul_nt(&p.proj)?, p.channels());
    mask_by_activation(&mut d_stage2, &cache.stage2);
    let (conv2, conv2_bias, d_stage1) = conv2d_backward(&cache.stage1, &p.conv2, &d_stage2, true);
    let mut d_stage1 = d_stage1.expect("requested input gradient");
    mask_by_activation(&mut d_stage1, &cache.stage1);
    let (conv1, conv1_bias, _) = conv2d_backward(&cache.input, &p.conv1, &d_stage1, false);
    Ok(FrontendParams {
        conv1,
        conv1_bias,
        conv2,
        conv2_bias,
        proj,
        proj_bias,
        positional_encoding: p.positional_encoding,
    })
}
