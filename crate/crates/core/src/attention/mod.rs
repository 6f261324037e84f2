//! Multi-head attention mechanisms: scaled dot-product self-attention (SA),
//! dense synthesizer attention (DSA) and local dense synthesizer attention
//! (LDSA), each with a forward pass that also returns its attention weights
//! and a hand-written backward pass.
//!
//! All three share the same outer structure: `h` heads of width `d_k = d/h`
//! are concatenated along the feature axis and projected by a shared `Wo`.
//! The synthesizer variants predict each frame's attention row directly from
//! that frame, `B = softmax(relu(X W1) W2)`, instead of comparing queries with
//! keys. DSA predicts one logit per absolute position (up to `t_max`); LDSA
//! predicts `c` logits for a window centered on the current frame, so its cost
//! grows as `O(T·c)` instead of `O(T²)`.

mod band;
mod dsa;
mod ldsa;
mod sa;

use serde::{Deserialize, Serialize};

pub use band::band_expand;
pub use dsa::{dsa_weights, multihead_dsa, multihead_dsa_injected, DsaParams};
pub use ldsa::{ldsa_aggregate, ldsa_forward, ldsa_forward_injected, ldsa_weights, LdsaParams};
pub use sa::{multihead_sa, sdpa_head, SaHead, SaParams};

use crate::error::{Error, Result};
use crate::numerics::{relu_backward, softmax_backward, Matrix, Rng};
use crate::params::{join, Parameters};

/// Attention mechanism selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Sa,
    Dsa,
    Ldsa,
}

impl Mechanism {
    pub fn as_str(self) -> &'static str {
        match self {
            Mechanism::Sa => "sa",
            Mechanism::Dsa => "dsa",
            Mechanism::Ldsa => "ldsa",
        }
    }
}

/// Output sequence plus the per-head attention weights that produced it:
/// `T×T` for SA and DSA, `T×c` for LDSA.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub y: Matrix,
    pub weights: Vec<Matrix>,
}

/// Per-head weights of the synthesizer variants.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthHead {
    /// `d × d_k`
    pub w1: Matrix,
    /// `d_k × t_max` for DSA, `d_k × c` for LDSA
    pub w2: Matrix,
    /// `d × d_k`
    pub w3: Matrix,
}

impl Parameters for SynthHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        f(join(prefix, "w1"), &self.w1);
        f(join(prefix, "w2"), &self.w2);
        f(join(prefix, "w3"), &self.w3);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        f(join(prefix, "w1"), &mut self.w1);
        f(join(prefix, "w2"), &mut self.w2);
        f(join(prefix, "w3"), &mut self.w3);
    }
}

/// One attention layer of any mechanism.
#[derive(Debug, Clone, PartialEq)]
pub enum AttentionParams {
    Sa(SaParams),
    Dsa(DsaParams),
    Ldsa(LdsaParams),
}

/// Intermediate values a forward pass keeps for its backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Matrix,
    concat: Matrix,
    heads: Vec<HeadCache>,
}

#[derive(Debug, Clone)]
enum HeadCache {
    Sa {
        q: Matrix,
        k: Matrix,
        v: Matrix,
        probs: Matrix,
    },
    Synth {
        pre: Matrix,
        hidden: Matrix,
        v: Matrix,
        probs: Matrix,
    },
}

impl HeadCache {
    fn probs(&self) -> &Matrix {
        match self {
            HeadCache::Sa { probs, .. } | HeadCache::Synth { probs, .. } => probs,
        }
    }

    fn into_probs(self) -> Matrix {
        match self {
            HeadCache::Sa { probs, .. } | HeadCache::Synth { probs, .. } => probs,
        }
    }
}

/// Everything a forward pass computed, before it is split into the public
/// output and the backward cache.
pub(crate) struct ForwardParts {
    x: Matrix,
    concat: Matrix,
    y: Matrix,
    heads: Vec<HeadCache>,
}

impl ForwardParts {
    fn into_output(self) -> AttentionOutput {
        AttentionOutput {
            y: self.y,
            weights: self.heads.into_iter().map(HeadCache::into_probs).collect(),
        }
    }

    fn into_output_and_cache(self) -> (AttentionOutput, AttentionCache) {
        let weights = self.heads.iter().map(|h| h.probs().clone()).collect();
        (
            AttentionOutput { y: self.y, weights },
            AttentionCache {
                x: self.x,
                concat: self.concat,
                heads: self.heads,
            },
        )
    }
}

impl AttentionParams {
    /// Xavier-initialized layer. `context` is used by LDSA, `t_max` by DSA.
    pub fn init(
        mechanism: Mechanism,
        d: usize,
        heads: usize,
        context: usize,
        t_max: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(match mechanism {
            Mechanism::Sa => AttentionParams::Sa(SaParams::init(d, heads, rng)?),
            Mechanism::Dsa => AttentionParams::Dsa(DsaParams::init(d, heads, t_max, rng)?),
            Mechanism::Ldsa => AttentionParams::Ldsa(LdsaParams::init(d, heads, context, rng)?),
        })
    }

    pub fn mechanism(&self) -> Mechanism {
        match self {
            AttentionParams::Sa(_) => Mechanism::Sa,
            AttentionParams::Dsa(_) => Mechanism::Dsa,
            AttentionParams::Ldsa(_) => Mechanism::Ldsa,
        }
    }

    pub fn d_model(&self) -> usize {
        self.wo().rows()
    }

    pub fn num_heads(&self) -> usize {
        match self {
            AttentionParams::Sa(p) => p.heads.len(),
            AttentionParams::Dsa(p) => p.heads.len(),
            AttentionParams::Ldsa(p) => p.heads.len(),
        }
    }

    pub fn wo(&self) -> &Matrix {
        match self {
            AttentionParams::Sa(p) => &p.wo,
            AttentionParams::Dsa(p) => &p.wo,
            AttentionParams::Ldsa(p) => &p.wo,
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<AttentionOutput> {
        self.forward_parts(x).map(ForwardParts::into_output)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(AttentionOutput, AttentionCache)> {
        self.forward_parts(x).map(ForwardParts::into_output_and_cache)
    }

    fn forward_parts(&self, x: &Matrix) -> Result<ForwardParts> {
        match self {
            AttentionParams::Sa(p) => sa::forward_parts(x, p),
            AttentionParams::Dsa(p) => dsa::forward_parts(x, p),
            AttentionParams::Ldsa(p) => ldsa::forward_parts(x, p),
        }
    }

    /// Gradients of `⟨dy, Y⟩` with respect to every weight (returned in the
    /// same container) and with respect to the input.
    pub fn backward(&self, cache: &AttentionCache, dy: &Matrix) -> Result<(AttentionParams, Matrix)> {
        let x = &cache.x;
        let wo = self.wo();
        if dy.shape() != (x.rows(), wo.cols()) {
            return Err(Error::shape("attention backward", (x.rows(), wo.cols()), dy.shape()));
        }
        let d_wo = cache.concat.matmul_tn(dy)?;
        let d_concat = dy.matmul_nt(wo)?;
        let d_k = self.d_model() / self.num_heads();
        let mut dx = Matrix::zeros(x.rows(), x.cols());
        let grads = match self {
            AttentionParams::Sa(p) => {
                let mut heads = Vec::with_capacity(p.heads.len());
                for (i, (head, hc)) in p.heads.iter().zip(&cache.heads).enumerate() {
                    let du = d_concat.columns(i * d_k, (i + 1) * d_k);
                    heads.push(sa::head_backward(x, head, hc, &du, &mut dx)?);
                }
                AttentionParams::Sa(SaParams { heads, wo: d_wo })
            }
            AttentionParams::Dsa(p) => {
                let mut heads = Vec::with_capacity(p.heads.len());
                for (i, (head, hc)) in p.heads.iter().zip(&cache.heads).enumerate() {
                    let du = d_concat.columns(i * d_k, (i + 1) * d_k);
                    heads.push(dsa::head_backward(x, head, hc, &du, &mut dx)?);
                }
                AttentionParams::Dsa(DsaParams {
                    heads,
                    wo: d_wo,
                    t_max: p.t_max,
                })
            }
            AttentionParams::Ldsa(p) => {
                let mut heads = Vec::with_capacity(p.heads.len());
                for (i, (head, hc)) in p.heads.iter().zip(&cache.heads).enumerate() {
                    let du = d_concat.columns(i * d_k, (i + 1) * d_k);
                    heads.push(ldsa::head_backward(x, head, hc, &du, &mut dx)?);
                }
                AttentionParams::Ldsa(LdsaParams {
                    heads,
                    wo: d_wo,
                    context: p.context,
                })
            }
        };
        Ok((grads, dx))
    }
}

impl Parameters for AttentionParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        match self {
            AttentionParams::Sa(p) => p.visit(prefix, f),
            AttentionParams::Dsa(p) => p.visit(prefix, f),
            AttentionParams::Ldsa(p) => p.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        match self {
            AttentionParams::Sa(p) => p.visit_mut(prefix, f),
            AttentionParams::Dsa(p) => p.visit_mut(prefix, f),
            AttentionParams::Ldsa(p) => p.visit_mut(prefix, f),
        }
    }
}

/// Reverse-mode gradients for the scalar loss `⟨dy, attention(x)⟩`:
/// returns `(d_params, d_x)`.
pub fn attention_backward(params: &AttentionParams, x: &Matrix, dy: &Matrix) -> Result<(AttentionParams, Matrix)> {
    let (_, cache) = params.forward_cached(x)?;
    params.backward(&cache, dy)
}

pub(crate) fn check_heads(d: usize, heads: usize) -> Result<usize> {
    if heads == 0 || d == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "model width {d} must be a positive multiple of the head count {heads}"
        )));
    }
    Ok(d / heads)
}

pub(crate) fn check_input(x: &Matrix, d: usize) -> Result<()> {
    if x.cols() != d {
        return Err(Error::shape("attention input", x.shape(), (x.rows(), d)));
    }
    if x.rows() == 0 {
        return Err(Error::Config("attention over an empty sequence".into()));
    }
    Ok(())
}

/// Concatenates head outputs and applies the shared output projection.
pub(crate) fn project_heads(heads: &[Matrix], wo: &Matrix) -> Result<(Matrix, Matrix)> {
    let concat = Matrix::hcat(heads)?;
    let y = concat.matmul(wo)?;
    Ok((concat, y))
}

/// `dX += dQ·Wᵀ` style accumulation of an input gradient through `x·w`.
pub(crate) fn accumulate_input_grad(dx: &mut Matrix, d_proj: &Matrix, w: &Matrix) -> Result<()> {
    dx.add_assign(&d_proj.matmul_nt(w)?)
}

/// Shared tail of the synthesizer backward pass, from the gradient of the
/// attention weights back through `softmax(relu(X W1) W2)` and the value
/// projection. `w2_used` is the slice of `W2` that produced the logits.
/// Returns `(dW1, dW2_used, dW3)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn synth_backward(
    x: &Matrix,
    head: &SynthHead,
    w2_used: &Matrix,
    pre: &Matrix,
    hidden: &Matrix,
    probs: &Matrix,
    d_probs: &Matrix,
    dv: &Matrix,
    dx: &mut Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    let d_logits = softmax_backward(probs, d_probs)?;
    let d_w2 = hidden.matmul_tn(&d_logits)?;
    let d_hidden = d_logits.matmul_nt(w2_used)?;
    let d_pre = relu_backward(pre, &d_hidden)?;
    accumulate_input_grad(dx, &d_pre, &head.w1)?;
    accumulate_input_grad(dx, dv, &head.w3)?;
    Ok((x.matmul_tn(&d_pre)?, d_w2, x.matmul_tn(dv)?))
}
