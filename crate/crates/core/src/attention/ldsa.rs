use super::dsa::validate_synth_head;
use super::{check_heads, check_input, project_heads, synth_backward};
use super::{AttentionOutput, ForwardParts, HeadCache, SynthHead};
use crate::error::{Error, Result};
use crate::numerics::{relu, row_softmax, xavier_uniform_init, Matrix, Rng};
use crate::params::{join, Parameters};

/// Local dense synthesizer attention with an odd context width `c`.
///
/// Frame `t` spreads its `c` predicted weights over frames
/// `t − ⌊c/2⌋ ..= t + ⌊c/2⌋`. Window positions that fall outside the sequence
/// contribute nothing; the remaining weights are not renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LdsaParams {
    pub heads: Vec<SynthHead>,
    pub wo: Matrix,
    pub context: usize,
}

pub(crate) fn check_context(c: usize) -> Result<()> {
    if c == 0 || c.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "context width must be odd and positive, got {c}"
        )));
    }
    Ok(())
}

impl LdsaParams {
    pub fn init(d: usize, heads: usize, context: usize, rng: &mut Rng) -> Result<Self> {
        let d_k = check_heads(d, heads)?;
        check_context(context)?;
        let heads = (0..heads)
            .map(|_| SynthHead {
                w1: xavier_uniform_init(d, d_k, rng),
                w2: xavier_uniform_init(d_k, context, rng),
                w3: xavier_uniform_init(d, d_k, rng),
            })
            .collect();
        Ok(Self {
            heads,
            wo: xavier_uniform_init(d, d, rng),
            context,
        })
    }

    pub fn d_model(&self) -> usize {
        self.wo.rows()
    }

    pub fn validate(&self) -> Result<usize> {
        check_context(self.context)?;
        let d = self.wo.rows();
        if self.wo.cols() != d {
            return Err(Error::shape("LDSA Wo", self.wo.shape(), (d, d)));
        }
        let d_k = check_heads(d, self.heads.len())?;
        for head in &self.heads {
            validate_synth_head(head, d, d_k, self.context)?;
        }
        Ok(d_k)
    }
}

impl Parameters for LdsaParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        for (i, head) in self.heads.iter().enumerate() {
            head.visit(&join(prefix, &format!("head{i}")), f);
        }
        f(join(prefix, "wo"), &self.wo);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        for (i, head) in self.heads.iter_mut().enumerate() {
            head.visit_mut(&join(prefix, &format!("head{i}")), f);
        }
        f(join(prefix, "wo"), &mut self.wo);
    }
}

/// `B = softmax(relu(X W1) W2)`, shape `T×c`. `B[t][j]` is the weight frame
/// `t` gives to frame `t + j − ⌊c/2⌋`.
pub fn ldsa_weights(x: &Matrix, w1: &Matrix, w2: &Matrix) -> Result<Matrix> {
    check_context(w2.cols())?;
    let pre = x.matmul(w1)?;
    Ok(row_softmax(&relu(&pre).matmul(w2)?))
}

/// Windowed sum `Y_t = Σ_j B[t][j] · V[t + j − ⌊c/2⌋]`, skipping positions
/// outside `0..T`.
pub fn ldsa_aggregate(b: &Matrix, v: &Matrix) -> Result<Matrix> {
    let (len, c) = b.shape();
    check_context(c)?;
    if v.rows() != len {
        return Err(Error::shape("ldsa_aggregate", b.shape(), v.shape()));
    }
    let half = c / 2;
    let mut y = Matrix::zeros(len, v.cols());
    for t in 0..len {
        let (lo, hi) = window(t, half, len);
        let out = y.row_mut(t);
        for s in lo..hi {
            let w = b.get(t, s + half - t);
            for (o, &vv) in out.iter_mut().zip(v.row(s)) {
                *o += w * vv;
            }
        }
    }
    Ok(y)
}

/// In-range source frames `[lo, hi)` of the window centered on `t`.
#[inline]
fn window(t: usize, half: usize, len: usize) -> (usize, usize) {
    (t.saturating_sub(half), (t + half + 1).min(len))
}

pub fn ldsa_forward(x: &Matrix, p: &LdsaParams) -> Result<AttentionOutput> {
    forward_parts(x, p).map(ForwardParts::into_output)
}

pub(super) fn forward_parts(x: &Matrix, p: &LdsaParams) -> Result<ForwardParts> {
    p.validate()?;
    check_input(x, p.d_model())?;
    let mut outs = Vec::with_capacity(p.heads.len());
    let mut heads = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let pre = x.matmul(&head.w1)?;
        let hidden = relu(&pre);
        let probs = row_softmax(&hidden.matmul(&head.w2)?);
        let v = x.matmul(&head.w3)?;
        outs.push(ldsa_aggregate(&probs, &v)?);
        heads.push(HeadCache::Synth { pre, hidden, v, probs });
    }
    let (concat, y) = project_heads(&outs, &p.wo)?;
    Ok(ForwardParts {
        x: x.clone(),
        concat,
        y,
        heads,
    })
}

/// LDSA aggregation with caller-supplied `T×c` weights per head in place of
/// the predicted ones.
pub fn ldsa_forward_injected(x: &Matrix, p: &LdsaParams, weights: &[Matrix]) -> Result<Matrix> {
    p.validate()?;
    check_input(x, p.d_model())?;
    if weights.len() != p.heads.len() {
        return Err(Error::Config(format!(
            "{} injected weight matrices for {} heads",
            weights.len(),
            p.heads.len()
        )));
    }
    let mut outs = Vec::with_capacity(p.heads.len());
    for (head, b) in p.heads.iter().zip(weights) {
        if b.shape() != (x.rows(), p.context) {
            return Err(Error::shape("injected LDSA weights", b.shape(), (x.rows(), p.context)));
        }
        outs.push(ldsa_aggregate(b, &x.matmul(&head.w3)?)?);
    }
    project_heads(&outs, &p.wo).map(|(_, y)| y)
}

pub(super) fn head_backward(
    x: &Matrix,
    head: &SynthHead,
    cache: &HeadCache,
    du: &Matrix,
    dx: &mut Matrix,
) -> Result<SynthHead> {
    let HeadCache::Synth { pre, hidden, v, probs } = cache else {
        unreachable!("LDSA head with an SA cache");
    };
    let (len, c) = probs.shape();
    let half = c / 2;
    let mut d_probs = Matrix::zeros(len, c);
    let mut dv = Matrix::zeros(len, v.cols());
    for t in 0..len {
        let (lo, hi) = window(t, half, len);
        let du_t = du.row(t);
        for s in lo..hi {
            let j = s + half - t;
            d_probs.set(t, j, du_t.iter().zip(v.row(s)).map(|(a, b)| a * b).sum());
            let w = probs.get(t, j);
            for (o, &g) in dv.row_mut(s).iter_mut().zip(du_t) {
                *o += w * g;
            }
        }
    }
    let (w1, w2, w3) = synth_backward(x, head, &head.w2, pre, hidden, probs, &d_probs, &dv, dx)?;
    Ok(SynthHead { w1, w2, w3 })
}
