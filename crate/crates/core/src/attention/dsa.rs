use super::{check_heads, check_input, project_heads, synth_backward};
use super::{AttentionOutput, ForwardParts, HeadCache, SynthHead};
use crate::error::{Error, Result};
use crate::numerics::{relu, row_softmax, xavier_uniform_init, Matrix, Rng};
use crate::params::{join, Parameters};

/// Dense synthesizer attention. `W2` has one column per absolute position up
/// to `t_max`; a sequence of length `T` uses the first `T` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DsaParams {
    pub heads: Vec<SynthHead>,
    pub wo: Matrix,
    pub t_max: usize,
}

impl DsaParams {
    pub fn init(d: usize, heads: usize, t_max: usize, rng: &mut Rng) -> Result<Self> {
        let d_k = check_heads(d, heads)?;
        if t_max == 0 {
            return Err(Error::Config("DSA t_max must be at least 1".into()));
        }
        let heads = (0..heads)
            .map(|_| SynthHead {
                w1: xavier_uniform_init(d, d_k, rng),
                w2: xavier_uniform_init(d_k, t_max, rng),
                w3: xavier_uniform_init(d, d_k, rng),
            })
            .collect();
        Ok(Self {
            heads,
            wo: xavier_uniform_init(d, d, rng),
            t_max,
        })
    }

    pub fn d_model(&self) -> usize {
        self.wo.rows()
    }

    pub fn validate(&self) -> Result<usize> {
        let d = self.wo.rows();
        if self.wo.cols() != d {
            return Err(Error::shape("DSA Wo", self.wo.shape(), (d, d)));
        }
        let d_k = check_heads(d, self.heads.len())?;
        for head in &self.heads {
            validate_synth_head(head, d, d_k, self.t_max)?;
        }
        Ok(d_k)
    }
}

pub(super) fn validate_synth_head(head: &SynthHead, d: usize, d_k: usize, w2_cols: usize) -> Result<()> {
    if head.w1.shape() != (d, d_k) {
        return Err(Error::shape("synthesizer W1", head.w1.shape(), (d, d_k)));
    }
    if head.w2.shape() != (d_k, w2_cols) {
        return Err(Error::shape("synthesizer W2", head.w2.shape(), (d_k, w2_cols)));
    }
    if head.w3.shape() != (d, d_k) {
        return Err(Error::shape("synthesizer W3", head.w3.shape(), (d, d_k)));
    }
    Ok(())
}

impl Parameters for DsaParams {
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

/// `B = softmax(relu(X W1) W2[:, :T])`, shape `T×T`.
pub fn dsa_weights(x: &Matrix, w1: &Matrix, w2: &Matrix, len: usize) -> Result<Matrix> {
    let (probs, _, _) = weights_with_hidden(x, w1, w2, len)?;
    Ok(probs)
}

fn weights_with_hidden(x: &Matrix, w1: &Matrix, w2: &Matrix, len: usize) -> Result<(Matrix, Matrix, Matrix)> {
    if len > w2.cols() {
        return Err(Error::Capacity { len, t_max: w2.cols() });
    }
    if x.rows() != len {
        return Err(Error::shape("dsa_weights input", x.shape(), (len, w1.rows())));
    }
    let pre = x.matmul(w1)?;
    let hidden = relu(&pre);
    let logits = hidden.matmul(&w2.columns(0, len))?;
    Ok((row_softmax(&logits), pre, hidden))
}

pub fn multihead_dsa(x: &Matrix, p: &DsaParams) -> Result<AttentionOutput> {
    forward_parts(x, p).map(ForwardParts::into_output)
}

pub(super) fn forward_parts(x: &Matrix, p: &DsaParams) -> Result<ForwardParts> {
    p.validate()?;
    check_input(x, p.d_model())?;
    if x.rows() > p.t_max {
        return Err(Error::Capacity {
            len: x.rows(),
            t_max: p.t_max,
        });
    }
    let mut outs = Vec::with_capacity(p.heads.len());
    let mut heads = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let (probs, pre, hidden) = weights_with_hidden(x, &head.w1, &head.w2, x.rows())?;
        let v = x.matmul(&head.w3)?;
        outs.push(probs.matmul(&v)?);
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

/// DSA aggregation with caller-supplied attention weights in place of the
/// predicted ones: `Concat(B_i X W3_i) Wo`.
pub fn multihead_dsa_injected(x: &Matrix, p: &DsaParams, weights: &[Matrix]) -> Result<Matrix> {
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
        if b.shape() != (x.rows(), x.rows()) {
            return Err(Error::shape("injected DSA weights", b.shape(), (x.rows(), x.rows())));
        }
        outs.push(b.matmul(&x.matmul(&head.w3)?)?);
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
        unreachable!("DSA head with an SA cache");
    };
    let len = x.rows();
    let d_probs = du.matmul_nt(v)?;
    let dv = probs.matmul_tn(du)?;
    let w2_used = head.w2.columns(0, len);
    let (w1, d_w2_used, w3) = synth_backward(x, head, &w2_used, pre, hidden, probs, &d_probs, &dv, dx)?;
    let mut w2 = Matrix::zeros(head.w2.rows(), head.w2.cols());
    w2.set_columns(0, &d_w2_used)?;
    Ok(SynthHead { w1, w2, w3 })
}
