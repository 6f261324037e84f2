use super::{accumulate_input_grad, check_heads, check_input, project_heads};
use super::{AttentionOutput, ForwardParts, HeadCache};
use crate::error::{Error, Result};
use crate::numerics::{row_softmax, softmax_backward, xavier_uniform_init, Matrix, Rng};
use crate::params::{join, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct SaHead {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
}

/// Multi-head dot-product self-attention weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SaParams {
    pub heads: Vec<SaHead>,
    /// `d × d`
    pub wo: Matrix,
}

impl SaParams {
    pub fn init(d: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        let d_k = check_heads(d, heads)?;
        let heads = (0..heads)
            .map(|_| SaHead {
                wq: xavier_uniform_init(d, d_k, rng),
                wk: xavier_uniform_init(d, d_k, rng),
                wv: xavier_uniform_init(d, d_k, rng),
            })
            .collect();
        Ok(Self {
            heads,
            wo: xavier_uniform_init(d, d, rng),
        })
    }

    pub fn d_model(&self) -> usize {
        self.wo.rows()
    }

    pub fn validate(&self) -> Result<usize> {
        let d = self.wo.rows();
        if self.wo.cols() != d {
            return Err(Error::shape("SA Wo", self.wo.shape(), (d, d)));
        }
        let d_k = check_heads(d, self.heads.len())?;
        for head in &self.heads {
            for w in [&head.wq, &head.wk, &head.wv] {
                if w.shape() != (d, d_k) {
                    return Err(Error::shape("SA head projection", w.shape(), (d, d_k)));
                }
            }
        }
        Ok(d_k)
    }
}

impl Parameters for SaParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        for (i, head) in self.heads.iter().enumerate() {
            let p = join(prefix, &format!("head{i}"));
            f(join(&p, "wq"), &head.wq);
            f(join(&p, "wk"), &head.wk);
            f(join(&p, "wv"), &head.wv);
        }
        f(join(prefix, "wo"), &self.wo);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        for (i, head) in self.heads.iter_mut().enumerate() {
            let p = join(prefix, &format!("head{i}"));
            f(join(&p, "wq"), &mut head.wq);
            f(join(&p, "wk"), &mut head.wk);
            f(join(&p, "wv"), &mut head.wv);
        }
        f(join(prefix, "wo"), &mut self.wo);
    }
}

/// One scaled dot-product head, `softmax(Q Kᵀ / √d_k) V`, without masking.
pub fn sdpa_head(x: &Matrix, wq: &Matrix, wk: &Matrix, wv: &Matrix) -> Result<Matrix> {
    let (u, _) = head_forward(x, wq, wk, wv)?;
    Ok(u)
}

fn head_forward(x: &Matrix, wq: &Matrix, wk: &Matrix, wv: &Matrix) -> Result<(Matrix, HeadCache)> {
    if x.rows() == 0 {
        return Err(Error::Config("attention over an empty sequence".into()));
    }
    if wq.shape() != wk.shape() || wq.shape() != wv.shape() {
        return Err(Error::shape("sdpa_head projections", wq.shape(), wk.shape()));
    }
    let q = x.matmul(wq)?;
    let k = x.matmul(wk)?;
    let v = x.matmul(wv)?;
    let scale = 1.0 / (wq.cols() as f64).sqrt();
    let probs = row_softmax(&q.matmul_nt(&k)?.scale(scale));
    let u = probs.matmul(&v)?;
    Ok((u, HeadCache::Sa { q, k, v, probs }))
}

/// `Concat(U_1, …, U_h) Wo` over dot-product heads.
pub fn multihead_sa(x: &Matrix, p: &SaParams) -> Result<AttentionOutput> {
    forward_parts(x, p).map(ForwardParts::into_output)
}

pub(super) fn forward_parts(x: &Matrix, p: &SaParams) -> Result<ForwardParts> {
    p.validate()?;
    check_input(x, p.d_model())?;
    let mut outs = Vec::with_capacity(p.heads.len());
    let mut heads = Vec::with_capacity(p.heads.len());
    for head in &p.heads {
        let (u, cache) = head_forward(x, &head.wq, &head.wk, &head.wv)?;
        outs.push(u);
        heads.push(cache);
    }
    let (concat, y) = project_heads(&outs, &p.wo)?;
    Ok(ForwardParts {
        x: x.clone(),
        concat,
        y,
        heads,
    })
}

pub(super) fn head_backward(
    x: &Matrix,
    head: &SaHead,
    cache: &HeadCache,
    du: &Matrix,
    dx: &mut Matrix,
) -> Result<SaHead> {
    let HeadCache::Sa { q, k, v, probs } = cache else {
        unreachable!("SA head with a synthesizer cache");
    };
    let scale = 1.0 / (head.wq.cols() as f64).sqrt();
    let dv = probs.matmul_tn(du)?;
    let d_probs = du.matmul_nt(v)?;
    let d_scores = softmax_backward(probs, &d_probs)?.scale(scale);
    let dq = d_scores.matmul(k)?;
    let dk = d_scores.matmul_tn(q)?;
    accumulate_input_grad(dx, &dq, &head.wq)?;
    accumulate_input_grad(dx, &dk, &head.wk)?;
    accumulate_input_grad(dx, &dv, &head.wv)?;
    Ok(SaHead {
        wq: x.matmul_tn(&dq)?,
        wk: x.matmul_tn(&dk)?,
        wv: x.matmul_tn(&dv)?,
    })
}
