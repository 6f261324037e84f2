//! Named traversal over the trainable matrices of a model.
//!
//! Gradients use the same container type as the parameters they belong to, so
//! the optimizer, the gradient checker and checkpoint I/O all work through
//! this one trait.

use crate::numerics::{central_diff_grad, Matrix};

pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix));

    fn named_matrices(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, m| out.push((name, m.clone())));
        out
    }

    fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, m| n += m.len());
        n
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut out = self.clone();
        out.visit_mut("", &mut |_, m| m.data_mut().fill(0.0));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Every parameter of `target` in visit order, paired with the same-named
/// parameter of `source`. Both must have the same structure.
pub fn zip_apply<P: Parameters>(target: &mut P, source: &P, mut f: impl FnMut(&str, &mut Matrix, &Matrix)) {
    let sources = source.named_matrices();
    let mut idx = 0;
    target.visit_mut("", &mut |name, m| {
        let (src_name, src) = &sources[idx];
        debug_assert_eq!(&name, src_name);
        f(&name, m, src);
        idx += 1;
    });
    assert_eq!(idx, sources.len(), "parameter structures differ");
}

/// Adds `alpha · source` into `target`, parameter by parameter.
pub fn accumulate<P: Parameters>(target: &mut P, source: &P, alpha: f64) {
    zip_apply(target, source, |_, t, s| {
        t.axpy(alpha, s).expect("gradient shapes mismatch");
    });
}

impl Parameters for Matrix {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        f(prefix.to_string(), self);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        f(prefix.to_string(), self);
    }
}

/// Overwrites the `index`-th visited matrix of `params` with `value`.
pub fn set_block<P: Parameters>(params: &mut P, index: usize, value: &Matrix) {
    let mut i = 0;
    params.visit_mut("", &mut |_, m| {
        if i == index {
            assert_eq!(m.shape(), value.shape(), "set_block shape mismatch");
            m.data_mut().copy_from_slice(value.data());
        }
        i += 1;
    });
}

/// Central-difference gradient of `loss` with respect to every parameter
/// block, returned in the parameters' own container.
pub fn finite_difference_grads<P: Parameters + Clone>(params: &P, loss: impl Fn(&P) -> f64, h: f64) -> P {
    let blocks = params.named_matrices();
    let mut grads = params.zeros_like();
    let mut work = params.clone();
    for (index, (_, block)) in blocks.iter().enumerate() {
        let g = central_diff_grad(
            |m| {
                set_block(&mut work, index, m);
                loss(&work)
            },
            block,
            h,
        );
        set_block(&mut work, index, block);
        set_block(&mut grads, index, &g);
    }
    grads
}
