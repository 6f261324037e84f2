use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::params::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// Moment accumulators, one per parameter matrix in visit order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &impl Parameters, config: AdamConfig) -> Self {
        let mut m = Vec::new();
        params.visit("", &mut |_, p| m.push(Matrix::zeros(p.rows(), p.cols())));
        Self {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update: `θ ← θ − lr · m̂ / (√v̂ + eps)`.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState, lr: f64) -> Result<()> {
    let AdamConfig { beta1, beta2, eps } = state.config;
    let mut shapes = Vec::with_capacity(state.m.len());
    params.visit("", &mut |_, p| shapes.push(p.shape()));
    let mut grad_shapes = Vec::with_capacity(shapes.len());
    grads.visit("", &mut |_, g| grad_shapes.push(g.shape()));
    let state_shapes: Vec<_> = state.m.iter().map(Matrix::shape).collect();
    if shapes != grad_shapes || shapes != state_shapes {
        return Err(Error::Config(
            "gradients, parameters and optimizer state differ in structure".into(),
        ));
    }

    let mut i = 0;
    grads.visit("", &mut |_, g| {
        for ((m, v), &g) in state.m[i]
            .data_mut()
            .iter_mut()
            .zip(state.v[i].data_mut())
            .zip(g.data())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
        }
        i += 1;
    });
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    let mut i = 0;
    params.visit_mut("", &mut |_, p| {
        for ((x, &m), &v) in p.data_mut().iter_mut().zip(state.m[i].data()).zip(state.v[i].data()) {
            *x -= lr * (m / c1) / ((v / c2).sqrt() + eps);
        }
        i += 1;
    });
    Ok(())
}
