//! Analytic-vs-finite-difference gradient checks at fixed small shapes.

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, Mechanism};
use crate::encoder::{
    encoder_backward, encoder_block_backward, encoder_block_forward, encoder_block_forward_cached, encoder_forward,
    encoder_forward_cached, BlockParams, EncoderConfig, EncoderParams, Variant,
};
use crate::error::Result;
use crate::numerics::{central_diff_grad, relative_error, Matrix, Rng, FD_STEP};
use crate::params::{finite_difference_grads, Parameters};

pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const BLOCK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    /// `layer`, `block` or `encoder`.
    pub level: String,
    /// Mechanism or block variant plus shape, e.g. `ldsa h=2 T=6 d=8`.
    pub case: String,
    /// Parameter block name, or `x` for the input gradient.
    pub parameter: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Test hook: adds `delta` to the analytic gradient of one parameter block
/// before comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Fault {
    pub case_prefix: String,
    pub parameter: String,
    pub delta: f64,
}

struct Suite<'a> {
    reports: Vec<GradReport>,
    fault: Option<&'a Fault>,
}

impl Suite<'_> {
    fn compare(
        &mut self,
        level: &str,
        case: &str,
        tol: f64,
        analytic: Vec<(String, Matrix)>,
        numeric: Vec<(String, Matrix)>,
    ) {
        for ((name, mut a), (_, n)) in analytic.into_iter().zip(numeric) {
            if let Some(f) = self.fault {
                if case.starts_with(&f.case_prefix) && name == f.parameter {
                    a = a.map(|v| v + f.delta);
                }
            }
            let err = relative_error(&a, &n);
            self.reports.push(GradReport {
                level: level.into(),
                case: case.into(),
                parameter: name,
                max_rel_error: err,
                tolerance: tol,
                passed: err < tol,
            });
        }
    }
}

fn randomize_small_params(p: &mut impl Parameters, rng: &mut Rng) {
    // Bias and norm vectors start at constants; perturb them so every path carries signal.
    p.visit_mut("", &mut |name, m| {
        if m.rows() == 1 {
            let (lo, hi) = if name.ends_with("gamma") {
                (0.7, 1.3)
            } else {
                (-0.2, 0.2)
            };
            *m = rng.uniform_matrix(1, m.cols(), lo, hi);
        }
    });
}

fn layer_checks(suite: &mut Suite, rng: &mut Rng) -> Result<()> {
    let (len, d, c) = (6, 8, 3);
    for mech in [Mechanism::Sa, Mechanism::Dsa, Mechanism::Ldsa] {
        for h in [1, 2] {
            let p = AttentionParams::init(mech, d, h, c, 8, rng)?;
            let x = rng.uniform_matrix(len, d, -1.0, 1.0);
            let dy = rng.uniform_matrix(len, d, -1.0, 1.0);
            let (_, cache) = p.forward_cached(&x)?;
            let (g, dx) = p.backward(&cache, &dy)?;
            let fd = finite_difference_grads(&p, |q| q.forward(&x).map(|o| o.y.dot(&dy)).unwrap_or(f64::NAN), FD_STEP);
            let fd_x = central_diff_grad(|m| p.forward(m).map(|o| o.y.dot(&dy)).unwrap_or(f64::NAN), &x, FD_STEP);
            let case = format!("{} h={h} T={len} d={d}", mech.as_str());
            let mut analytic = g.named_matrices();
            let mut numeric = fd.named_matrices();
            analytic.push(("x".into(), dx));
            numeric.push(("x".into(), fd_x));
            suite.compare("layer", &case, LAYER_TOLERANCE, analytic, numeric);
        }
    }
    Ok(())
}

fn small_config(variant: Variant) -> EncoderConfig {
    EncoderConfig {
        variant,
        n_blocks: 1,
        d: 8,
        h: 2,
        c: 3,
        conv_kernel: 3,
        ffn_inner: 16,
        t_max: 8,
        feat_dim: 9,
    }
}

fn block_checks(suite: &mut Suite, rng: &mut Rng) -> Result<()> {
    let len = 6;
    for v in Variant::ALL {
        let cfg = small_config(v);
        let mut p = BlockParams::init(&cfg, rng)?;
        randomize_small_params(&mut p, rng);
        let x = rng.uniform_matrix(len, cfg.d, -1.0, 1.0);
        let dy = rng.uniform_matrix(len, cfg.d, -1.0, 1.0);
        let (_, cache) = encoder_block_forward_cached(&x, &p)?;
        let (g, dx) = encoder_block_backward(&p, &cache, &dy)?;
        let fd = finite_difference_grads(
            &p,
            |q| encoder_block_forward(&x, q).map(|y| y.dot(&dy)).unwrap_or(f64::NAN),
            FD_STEP,
        );
        let fd_x = central_diff_grad(
            |m| encoder_block_forward(m, &p).map(|y| y.dot(&dy)).unwrap_or(f64::NAN),
            &x,
            FD_STEP,
        );
        let mut analytic = g.named_matrices();
        let mut numeric = fd.named_matrices();
        analytic.push(("x".into(), dx));
        numeric.push(("x".into(), fd_x));
        suite.compare(
            "block",
            &format!("{} T={len} d=8 h=2", v.as_str()),
            BLOCK_TOLERANCE,
            analytic,
            numeric,
        );
    }
    Ok(())
}

fn encoder_checks(suite: &mut Suite, rng: &mut Rng) -> Result<()> {
    let len = 12;
    for v in Variant::ALL {
        let cfg = small_config(v);
        let mut p = EncoderParams::init(&cfg, rng)?;
        randomize_small_params(&mut p, rng);
        let feats = rng.uniform_matrix(len, cfg.feat_dim, -1.0, 1.0);
        let (y, cache) = encoder_forward_cached(&feats, &cfg, &p)?;
        let dy = rng.uniform_matrix(y.rows(), y.cols(), -1.0, 1.0);
        let g = encoder_backward(&p, &cache, &dy)?;
        let fd = finite_difference_grads(
            &p,
            |q| encoder_forward(&feats, &cfg, q).map(|y| y.dot(&dy)).unwrap_or(f64::NAN),
            FD_STEP,
        );
        let case = format!("{} n_blocks=1 T={len} d=8 h=2", v.as_str());
        suite.compare(
            "encoder",
            &case,
            BLOCK_TOLERANCE,
            g.named_matrices(),
            fd.named_matrices(),
        );
    }
    Ok(())
}

fn run(seed: u64, fault: Option<&Fault>) -> Result<Vec<GradReport>> {
    let mut rng = Rng::new(seed);
    let mut suite = Suite {
        reports: Vec::new(),
        fault,
    };
    layer_checks(&mut suite, &mut rng)?;
    block_checks(&mut suite, &mut rng)?;
    encoder_checks(&mut suite, &mut rng)?;
    Ok(suite.reports)
}

/// Attention layers (SA, DSA, LDSA; h ∈ {1, 2}; T=6, d=8) at 1e-5, then bare
/// blocks and one-block encoders of every variant at 1e-4.
pub fn grad_check_suite(seed: u64) -> Result<Vec<GradReport>> {
    run(seed, None)
}

pub fn grad_check_suite_with_fault(seed: u64, fault: &Fault) -> Result<Vec<GradReport>> {
    run(seed, Some(fault))
}

pub fn all_passed(reports: &[GradReport]) -> bool {
    reports.iter().all(|r| r.passed)
}
