//! Full encoder: convolutional frontend followed by a stack of blocks.

pub mod block;
pub mod config;
pub mod conv;
pub mod count;
pub mod ffn;
pub mod frontend;

pub use block::{
    encoder_block_backward, encoder_block_forward, encoder_block_forward_cached, sublayer, BlockCache, BlockParams,
    LocalModule, NormParams,
};
pub use config::{EncoderConfig, Variant, FRONTEND_CHANNELS};
pub use conv::{conv_module_backward, conv_module_forward, ConvModuleParams};
pub use count::{count_params, param_shapes, Counts, ParamEntry, ParamKind, ParamTable};
pub use ffn::{ffn_backward, ffn_forward, FfnParams};
pub use frontend::{conv_frontend, frontend_out_len, positional_encoding, FrontendParams, MIN_FRONTEND_LEN};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::params::{join, Parameters};
use frontend::{conv_frontend_backward, conv_frontend_cached, FrontendCache};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub frontend: FrontendParams,
    pub blocks: Vec<BlockParams>,
}

impl EncoderParams {
    pub fn init(cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let frontend = FrontendParams::init(cfg.feat_dim, FRONTEND_CHANNELS, cfg.d, rng);
        let blocks = (0..cfg.n_blocks)
            .map(|_| BlockParams::init(cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self { frontend, blocks })
    }

    /// Checks every matrix name and shape against what `cfg` declares.
    pub fn check(&self, cfg: &EncoderConfig) -> Result<()> {
        let expected = param_shapes(cfg)?;
        let mut actual = Vec::with_capacity(expected.len());
        self.visit("", &mut |name, m| actual.push((name, m.shape())));
        if actual.len() != expected.len() {
            return Err(Error::Config(format!(
                "parameters hold {} matrices, config declares {}",
                actual.len(),
                expected.len()
            )));
        }
        for ((name, shape), e) in actual.iter().zip(&expected) {
            if *name != e.name {
                return Err(Error::Config(format!("expected parameter {}, found {name}", e.name)));
            }
            if *shape != (e.rows, e.cols) {
                return Err(Error::shape("parameter", *shape, (e.rows, e.cols)));
            }
        }
        Ok(())
    }
}

impl Parameters for EncoderParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        self.frontend.visit(&join(prefix, "frontend"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        self.frontend.visit_mut(&join(prefix, "frontend"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    frontend: FrontendCache,
    blocks: Vec<BlockCache>,
}

pub fn encoder_forward(features: &Matrix, cfg: &EncoderConfig, p: &EncoderParams) -> Result<Matrix> {
    p.check(cfg)?;
    let mut x = conv_frontend(features, &p.frontend)?;
    check_capacity(cfg, x.rows())?;
    for b in &p.blocks {
        x = encoder_block_forward(&x, b)?;
    }
    Ok(x)
}

pub fn encoder_forward_cached(
    features: &Matrix,
    cfg: &EncoderConfig,
    p: &EncoderParams,
) -> Result<(Matrix, EncoderCache)> {
    p.check(cfg)?;
    let (mut x, frontend) = conv_frontend_cached(features, &p.frontend)?;
    check_capacity(cfg, x.rows())?;
    let mut blocks = Vec::with_capacity(p.blocks.len());
    for b in &p.blocks {
        let (y, cache) = encoder_block_forward_cached(&x, b)?;
        blocks.push(cache);
        x = y;
    }
    Ok((x, EncoderCache { frontend, blocks }))
}

/// Parameter gradients of `sum(dy ⊙ encoder_forward(..))`.
pub fn encoder_backward(p: &EncoderParams, cache: &EncoderCache, dy: &Matrix) -> Result<EncoderParams> {
    let mut d = dy.clone();
    let mut blocks = Vec::with_capacity(p.blocks.len());
    for (b, c) in p.blocks.iter().zip(&cache.blocks).rev() {
        let (g, dx) = encoder_block_backward(b, c, &d)?;
        blocks.push(g);
        d = dx;
    }
    blocks.reverse();
    let frontend = conv_frontend_backward(&p.frontend, &cache.frontend, &d)?;
    Ok(EncoderParams { frontend, blocks })
}

fn check_capacity(cfg: &EncoderConfig, len: usize) -> Result<()> {
    if cfg.variant == Variant::Dsa && len > cfg.t_max {
        return Err(Error::Capacity { len, t_max: cfg.t_max });
    }
    Ok(())
}
