use super::config::{EncoderConfig, Variant};
use super::conv::{conv_module_backward, conv_module_forward_cached, ConvCache, ConvModuleParams};
use super::ffn::{ffn_backward, ffn_forward_cached, FfnCache, FfnParams};
use crate::attention::{AttentionCache, AttentionParams, LdsaParams, Mechanism};
use crate::error::{Error, Result};
use crate::numerics::{layer_norm, layer_norm_backward, layer_norm_cached, LayerNormCache, Matrix, Rng, LN_EPS};
use crate::params::{join, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub gamma: Matrix,
    pub beta: Matrix,
}

impl NormParams {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Matrix::filled(1, d, 1.0),
            beta: Matrix::zeros(1, d),
        }
    }
}

impl Parameters for NormParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}

/// The middle sublayer: the conv module, or LDSA in the hybrid block.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalModule {
    Conv(ConvModuleParams),
    Ldsa(LdsaParams),
}

impl Parameters for LocalModule {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        match self {
            LocalModule::Conv(p) => p.visit(&join(prefix, "conv"), f),
            LocalModule::Ldsa(p) => p.visit(&join(prefix, "local"), f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        match self {
            LocalModule::Conv(p) => p.visit_mut(&join(prefix, "conv"), f),
            LocalModule::Ldsa(p) => p.visit_mut(&join(prefix, "local"), f),
        }
    }
}

/// One encoder block: three post-norm residual sublayers
/// `attention → local module → FFN`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub attention: AttentionParams,
    pub norm1: NormParams,
    pub local: LocalModule,
    pub norm2: NormParams,
    pub ffn: FfnParams,
    pub norm3: NormParams,
}

impl BlockParams {
    pub fn init(cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        let mechanism = match cfg.variant {
            Variant::Sa | Variant::Ha => Mechanism::Sa,
            Variant::Dsa => Mechanism::Dsa,
            Variant::Ldsa => Mechanism::Ldsa,
        };
        let attention = AttentionParams::init(mechanism, cfg.d, cfg.h, cfg.c, cfg.t_max, rng)?;
        let local = match cfg.variant {
            Variant::Ha => LocalModule::Ldsa(LdsaParams::init(cfg.d, cfg.h, cfg.c, rng)?),
            _ => LocalModule::Conv(ConvModuleParams::init(cfg.d, cfg.conv_kernel, rng)),
        };
        Ok(Self {
            attention,
            norm1: NormParams::new(cfg.d),
            local,
            norm2: NormParams::new(cfg.d),
            ffn: FfnParams::init(cfg.d, cfg.ffn_inner, rng),
            norm3: NormParams::new(cfg.d),
        })
    }

    pub fn variant(&self) -> Variant {
        match (&self.attention, &self.local) {
            (AttentionParams::Sa(_), LocalModule::Ldsa(_)) => Variant::Ha,
            (AttentionParams::Sa(_), LocalModule::Conv(_)) => Variant::Sa,
            (AttentionParams::Dsa(_), _) => Variant::Dsa,
            (AttentionParams::Ldsa(_), _) => Variant::Ldsa,
        }
    }
}

impl Parameters for BlockParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        self.attention.visit(&join(prefix, "attn"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.local.visit(prefix, f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.ffn.visit(&join(prefix, "ffn"), f);
        self.norm3.visit(&join(prefix, "norm3"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        self.attention.visit_mut(&join(prefix, "attn"), f);
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.local.visit_mut(prefix, f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
        self.norm3.visit_mut(&join(prefix, "norm3"), f);
    }
}

/// Post-norm residual wrapper: `layer_norm(x + f(x))`.
pub fn sublayer(x: &Matrix, norm: &NormParams, f: impl FnOnce(&Matrix) -> Result<Matrix>) -> Result<Matrix> {
    let fx = f(x)?;
    if fx.shape() != x.shape() {
        return Err(Error::shape("sublayer", x.shape(), fx.shape()));
    }
    layer_norm(&x.add(&fx)?, &norm.gamma, &norm.beta, LN_EPS)
}

#[derive(Debug, Clone)]
enum LocalCache {
    Conv(ConvCache),
    Ldsa(AttentionCache),
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    attention: AttentionCache,
    norm1: LayerNormCache,
    local: LocalCache,
    norm2: LayerNormCache,
    ffn: FfnCache,
    norm3: LayerNormCache,
}

fn wrap_ldsa(p: &LdsaParams) -> AttentionParams {
    AttentionParams::Ldsa(p.clone())
}

pub fn encoder_block_forward(x: &Matrix, p: &BlockParams) -> Result<Matrix> {
    encoder_block_forward_cached(x, p).map(|(y, _)| y)
}

pub fn encoder_block_forward_cached(x: &Matrix, p: &BlockParams) -> Result<(Matrix, BlockCache)> {
    let (attn_out, attention) = p.attention.forward_cached(x)?;
    let (h1, norm1) = layer_norm_cached(&x.add(&attn_out.y)?, &p.norm1.gamma, &p.norm1.beta, LN_EPS)?;

    let (local_out, local) = match &p.local {
        LocalModule::Conv(conv) => {
            let (y, cache) = conv_module_forward_cached(&h1, conv)?;
            (y, LocalCache::Conv(cache))
        }
        LocalModule::Ldsa(ldsa) => {
            let (out, cache) = wrap_ldsa(ldsa).forward_cached(&h1)?;
            (out.y, LocalCache::Ldsa(cache))
        }
    };
    let (h2, norm2) = layer_norm_cached(&h1.add(&local_out)?, &p.norm2.gamma, &p.norm2.beta, LN_EPS)?;

    let (ffn_out, ffn) = ffn_forward_cached(&h2, &p.ffn)?;
    let (h3, norm3) = layer_norm_cached(&h2.add(&ffn_out)?, &p.norm3.gamma, &p.norm3.beta, LN_EPS)?;
    Ok((
        h3,
        BlockCache {
            attention,
            norm1,
            local,
            norm2,
            ffn,
            norm3,
        },
    ))
}

pub fn encoder_block_backward(p: &BlockParams, cache: &BlockCache, dy: &Matrix) -> Result<(BlockParams, Matrix)> {
    let (d_sum3, gamma3, beta3) = layer_norm_backward(&cache.norm3, &p.norm3.gamma, dy)?;
    let (ffn, d_h2_ffn) = ffn_backward(&p.ffn, &cache.ffn, &d_sum3)?;
    let d_h2 = d_sum3.add(&d_h2_ffn)?;

    let (d_sum2, gamma2, beta2) = layer_norm_backward(&cache.norm2, &p.norm2.gamma, &d_h2)?;
    let (local, d_h1_local) = match (&p.local, &cache.local) {
        (LocalModule::Conv(conv), LocalCache::Conv(c)) => {
            let (g, dx) = conv_module_backward(conv, c, &d_sum2)?;
            (LocalModule::Conv(g), dx)
        }
        (LocalModule::Ldsa(ldsa), LocalCache::Ldsa(c)) => {
            let (g, dx) = wrap_ldsa(ldsa).backward(c, &d_sum2)?;
            let AttentionParams::Ldsa(g) = g else {
                unreachable!("LDSA backward returned another mechanism")
            };
            (LocalModule::Ldsa(g), dx)
        }
        _ => unreachable!("block cache does not match its parameters"),
    };
    let d_h1 = d_sum2.add(&d_h1_local)?;

    let (d_sum1, gamma1, beta1) = layer_norm_backward(&cache.norm1, &p.norm1.gamma, &d_h1)?;
    let (attention, d_x_attn) = p.attention.backward(&cache.attention, &d_sum1)?;
    let dx = d_sum1.add(&d_x_attn)?;
    Ok((
        BlockParams {
            attention,
            norm1: NormParams {
                gamma: gamma1,
                beta: beta1,
            },
            local,
            norm2: NormParams {
                gamma: gamma2,
                beta: beta2,
            },
            ffn,
            norm3: NormParams {
                gamma: gamma3,
                beta: beta3,
            },
        },
        dx,
    ))
}
