use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder block family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// SA → conv module → FFN.
    Sa,
    /// DSA → conv module → FFN.
    Dsa,
    /// LDSA → conv module → FFN.
    Ldsa,
    /// SA → LDSA → FFN (LDSA in place of the conv module).
    Ha,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Sa, Variant::Dsa, Variant::Ldsa, Variant::Ha];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sa => "sa",
            Variant::Dsa => "dsa",
            Variant::Ldsa => "ldsa",
            Variant::Ha => "ha",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sa" => Ok(Variant::Sa),
            "dsa" => Ok(Variant::Dsa),
            "ldsa" => Ok(Variant::Ldsa),
            "ha" => Ok(Variant::Ha),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Channels of both frontend convolution stages.
pub const FRONTEND_CHANNELS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub variant: Variant,
    pub n_blocks: usize,
    pub d: usize,
    pub h: usize,
    /// LDSA context width (odd).
    pub c: usize,
    /// Depthwise kernel of the conv module (odd).
    pub conv_kernel: usize,
    pub ffn_inner: usize,
    /// Longest sequence (after the frontend) a DSA layer accepts.
    pub t_max: usize,
    pub feat_dim: usize,
}

impl EncoderConfig {
    /// Full-size encoder: 12 blocks, d=320, 4 heads, kernel 15, 40-dim
    /// filterbank input, c=31 (or 15 for the hybrid block).
    pub fn full(variant: Variant) -> Self {
        Self {
            variant,
            n_blocks: 12,
            d: 320,
            h: 4,
            c: if variant == Variant::Ha { 15 } else { 31 },
            conv_kernel: 15,
            ffn_inner: 4 * 320,
            t_max: 512,
            feat_dim: 40,
        }
    }

    /// Small configuration for tests and the overfit check.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            variant,
            n_blocks: 2,
            d: 16,
            h: 2,
            c: 5,
            conv_kernel: 5,
            ffn_inner: 64,
            t_max: 32,
            feat_dim: 16,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.h
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.d == 0 || self.h == 0 || !self.d.is_multiple_of(self.h) {
            return fail(format!("d={} must be a positive multiple of h={}", self.d, self.h));
        }
        if self.c.is_multiple_of(2) {
            return fail(format!("context width c={} must be odd", self.c));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return fail(format!("conv_kernel={} must be odd", self.conv_kernel));
        }
        if self.ffn_inner == 0 || self.t_max == 0 {
            return fail("ffn_inner and t_max must be at least 1".into());
        }
        if self.feat_dim < 7 {
            return fail(format!("feat_dim={} is below the frontend minimum of 7", self.feat_dim));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
