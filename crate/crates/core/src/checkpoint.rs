//! Weight directories: a `manifest.json` plus one CSV file per matrix.
//!
//! The manifest lists matrices in parameter visit order, so two saves of the
//! same weights produce byte-identical directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{AttentionParams, Mechanism};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::io::{load_matrix_csv, save_matrix_csv};
use crate::numerics::{Matrix, Rng};
use crate::params::Parameters;

pub const FORMAT: &str = "ldsa-weights-v1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixEntry {
    pub name: String,
    /// Encoder block index; absent for the frontend and for single layers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    /// `sa`, `dsa`, `ldsa` or `ha`.
    pub variant: String,
    pub heads: usize,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_max: Option<usize>,
    /// Present for full encoders only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<EncoderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positional_encoding: Option<bool>,
    pub matrices: Vec<MatrixEntry>,
}

fn block_index(name: &str) -> Option<usize> {
    name.strip_prefix("block")?.split('.').next()?.parse().ok()
}

fn write_matrices(dir: &Path, params: &impl Parameters) -> Result<Vec<MatrixEntry>> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    let mut result = Ok(());
    params.visit("", &mut |name, m| {
        if result.is_err() {
            return;
        }
        let file = format!("{:04}_{name}.csv", entries.len());
        result = save_matrix_csv(m, &dir.join(&file));
        entries.push(MatrixEntry {
            block: block_index(&name),
            name,
            rows: m.rows(),
            cols: m.cols(),
            file,
        });
    });
    result.map(|_| entries)
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(dir.join(MANIFEST), text + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    if manifest.format != FORMAT {
        return Err(Error::Parse(format!(
            "unsupported weights format {:?}",
            manifest.format
        )));
    }
    Ok(manifest)
}

/// Overwrites every matrix of `params` from the files named in `manifest`.
fn fill_matrices(dir: &Path, manifest: &Manifest, params: &mut impl Parameters) -> Result<()> {
    let mut by_name: BTreeMap<&str, &MatrixEntry> = BTreeMap::new();
    for e in &manifest.matrices {
        if by_name.insert(e.name.as_str(), e).is_some() {
            return Err(Error::Parse(format!("matrix {} listed twice", e.name)));
        }
    }
    let mut used = 0;
    let mut result = Ok(());
    params.visit_mut("", &mut |name, m| {
        if result.is_err() {
            return;
        }
        let Some(entry) = by_name.get(name.as_str()) else {
            result = Err(Error::Parse(format!("manifest has no matrix {name}")));
            return;
        };
        used += 1;
        result = load_matrix_csv(&dir.join(&entry.file)).and_then(|loaded: Matrix| {
            if loaded.shape() != m.shape() || loaded.shape() != (entry.rows, entry.cols) {
                return Err(Error::shape("checkpoint matrix", loaded.shape(), m.shape()));
            }
            *m = loaded;
            Ok(())
        });
    });
    result?;
    if used != by_name.len() {
        return Err(Error::Parse(format!(
            "manifest lists {} matrices, model uses {used}",
            by_name.len()
        )));
    }
    Ok(())
}

pub fn save_encoder(dir: &Path, cfg: &EncoderConfig, params: &EncoderParams) -> Result<()> {
    params.check(cfg)?;
    let matrices = write_matrices(dir, params)?;
    write_manifest(
        dir,
        &Manifest {
            format: FORMAT.into(),
            variant: cfg.variant.as_str().into(),
            heads: cfg.h,
            d: cfg.d,
            context: Some(cfg.c),
            t_max: Some(cfg.t_max),
            config: Some(cfg.clone()),
            positional_encoding: Some(params.frontend.positional_encoding),
            matrices,
        },
    )
}

/// Loads an encoder checkpoint. When `expected` is given the stored config
/// must equal it.
pub fn load_encoder(dir: &Path, expected: Option<&EncoderConfig>) -> Result<(EncoderConfig, EncoderParams)> {
    let manifest = read_manifest(dir)?;
    let cfg = manifest
        .config
        .clone()
        .ok_or_else(|| Error::Parse("manifest describes a single layer, not an encoder".into()))?;
    cfg.validate()?;
    if let Some(e) = expected {
        if *e != cfg {
            return Err(Error::Config("weights were saved with a different config".into()));
        }
    }
    let mut params = EncoderParams::init(&cfg, &mut Rng::new(0))?;
    params.frontend.positional_encoding = manifest.positional_encoding.unwrap_or(true);
    fill_matrices(dir, &manifest, &mut params)?;
    Ok((cfg, params))
}

pub fn save_attention(dir: &Path, params: &AttentionParams) -> Result<()> {
    let (context, t_max) = match params {
        AttentionParams::Sa(_) => (None, None),
        AttentionParams::Dsa(p) => (None, Some(p.t_max)),
        AttentionParams::Ldsa(p) => (Some(p.context), None),
    };
    let matrices = write_matrices(dir, params)?;
    write_manifest(
        dir,
        &Manifest {
            format: FORMAT.into(),
            variant: params.mechanism().as_str().into(),
            heads: params.num_heads(),
            d: params.d_model(),
            context,
            t_max,
            config: None,
            positional_encoding: None,
            matrices,
        },
    )
}

pub fn load_attention(dir: &Path) -> Result<AttentionParams> {
    let manifest = read_manifest(dir)?;
    let mechanism = match manifest.variant.as_str() {
        "sa" => Mechanism::Sa,
        "dsa" => Mechanism::Dsa,
        "ldsa" => Mechanism::Ldsa,
        other => return Err(Error::Parse(format!("{other:?} is not a single attention layer"))),
    };
    let need = |v: Option<usize>, what: &str| v.ok_or_else(|| Error::Parse(format!("manifest lacks {what}")));
    let context = if mechanism == Mechanism::Ldsa {
        need(manifest.context, "context")?
    } else {
        1
    };
    let t_max = if mechanism == Mechanism::Dsa {
        need(manifest.t_max, "t_max")?
    } else {
        1
    };
    let mut params = AttentionParams::init(mechanism, manifest.d, manifest.heads, context, t_max, &mut Rng::new(0))?;
    fill_matrices(dir, &manifest, &mut params)?;
    Ok(params)
}
