//! Synthetic frame-classification data aligned with the conv frontend.

use serde::{Deserialize, Serialize};

use crate::encoder::{frontend_out_len, MIN_FRONTEND_LEN};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Input frames feeding one output frame of the frontend: `4t .. 4t+7`.
pub const RECEPTIVE_FIELD: usize = 7;
pub const DOWNSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    /// Argmax of the projections of the receptive-field mean.
    WindowMean,
    /// Argmax of the projections of the receptive field's center frame.
    CenterFrame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub inputs: Vec<Matrix>,
    /// One label per post-frontend frame of each input.
    pub labels: Vec<Vec<usize>>,
    /// `n_classes × feat_dim`.
    pub projections: Matrix,
    pub rule: LabelRule,
    pub seed: u64,
}

impl ToyDataset {
    pub fn n_classes(&self) -> usize {
        self.projections.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.projections.cols()
    }

    pub fn n_frames(&self) -> usize {
        self.labels.iter().map(Vec::len).sum()
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Labels of every post-frontend frame of `input` under `rule`.
pub fn label_frames(input: &Matrix, projections: &Matrix, rule: LabelRule) -> Result<Vec<usize>> {
    if input.cols() != projections.cols() {
        return Err(Error::shape("label_frames", input.shape(), projections.shape()));
    }
    let feat_dim = input.cols();
    (0..frontend_out_len(input.rows()))
        .map(|t| {
            let start = DOWNSAMPLE * t;
            let summary: Vec<f64> = match rule {
                LabelRule::WindowMean => (0..feat_dim)
                    .map(|f| {
                        (start..start + RECEPTIVE_FIELD).map(|s| input.get(s, f)).sum::<f64>() / RECEPTIVE_FIELD as f64
                    })
                    .collect(),
                LabelRule::CenterFrame => input.row(start + RECEPTIVE_FIELD / 2).to_vec(),
            };
            Ok(argmax((0..projections.rows()).map(|k| {
                projections.row(k).iter().zip(&summary).map(|(a, b)| a * b).sum()
            })))
        })
        .collect()
}

pub fn gen_task(
    seed: u64,
    n_utts: usize,
    len: usize,
    feat_dim: usize,
    n_classes: usize,
    rule: LabelRule,
) -> Result<ToyDataset> {
    if n_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
    }
    if len < MIN_FRONTEND_LEN || feat_dim < MIN_FRONTEND_LEN {
        return Err(Error::TooShort {
            len: len.min(feat_dim),
            min: MIN_FRONTEND_LEN,
        });
    }
    let mut rng = Rng::new(seed);
    let projections = rng.normal_matrix(n_classes, feat_dim);
    let inputs: Vec<Matrix> = (0..n_utts).map(|_| rng.normal_matrix(len, feat_dim)).collect();
    let labels = inputs
        .iter()
        .map(|x| label_frames(x, &projections, rule))
        .collect::<Result<_>>()?;
    Ok(ToyDataset {
        inputs,
        labels,
        projections,
        rule,
        seed,
    })
}

/// Random features labeled by the receptive-field mean rule.
pub fn gen_toy_task(seed: u64, n_utts: usize, len: usize, feat_dim: usize, n_classes: usize) -> Result<ToyDataset> {
    gen_task(seed, n_utts, len, feat_dim, n_classes, LabelRule::WindowMean)
}

/// Labels from a fixed linear map of each output frame's center input frame.
pub fn gen_separable_task(
    seed: u64,
    n_utts: usize,
    len: usize,
    feat_dim: usize,
    n_classes: usize,
) -> Result<ToyDataset> {
    gen_task(seed, n_utts, len, feat_dim, n_classes, LabelRule::CenterFrame)
}
