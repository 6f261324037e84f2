//! Full-batch frame classification: encoder plus a linear softmax head.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::data::ToyDataset;
use super::schedule::{NoamSchedule, DESK_WARMUP};
use crate::encoder::{encoder_backward, encoder_forward, encoder_forward_cached, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::{row_softmax, xavier_uniform_init, Matrix, Rng};
use crate::params::{accumulate, join, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub encoder: EncoderParams,
    /// `d × n_classes`
    pub head_w: Matrix,
    pub head_b: Matrix,
}

impl ClassifierModel {
    pub fn init(cfg: &EncoderConfig, n_classes: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Self {
            encoder: EncoderParams::init(cfg, rng)?,
            head_w: xavier_uniform_init(cfg.d, n_classes, rng),
            head_b: Matrix::zeros(1, n_classes),
        })
    }
}

impl Parameters for ClassifierModel {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Matrix)) {
        self.encoder.visit(prefix, f);
        f(join(prefix, "head.w"), &self.head_w);
        f(join(prefix, "head.b"), &self.head_b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Matrix)) {
        self.encoder.visit_mut(prefix, f);
        f(join(prefix, "head.w"), &mut self.head_w);
        f(join(prefix, "head.b"), &mut self.head_b);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub warmup: usize,
    pub lr_scale: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Stop as soon as a step's training accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            warmup: DESK_WARMUP,
            lr_scale: 1.0,
            seed: 0,
            adam: AdamConfig::default(),
            target_accuracy: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub lr: f64,
    /// Loss and accuracy of the parameters this step started from.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: String,
    pub steps_run: usize,
    pub frames: usize,
    pub n_classes: usize,
    pub initial_loss: f64,
    pub initial_accuracy: f64,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// Number of updates after which the target accuracy was first seen.
    pub reached_target_at: Option<usize>,
    pub history: Vec<StepMetrics>,
}

/// Mean cross-entropy and frame accuracy over the whole dataset.
pub fn evaluate(model: &ClassifierModel, cfg: &EncoderConfig, data: &ToyDataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0;
    for (x, labels) in data.inputs.iter().zip(&data.labels) {
        let y = encoder_forward(x, cfg, &model.encoder)?;
        let probs = row_softmax(&y.matmul(&model.head_w)?.add_row_vector(&model.head_b)?);
        let (l, c) = score(&probs, labels);
        loss += l;
        correct += c;
    }
    let n = data.n_frames() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Summed negative log-likelihood and number of argmax hits.
fn score(probs: &Matrix, labels: &[usize]) -> (f64, usize) {
    let mut loss = 0.0;
    let mut correct = 0;
    for (t, &k) in labels.iter().enumerate() {
        let row = probs.row(t);
        loss -= row[k].ln();
        let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        correct += usize::from(best == k);
    }
    (loss, correct)
}

/// Loss, accuracy and full-batch gradient of the mean cross-entropy.
pub fn loss_and_grad(
    model: &ClassifierModel,
    cfg: &EncoderConfig,
    data: &ToyDataset,
) -> Result<(f64, f64, ClassifierModel)> {
    let n = data.n_frames() as f64;
    let mut grads = model.zeros_like();
    let mut loss = 0.0;
    let mut correct = 0;
    for (x, labels) in data.inputs.iter().zip(&data.labels) {
        let (y, cache) = encoder_forward_cached(x, cfg, &model.encoder)?;
        let probs = row_softmax(&y.matmul(&model.head_w)?.add_row_vector(&model.head_b)?);
        let (l, c) = score(&probs, labels);
        loss += l;
        correct += c;
        let mut d_logits = probs;
        for (t, &k) in labels.iter().enumerate() {
            d_logits.row_mut(t)[k] -= 1.0;
        }
        let d_logits = d_logits.scale(1.0 / n);
        grads.head_w.add_assign(&y.matmul_tn(&d_logits)?)?;
        grads.head_b.add_assign(&d_logits.column_sums())?;
        let dy = d_logits.matmul_nt(&model.head_w)?;
        accumulate(&mut grads.encoder, &encoder_backward(&model.encoder, &cache, &dy)?, 1.0);
    }
    Ok((loss / n, correct as f64 / n, grads))
}

/// Trains a fresh model (seeded by `train.seed`) on `data`.
pub fn train_overfit(
    cfg: &EncoderConfig,
    data: &ToyDataset,
    train: &TrainConfig,
) -> Result<(ClassifierModel, TrainReport)> {
    if data.inputs.is_empty() || data.n_frames() == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    if data.feat_dim() != cfg.feat_dim {
        return Err(Error::Config(format!(
            "dataset has {} features, config expects {}",
            data.feat_dim(),
            cfg.feat_dim
        )));
    }
    let schedule = NoamSchedule::new(cfg.d, train.warmup, train.lr_scale)?;
    let mut rng = Rng::new(train.seed);
    let mut model = ClassifierModel::init(cfg, data.n_classes(), &mut rng)?;
    let mut state = AdamState::new(&model, train.adam);
    let mut history = Vec::with_capacity(train.steps);
    let mut reached_target_at = None;
    let mut updates = 0;

    for step in 1..=train.steps {
        let (loss, accuracy, grads) = loss_and_grad(&model, cfg, data)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        let lr = schedule.lr(step);
        history.push(StepMetrics {
            step,
            lr,
            loss,
            accuracy,
        });
        if train.target_accuracy.is_some_and(|target| accuracy >= target) {
            reached_target_at = Some(updates);
            break;
        }
        adam_step(&mut model, &grads, &mut state, lr)?;
        updates += 1;
    }

    let (final_loss, final_accuracy) = evaluate(&model, cfg, data)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            step: updates + 1,
            loss: final_loss,
        });
    }
    let (initial_loss, initial_accuracy) = match history.first() {
        Some(m) => (m.loss, m.accuracy),
        None => (final_loss, final_accuracy),
    };
    let best_accuracy = history.iter().map(|m| m.accuracy).fold(final_accuracy, f64::max);
    if reached_target_at.is_none() && train.target_accuracy.is_some_and(|t| final_accuracy >= t) {
        reached_target_at = Some(updates);
    }
    let report = TrainReport {
        variant: cfg.variant.as_str().into(),
        steps_run: updates,
        frames: data.n_frames(),
        n_classes: data.n_classes(),
        initial_loss,
        initial_accuracy,
        final_loss,
        final_accuracy,
        best_accuracy,
        reached_target_at,
        history,
    };
    Ok((model, report))
}

pub fn write_metrics_csv<W: Write>(history: &[StepMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for m in history {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

/// Trailing `window`-step means of the loss curve.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Variant;
    use crate::numerics::relative_error;
    use crate::params::finite_difference_grads;
    use crate::train::data::gen_toy_task;

    fn tiny_cfg(variant: Variant) -> EncoderConfig {
        EncoderConfig {
            n_blocks: 1,
            d: 8,
            feat_dim: 9,
            ffn_inner: 16,
            c: 3,
            conv_kernel: 3,
            t_max: 8,
            ..EncoderConfig::tiny(variant)
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let cfg = tiny_cfg(Variant::Ha);
        let data = gen_toy_task(1, 2, 15, 9, 3).unwrap();
        let model = ClassifierModel::init(&cfg, 3, &mut Rng::new(2)).unwrap();
        let (loss, _, g) = loss_and_grad(&model, &cfg, &data).unwrap();
        assert!((loss - evaluate(&model, &cfg, &data).unwrap().0).abs() < 1e-12);
        let fd = finite_difference_grads(&model, |m| evaluate(m, &cfg, &data).unwrap().0, 1e-6);
        for ((name, a), (_, n)) in g.named_matrices().iter().zip(&fd.named_matrices()) {
            let err = relative_error(a, n);
            assert!(err < 1e-5, "{name}: {err}");
        }
    }

    #[test]
    fn zero_steps_reports_untrained_model() {
        let cfg = tiny_cfg(Variant::Sa);
        let data = gen_toy_task(3, 4, 40, 9, 4).unwrap();
        let train = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let (model, report) = train_overfit(&cfg, &data, &train).unwrap();
        assert!(report.history.is_empty());
        let fresh = ClassifierModel::init(&cfg, 4, &mut Rng::new(0)).unwrap();
        assert_eq!(model, fresh);
        assert_eq!(report.final_accuracy, evaluate(&fresh, &cfg, &data).unwrap().1);
    }

    #[test]
    fn training_is_reproducible() {
        let cfg = tiny_cfg(Variant::Ldsa);
        let data = gen_toy_task(4, 2, 30, 9, 3).unwrap();
        let train = TrainConfig {
            steps: 15,
            seed: 9,
            ..TrainConfig::default()
        };
        let (m1, r1) = train_overfit(&cfg, &data, &train).unwrap();
        let (m2, r2) = train_overfit(&cfg, &data, &train).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        assert!(r1.final_loss < r1.initial_loss);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let cfg = tiny_cfg(Variant::Sa);
        let data = gen_toy_task(5, 2, 30, 9, 3).unwrap();
        let train = TrainConfig {
            steps: 50,
            lr_scale: f64::INFINITY,
            ..TrainConfig::default()
        };
        match train_overfit(&cfg, &data, &train) {
            Err(Error::Divergence { step, loss }) => {
                assert!(step >= 2, "{step}");
                assert!(!loss.is_finite());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn metrics_csv_columns() {
        let mut buf = Vec::new();
        let m = StepMetrics {
            step: 1,
            lr: 0.5,
            loss: 1.25,
            accuracy: 0.75,
        };
        write_metrics_csv(&[m], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,lr,loss,accuracy\n1,0.5,1.25,0.75\n"
        );
    }

    #[test]
    fn moving_average_windows() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 10).is_empty());
    }
}
