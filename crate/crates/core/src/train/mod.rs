//! Optimizer, learning-rate schedule, synthetic task, overfit loop and the
//! packaged gradient checks.

pub mod adam;
pub mod data;
pub mod gradcheck;
pub mod overfit;
pub mod schedule;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use data::{gen_separable_task, gen_toy_task, label_frames, LabelRule, ToyDataset};
pub use gradcheck::{all_passed, grad_check_suite, grad_check_suite_with_fault, Fault, GradReport};
pub use overfit::{
    evaluate, loss_and_grad, moving_average, train_overfit, write_metrics_csv, ClassifierModel, StepMetrics,
    TrainConfig, TrainReport,
};
pub use schedule::{noam_lr, NoamSchedule, DESK_WARMUP, FULL_WARMUP};
