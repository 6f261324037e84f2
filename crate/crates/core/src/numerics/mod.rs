//! Dense linear algebra, activations, normalization, seeded initialization
//! and the finite-difference gradient oracle.

mod grad;
pub mod io;
mod matrix;
mod ops;
mod rng;

pub use grad::{central_diff_grad, relative_error, FD_STEP};
pub use matrix::Matrix;
pub use ops::{
    layer_norm, layer_norm_backward, layer_norm_cached, relu, relu_backward, row_softmax, sigmoid, softmax_backward,
    swish, swish_grad, LayerNormCache, LN_EPS,
};
pub use rng::{xavier_uniform_init, Rng};
