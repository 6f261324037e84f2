//! Dot-product self-attention, dense synthesizer attention and local dense
//! synthesizer attention, the encoder blocks built from them, and the
//! gradient, parity and scaling checks around them.

pub mod attention;
pub mod bench;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod numerics;
pub mod params;
pub mod train;

pub use error::{Error, Result};
pub use numerics::Matrix;
