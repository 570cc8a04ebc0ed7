//! Wavelet + information-bottleneck time-series forecaster with a
//! weight-space faithfulness layer.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the training,
//! certification and study pipelines use.

pub mod cli;
pub mod data;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod faithful;
pub mod ifcb;
pub mod model;
pub mod scalar;
pub mod train;
pub mod wavelet;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = diffcore::Tensor<f64>;
pub type Tape64 = diffcore::Tape<f64>;
pub type ParamVector64 = diffcore::ParamVector<f64>;
pub type Tensor32 = diffcore::Tensor<f32>;
pub type Tape32 = diffcore::Tape<f32>;
