//! Reverse-mode differentiable compute core.

mod params;
mod rng;
mod tape;
mod tensor;

pub use params::{ParamVector, ParamView, Segment};
pub use rng::{gaussian_sample, RngStream};
pub use tape::{Activation, BinaryKind, ReduceKind, Tape, UnaryKind, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
