//! Single-level discrete wavelet decomposition and reconstruction.
//!
//! Both directions are periodized orthonormal two-channel filter banks
//! recorded on the tape, so gradients flow through the approximation and
//! detail paths alike.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletKind {
    /// Daubechies-1.
    #[default]
    Haar,
}

/// Orthonormal analysis filter pair. Synthesis uses the same filters
/// transposed, which is what makes reconstruction exact.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBasis<S> {
    pub kind: WaveletKind,
    /// Scaling (low-pass) filter.
    pub lowpass: Vec<S>,
    /// Wavelet (high-pass) filter.
    pub highpass: Vec<S>,
}

impl<S: Scalar> WaveletBasis<S> {
    pub fn new(kind: WaveletKind) -> Self {
        match kind {
            WaveletKind::Haar => {
                let r = S::lit(std::f64::consts::FRAC_1_SQRT_2);
                WaveletBasis {
                    kind,
                    lowpass: vec![r, r],
                    highpass: vec![r, -r],
                }
            }
        }
    }

    pub fn haar() -> Self {
        Self::new(WaveletKind::Haar)
    }
}

/// Approximation and detail coefficients, each `[batch, T/2, C]`.
#[derive(Debug, Clone, Copy)]
pub struct WaveletCoeffs {
    pub approx: Var,
    pub detail: Var,
}

/// Splits `x: [batch, T, C]` into approximation and detail coefficients,
/// channel by channel.
pub fn decompose<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    basis: &WaveletBasis<S>,
) -> Result<WaveletCoeffs> {
    let shape = tape.shape(x);
    if shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "wavelet input must be [batch, T, C], got {shape:?}"
        )));
    }
    if shape[1] < 2 {
        return Err(Error::WindowTooShort(shape[1]));
    }
    let approx = tape.downsample(x, &basis.lowpass)?;
    let detail = tape.downsample(x, &basis.highpass)?;
    Ok(WaveletCoeffs { approx, detail })
}

/// Inverse of [`decompose`]: `[batch, K, C]` pair to `[batch, 2K, C]`.
pub fn reconstruct<S: Scalar>(
    tape: &mut Tape<S>,
    coeffs: &WaveletCoeffs,
    basis: &WaveletBasis<S>,
) -> Result<Var> {
    let (sa, sd) = (tape.shape(coeffs.approx), tape.shape(coeffs.detail));
    if sa != sd {
        return Err(Error::Dimension(format!(
            "approximation {sa:?} and detail {sd:?} coefficients differ in shape"
        )));
    }
    let low = tape.upsample(coeffs.approx, &basis.lowpass)?;
    let high = tape.upsample(coeffs.detail, &basis.highpass)?;
    tape.add(low, high)
}
