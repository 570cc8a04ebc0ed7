//! Central finite-difference oracle shared by unit tests.

use crate::diffcore::{RngStream, Tensor};

/// Central differences of `f` at `x` with step `h`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Elementwise relative error with an absolute floor for near-zero entries.
pub fn assert_grad_close(analytic: &[f64], numeric: &[f64], rel: f64) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = a.abs().max(n.abs()).max(1e-3);
        let err = (a - n).abs() / scale;
        assert!(err <= rel, "entry {i}: analytic {a} vs numeric {n} (rel err {err:.3e})");
    }
}

pub fn uniform_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut RngStream) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(lo, hi)).collect::<Vec<_>>();
    Tensor::from_f64(shape, &data).unwrap()
}
