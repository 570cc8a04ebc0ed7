//! Splittable, seed-addressed random streams.
//!
//! A stream is a ChaCha8 generator keyed by a 64-bit seed. Child streams are
//! derived from the parent's *seed* and a `(label, index)` pair, never from
//! its consumed state, so the draws seen by one consumer do not depend on how
//! many draws another consumer made.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::tensor::{numel, Tensor};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream addressed by `(label, index)`.
    pub fn derive(&self, label: &str, index: u64) -> RngStream {
        let s = splitmix64(self.seed ^ splitmix64(fnv1a(label) ^ splitmix64(index)));
        RngStream::new(s)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    /// Uniform draw from `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        self.rng.random_range(lo..hi)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }
}

/// I.i.d. standard-normal tensor.
pub fn gaussian_sample<S: Scalar>(shape: &[usize], rng: &mut RngStream) -> Tensor<S> {
    let data = (0..numel(shape))
        .map(|_| S::lit(rng.standard_normal()))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_draws() {
        let a: Tensor<f64> = gaussian_sample(&[4, 5], &mut RngStream::new(7));
        let b: Tensor<f64> = gaussian_sample(&[4, 5], &mut RngStream::new(7));
        let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn derived_streams_ignore_parent_consumption() {
        let parent = RngStream::new(11);
        let mut used = parent.clone();
        used.normal_vec(100);
        let mut c1 = parent.derive("x", 3);
        let mut c2 = used.derive("x", 3);
        assert_eq!(c1.next_u64(), c2.next_u64());
        assert_ne!(parent.derive("x", 3).next_u64(), parent.derive("x", 4).next_u64());
        assert_ne!(parent.derive("x", 3).next_u64(), parent.derive("y", 3).next_u64());
    }

    #[test]
    fn moments_of_a_million_draws() {
        let mut rng = RngStream::new(2021);
        let n = 1_000_000;
        let draws = rng.normal_vec(n);
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
    }
}
