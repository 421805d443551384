//! Seeded parameter initialization.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

/// Standard deviation for learned tokens and position tables.
pub const TOKEN_STD: f64 = 0.02;

pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Uniform in `±sqrt(1/fan_in)`, where `fan_in` is the last extent.
    pub fn linear(&mut self, out_features: usize, in_features: usize) -> Tensor {
        let bound = libm::sqrt(1.0 / in_features as f64);
        let data: Vec<f64> = (0..out_features * in_features)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        Tensor::new(&[out_features, in_features], data).expect("positive extents")
    }

    /// Gaussian with standard deviation `std`.
    pub fn normal(&mut self, shape: &[usize], std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                z * std
            })
            .collect();
        Tensor::new(shape, data).expect("positive extents")
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
