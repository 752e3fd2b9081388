#![allow(dead_code)]

use sanet_core::io::init::SplitMix64;
use sanet_core::params::{Role, TensorSource};
use sanet_core::{Result, Shape, Tensor4};

/// Uniform weights in ±scale; batch-norm statistics kept in a sane range.
pub struct UniformSource {
    pub rng: SplitMix64,
    pub scale: f64,
}

impl UniformSource {
    pub fn new(seed: u64, scale: f64) -> Self {
        UniformSource {
            rng: SplitMix64::new(seed),
            scale,
        }
    }
}

impl TensorSource for UniformSource {
    fn fetch(&mut self, _name: &str, dims: &[usize], role: Role) -> Result<Vec<f32>> {
        let n: usize = dims.iter().product();
        let (lo, hi) = match role {
            Role::BnGamma => (0.5, 1.5),
            Role::BnVar => (0.5, 2.0),
            _ => (-self.scale, self.scale),
        };
        Ok((0..n).map(|_| self.rng.uniform(lo, hi) as f32).collect())
    }
}

pub fn random_tensor(shape: Shape, seed: u64) -> Tensor4 {
    let mut rng = SplitMix64::new(seed);
    Tensor4::from_fn(shape, |_, _, _, _| rng.uniform(-1.0, 1.0) as f32)
}

pub fn noise_image(h: usize, w: usize, seed: u64) -> Tensor4 {
    let mut rng = SplitMix64::new(seed);
    Tensor4::from_fn(Shape::new(1, 3, h, w), |_, _, _, _| rng.uniform(-2.0, 2.0) as f32)
}
