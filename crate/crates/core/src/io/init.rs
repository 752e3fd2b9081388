//! Deterministic weight initialization.
//!
//! Each tensor draws from its own SplitMix64 stream seeded with
//! `mix(seed ^ fnv1a64(name))`, so a tensor's values depend only on the
//! global seed and its own name. Only integer arithmetic runs before the
//! final `u64 → f64` mapping, which keeps output identical across platforms.

use crate::error::Result;
use crate::io::store::WeightStore;
use crate::model::{Model, ModelConfig};
use crate::params::{Role, TensorSource};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 output finalizer.
pub fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        splitmix64_mix(self.state)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize
    }
}

pub fn tensor_seed(seed: u64, name: &str) -> u64 {
    splitmix64_mix(seed ^ fnv1a64(name.as_bytes()))
}

/// Largest magnitude of a Kaiming-uniform weight.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

/// Produces fresh tensors and records them into a store.
pub struct InitSource {
    seed: u64,
    store: WeightStore,
}

impl InitSource {
    pub fn new(seed: u64) -> Self {
        InitSource {
            seed,
            store: WeightStore::new(),
        }
    }

    pub fn into_store(self) -> WeightStore {
        self.store
    }
}

impl TensorSource for InitSource {
    fn fetch(&mut self, name: &str, dims: &[usize], role: Role) -> Result<Vec<f32>> {
        let n: usize = dims.iter().product();
        let data = match role {
            Role::ConvWeight { fan_in } => {
                let bound = kaiming_bound(fan_in);
                let mut rng = SplitMix64::new(tensor_seed(self.seed, name));
                (0..n).map(|_| rng.uniform(-bound, bound) as f32).collect()
            }
            Role::ConvBias | Role::BnBeta | Role::BnMean => vec![0.0; n],
            Role::BnGamma | Role::BnVar => vec![1.0; n],
        };
        self.store.insert(name, dims.to_vec(), data.clone())?;
        Ok(data)
    }
}

/// Fresh weights for every tensor `cfg` requires.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> Result<WeightStore> {
    let mut src = InitSource::new(seed);
    Model::from_source(cfg, &mut src)?;
    Ok(src.into_store())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn splitmix_reference_values() {
        let mut r = SplitMix64::new(1234567);
        assert_eq!(r.next_u64(), 6457827717110365317);
        assert_eq!(r.next_u64(), 3203168211198807973);
    }

    #[test]
    fn unit_interval() {
        let mut r = SplitMix64::new(0);
        for _ in 0..1000 {
            let v = r.next_f64();
            assert!((0.0..1.0).contains(&v));
        }
    }
}
