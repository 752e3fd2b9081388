//! Where network tensors come from.
//!
//! Every block pulls its tensors by name through a [`TensorSource`], so one
//! description of the architecture serves loading a store, initializing a
//! fresh one and building positive-weight probe networks.

use crate::error::{Error, Result};
use crate::io::store::WeightStore;

/// What a requested tensor is used for; drives initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    ConvWeight { fan_in: usize },
    ConvBias,
    BnGamma,
    BnBeta,
    BnMean,
    BnVar,
}

pub trait TensorSource {
    fn fetch(&mut self, name: &str, dims: &[usize], role: Role) -> Result<Vec<f32>>;
}

/// Serves tensors out of a [`WeightStore`], checking dims.
pub struct StoreSource<'a> {
    store: &'a WeightStore,
}

impl<'a> StoreSource<'a> {
    pub fn new(store: &'a WeightStore) -> Self {
        StoreSource { store }
    }
}

impl TensorSource for StoreSource<'_> {
    fn fetch(&mut self, name: &str, dims: &[usize], _role: Role) -> Result<Vec<f32>> {
        let rec = self
            .store
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if rec.dims != dims {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: dims.to_vec(),
                found: rec.dims.clone(),
            });
        }
        Ok(rec.data.clone())
    }
}

/// All-positive weights (1/fan_in), zero biases and identity batch norm. With
/// a non-negative input every activation stays non-negative, so nothing
/// cancels and the nonzero support of an output is exactly its region of
/// influence.
pub struct PositiveSource;

impl TensorSource for PositiveSource {
    fn fetch(&mut self, _name: &str, dims: &[usize], role: Role) -> Result<Vec<f32>> {
        let n: usize = dims.iter().product();
        let v = match role {
            Role::ConvWeight { fan_in } => 1.0 / fan_in as f32,
            Role::ConvBias | Role::BnBeta | Role::BnMean => 0.0,
            Role::BnGamma | Role::BnVar => 1.0,
        };
        Ok(vec![v; n])
    }
}
