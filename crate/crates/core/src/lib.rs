//! CPU inference engine for SANet, a real-time semantic segmentation
//! network built from a dilated spatial path, an asymmetric pyramid pooling
//! context module and a light attention decoder.
//!
//! Tensors are dense `N×C×H×W` `f32` buffers ([`Tensor4`]). Networks are
//! assembled from named tensors held in a [`WeightStore`], which is read
//! from and written to the STF container format.

pub mod bench;
pub mod blocks;
pub mod context;
pub mod error;
pub mod io;
pub mod kernels;
pub mod model;
pub mod params;
pub mod receptive;
pub mod sad;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use io::{init_weights, read_stf, write_stf, WeightStore};
pub use model::{describe, Model, ModelConfig, Prefix, Variant};
pub use tensor::{ClassMap, Shape, Tensor4};
