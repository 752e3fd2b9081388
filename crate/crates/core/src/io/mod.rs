//! Weight containers, initialization and image files.

pub mod image;
pub mod init;
pub mod stf;
pub mod store;

pub use image::{
    colorize, preprocess, read_image, read_label_map, read_raster, write_image, write_label_map, write_raster,
    Normalization, Palette, Raster,
};
pub use init::init_weights;
pub use stf::{decode_stf, encode_stf, read_stf, write_stf, StfError};
pub use store::{TensorRecord, WeightStore};
