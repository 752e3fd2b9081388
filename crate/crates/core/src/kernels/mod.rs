//! Numerical kernels: convolution, pooling, batch norm, activations, resize.

pub mod conv;
pub mod norm;
pub mod parallel;
pub mod pool;
pub mod resize;

pub use conv::{accumulation, conv2d, conv2d_reference, conv2d_with, conv_out_size, set_accumulation, Accumulation, ConvParams};
pub use norm::{batch_norm_infer, fold_bn_into_conv, BnParams, BN_EPS};
pub use parallel::{is_single_threaded, set_single_threaded};
pub use pool::{adaptive_avg_pool2d, avg_pool2d, PoolParams};
pub use resize::bilinear_resize;

use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn activation(kind: Activation, x: &Tensor4) -> Tensor4 {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

pub(crate) fn relu_in_place(x: &mut Tensor4) {
    x.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn activation_values() {
        let x = Tensor4::from_vec(Shape::new(1, 1, 1, 4), vec![-3.0, 3.0, 0.0, 3f32.ln()]).unwrap();
        let r = activation(Activation::Relu, &x);
        assert_eq!(&r.data()[..3], &[0.0, 3.0, 0.0]);
        let s = activation(Activation::Sigmoid, &x);
        assert_eq!(s.data()[2], 0.5);
        assert!((s.data()[3] - 0.75).abs() < 1e-7);
        assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
