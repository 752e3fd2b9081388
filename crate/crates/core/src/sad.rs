//! Simple Attention Decoder.
//!
//! ```text
//! A1  = σ(conv1×3(dp1 + dp2))
//! A2  = σ(conv3×1(dp1 + dp2))
//! A   = A1 + A2
//! out = conv1×1(x·(1 + A) + y·(1 + (1 − A)))
//! ```
//!
//! `y` is the context output already resized to the 1/8 grid. The backward
//! pass is exact chain rule, accumulated in f64.

use crate::blocks::ConvSpec;
use crate::context::{gated_fuse, DualAxisAttention};
use crate::error::{Error, Result};
use crate::kernels::conv::{conv2d_f64, conv2d_grad_input, conv2d_grad_params};
use crate::kernels::{conv2d, ConvParams};
use crate::params::TensorSource;
use crate::tensor::{Shape, Tensor4};

#[derive(Debug, Clone, PartialEq)]
pub struct SadWeights {
    pub attention: DualAxisAttention,
    /// 1×1, c → c, with bias.
    pub out: ConvParams,
}

impl SadWeights {
    pub fn load(src: &mut dyn TensorSource, prefix: &str, c: usize) -> Result<Self> {
        Ok(SadWeights {
            attention: DualAxisAttention::load(src, &format!("{prefix}.attn"), c)?,
            out: ConvSpec::k1(c, c).bias().load(src, &format!("{prefix}.out"))?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.attention.param_count() + self.out.param_count()
    }
}

/// Forward intermediates kept for [`sad_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct SadCache {
    pub x: Tensor4,
    pub y: Tensor4,
    pub dp_sum: Tensor4,
    pub a_row: Tensor4,
    pub a_col: Tensor4,
    pub a: Tensor4,
    /// Input of the final 1×1 convolution.
    pub fused: Tensor4,
}

pub fn sad_forward(x: &Tensor4, dp1: &Tensor4, dp2: &Tensor4, y: &Tensor4, w: &SadWeights) -> Result<(Tensor4, SadCache)> {
    for t in [dp1, dp2, y] {
        if t.shape() != x.shape() {
            return Err(Error::ShapeMismatch {
                op: "sad_forward",
                left: x.shape(),
                right: t.shape(),
            });
        }
    }
    let dp_sum = dp1.add(dp2)?;
    let maps = w.attention.forward(&dp_sum)?;
    let fused = gated_fuse(x, y, &maps.a)?;
    let out = conv2d(&fused, &w.out)?;
    let cache = SadCache {
        x: x.clone(),
        y: y.clone(),
        dp_sum,
        a_row: maps.a_row,
        a_col: maps.a_col,
        a: maps.a,
        fused,
    };
    Ok((out, cache))
}

/// Gradients of a scalar loss with respect to every SAD input and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SadGrads {
    pub x: Vec<f64>,
    pub dp1: Vec<f64>,
    pub dp2: Vec<f64>,
    pub y: Vec<f64>,
    pub row_w: Vec<f64>,
    pub row_b: Vec<f64>,
    pub col_w: Vec<f64>,
    pub col_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

/// Names of the differentiable SAD tensors, in [`SadGrads::named`] order.
pub const SAD_TENSORS: [&str; 10] = ["x", "dp1", "dp2", "y", "row.w", "row.b", "col.w", "col.b", "out.w", "out.b"];

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Inputs and weights as f64 buffers in [`SAD_TENSORS`] order.
pub fn sad_flatten(x: &Tensor4, dp1: &Tensor4, dp2: &Tensor4, y: &Tensor4, w: &SadWeights) -> Vec<Vec<f64>> {
    let bias = |p: &ConvParams| widen(p.bias.as_deref().unwrap_or(&[]));
    let att = &w.attention;
    vec![
        widen(x.data()),
        widen(dp1.data()),
        widen(dp2.data()),
        widen(y.data()),
        widen(att.row.weight.data()),
        bias(&att.row),
        widen(att.col.weight.data()),
        bias(&att.col),
        widen(w.out.weight.data()),
        bias(&w.out),
    ]
}

/// The SAD forward evaluated entirely in f64 on flattened tensors; `w`
/// supplies only the convolution geometry.
pub fn sad_forward_f64(shape: Shape, t: &[Vec<f64>], w: &SadWeights) -> Result<Vec<f64>> {
    if t.len() != SAD_TENSORS.len() {
        return Err(Error::invalid("sad_forward_f64", format!("expected 10 tensors, got {}", t.len())));
    }
    let n = shape.numel();
    let sum: Vec<f64> = t[1].iter().zip(&t[2]).map(|(a, b)| a + b).collect();
    let att = &w.attention;
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let zr = conv2d_f64(shape, &sum, &att.row, &t[4], Some(&t[5]))?;
    let zc = conv2d_f64(shape, &sum, &att.col, &t[6], Some(&t[7]))?;
    let fused: Vec<f64> = (0..n)
        .map(|i| {
            let a = sig(zr[i]) + sig(zc[i]);
            t[0][i] * (1.0 + a) + t[3][i] * (2.0 - a)
        })
        .collect();
    conv2d_f64(shape, &fused, &w.out, &t[8], Some(&t[9]))
}

impl SadGrads {
    /// (name, gradient) pairs in a fixed order.
    pub fn named(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("x", &self.x),
            ("dp1", &self.dp1),
            ("dp2", &self.dp2),
            ("y", &self.y),
            ("row.w", &self.row_w),
            ("row.b", &self.row_b),
            ("col.w", &self.col_w),
            ("col.b", &self.col_b),
            ("out.w", &self.out_w),
            ("out.b", &self.out_b),
        ]
    }
}

pub fn sad_backward(cache: &SadCache, grad_out: &Tensor4, w: &SadWeights) -> Result<SadGrads> {
    let fs = cache.fused.shape();
    let expected = w.out.output_shape(fs)?;
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "sad_backward",
            left: expected,
            right: grad_out.shape(),
        });
    }
    let g_out: Vec<f64> = grad_out.data().iter().map(|&v| v as f64).collect();
    let g_fused = conv2d_grad_input(fs, &w.out, &g_out)?;
    let (out_w, out_b) = conv2d_grad_params(&cache.fused, &w.out, &g_out)?;

    let n = fs.numel();
    let (mut gx, mut gy) = (vec![0f64; n], vec![0f64; n]);
    let (mut gz_row, mut gz_col) = (vec![0f64; n], vec![0f64; n]);
    for i in 0..n {
        let a = cache.a.data()[i] as f64;
        let g = g_fused[i];
        gx[i] = g * (1.0 + a);
        gy[i] = g * (2.0 - a);
        let g_a = g * (cache.x.data()[i] as f64 - cache.y.data()[i] as f64);
        let ar = cache.a_row.data()[i] as f64;
        let ac = cache.a_col.data()[i] as f64;
        gz_row[i] = g_a * ar * (1.0 - ar);
        gz_col[i] = g_a * ac * (1.0 - ac);
    }

    let att = &w.attention;
    let from_row = conv2d_grad_input(fs, &att.row, &gz_row)?;
    let from_col = conv2d_grad_input(fs, &att.col, &gz_col)?;
    let g_sum: Vec<f64> = from_row.iter().zip(&from_col).map(|(a, b)| a + b).collect();
    let (row_w, row_b) = conv2d_grad_params(&cache.dp_sum, &att.row, &gz_row)?;
    let (col_w, col_b) = conv2d_grad_params(&cache.dp_sum, &att.col, &gz_col)?;

    Ok(SadGrads {
        x: gx,
        dp1: g_sum.clone(),
        dp2: g_sum,
        y: gy,
        row_w,
        row_b,
        col_w,
        col_b,
        out_w,
        out_b,
    })
}
