//! 2-D cross-correlation with zero padding, stride and dilation.
//!
//! [`conv2d`] lowers each tile of output rows to a patch matrix and hands it to
//! a GEMM; [`conv2d_reference`] is the frozen direct-summation oracle it is
//! tested against. The gradient helpers at the bottom are direct summations in
//! f64 used by the decoder's analytic backward pass.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::kernels::parallel;
use crate::tensor::{Shape, Tensor4};

/// Weights and geometry of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// out_c × in_c × kh × kw
    pub weight: Tensor4,
    pub bias: Option<Vec<f32>>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

/// Output length along one axis, or `None` when the window does not fit.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (kernel - 1) + 1;
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || dilation == 0 || padded < span {
        return None;
    }
    Some((padded - span) / stride + 1)
}

impl ConvParams {
    pub fn new(weight: Tensor4) -> Self {
        ConvParams {
            weight,
            bias: None,
            stride: (1, 1),
            padding: (0, 0),
            dilation: (1, 1),
        }
    }

    pub fn with_bias(mut self, bias: Vec<f32>) -> Self {
        self.bias = Some(bias);
        self
    }

    pub fn with_stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn with_padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn with_dilation(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = (dh, dw);
        self
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape().c
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s.h, s.w)
    }

    pub fn param_count(&self) -> usize {
        self.weight.shape().numel() + self.bias.as_ref().map_or(0, Vec::len)
    }

    /// Output shape for an input of shape `x`, validating channels and size.
    pub fn output_shape(&self, x: Shape) -> Result<Shape> {
        if x.c != self.in_channels() {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: x,
                right: self.weight.shape(),
            });
        }
        if let Some(b) = &self.bias {
            if b.len() != self.out_channels() {
                return Err(Error::invalid(
                    "conv2d",
                    format!("bias of length {} for {} output channels", b.len(), self.out_channels()),
                ));
            }
        }
        let (kh, kw) = self.kernel();
        let oh = conv_out_size(x.h, kh, self.stride.0, self.padding.0, self.dilation.0);
        let ow = conv_out_size(x.w, kw, self.stride.1, self.padding.1, self.dilation.1);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok(Shape::new(x.n, self.out_channels(), oh, ow)),
            _ => Err(Error::DegenerateOutput { op: "conv2d", input: x }),
        }
    }
}

/// Accumulator type of the convolution GEMM. Storage is always f32.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accumulation {
    F32,
    /// Operands widened to f64 before the product; about twice as slow.
    F64,
}

static WIDE_ACCUMULATION: AtomicBool = AtomicBool::new(false);

/// Process-wide accumulator choice for [`conv2d`].
pub fn set_accumulation(a: Accumulation) {
    WIDE_ACCUMULATION.store(a == Accumulation::F64, Ordering::SeqCst);
}

pub fn accumulation() -> Accumulation {
    if WIDE_ACCUMULATION.load(Ordering::SeqCst) {
        Accumulation::F64
    } else {
        Accumulation::F32
    }
}

/// Upper bound on elements in one tile's patch matrix.
const PATCH_BUDGET: usize = 1 << 20;

pub fn conv2d(x: &Tensor4, p: &ConvParams) -> Result<Tensor4> {
    conv2d_with(x, p, accumulation())
}

/// [`conv2d`] with an explicit accumulator instead of the process-wide one.
pub fn conv2d_with(x: &Tensor4, p: &ConvParams, acc: Accumulation) -> Result<Tensor4> {
    let out_shape = p.output_shape(x.shape())?;
    let xs = x.shape();
    let (kh, kw) = p.kernel();
    let k = xs.c * kh * kw;
    let out_c = out_shape.c;
    let (oh, ow) = out_shape.spatial();
    let out_plane = oh * ow;
    let pointwise = kh == 1 && kw == 1 && p.stride == (1, 1) && p.padding == (0, 0);

    let rows_per_tile = (PATCH_BUDGET / (k * ow)).clamp(1, oh);
    let tiles = oh.div_ceil(rows_per_tile);
    let mut out = Tensor4::zeros(out_shape);
    let weight = p.weight.data();

    let wide = acc == Accumulation::F64;
    let weight64: Vec<f64> = if wide { weight.iter().map(|&v| v as f64).collect() } else { Vec::new() };

    for n in 0..xs.n {
        let input = x.item(n);
        let input64: Vec<f64> = if wide && pointwise {
            input.iter().map(|&v| v as f64).collect()
        } else {
            Vec::new()
        };
        let results = parallel::map_range(tiles, |t| {
            let r0 = t * rows_per_tile;
            let r1 = (r0 + rows_per_tile).min(oh);
            let cols = (r1 - r0) * ow;
            // SAFETY: every pointer/stride pair below describes a region that
            // lies inside the slice it was derived from.
            let c = if wide {
                let patch: Vec<f64>;
                let (b, rsb) = if pointwise {
                    (input64[r0 * ow..].as_ptr(), xs.plane() as isize)
                } else {
                    patch = im2col(input, xs, p, r0, r1, ow).iter().map(|&v| v as f64).collect();
                    (patch.as_ptr(), cols as isize)
                };
                let mut c = vec![0f64; out_c * cols];
                unsafe {
                    matrixmultiply::dgemm(
                        out_c, k, cols, 1.0,
                        weight64.as_ptr(), k as isize, 1,
                        b, rsb, 1,
                        0.0,
                        c.as_mut_ptr(), cols as isize, 1,
                    );
                }
                c.into_iter().map(|v| v as f32).collect()
            } else {
                let patch: Vec<f32>;
                let (b, rsb) = if pointwise {
                    (input[r0 * ow..].as_ptr(), xs.plane() as isize)
                } else {
                    patch = im2col(input, xs, p, r0, r1, ow);
                    (patch.as_ptr(), cols as isize)
                };
                let mut c = vec![0f32; out_c * cols];
                unsafe {
                    matrixmultiply::sgemm(
                        out_c, k, cols, 1.0,
                        weight.as_ptr(), k as isize, 1,
                        b, rsb, 1,
                        0.0,
                        c.as_mut_ptr(), cols as isize, 1,
                    );
                }
                c
            };
            (r0, cols, c)
        });
        let dst = &mut out.data_mut()[n * out_c * out_plane..(n + 1) * out_c * out_plane];
        for (r0, cols, c) in results {
            for oc in 0..out_c {
                let start = oc * out_plane + r0 * ow;
                let (d, src) = (&mut dst[start..start + cols], &c[oc * cols..(oc + 1) * cols]);
                match &p.bias {
                    Some(bias) => d.iter_mut().zip(src).for_each(|(d, &v)| *d = v + bias[oc]),
                    None => d.copy_from_slice(src),
                }
            }
        }
    }
    Ok(out)
}

/// Gathers the (in_c·kh·kw) × ((r1−r0)·ow) patch matrix for output rows r0..r1.
fn im2col(input: &[f32], xs: Shape, p: &ConvParams, r0: usize, r1: usize, ow: usize) -> Vec<f32> {
    let (kh, kw) = p.kernel();
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    let (dh, dw) = p.dilation;
    let cols = (r1 - r0) * ow;
    let mut patch = vec![0f32; xs.c * kh * kw * cols];
    let (h, w) = (xs.h as isize, xs.w as isize);
    let mut row = 0;
    for ic in 0..xs.c {
        let plane = &input[ic * xs.plane()..(ic + 1) * xs.plane()];
        for ky in 0..kh {
            for kx in 0..kw {
                let dst = &mut patch[row * cols..(row + 1) * cols];
                let off_x = (kx * dw) as isize - pw as isize;
                // ox range with 0 <= ox*sw + off_x < w
                let lo = if off_x >= 0 { 0 } else { ((-off_x) as usize).div_ceil(sw) };
                let hi = if w - 1 - off_x < 0 {
                    0
                } else {
                    (((w - 1 - off_x) as usize) / sw + 1).min(ow)
                };
                for oy in r0..r1 {
                    let iy = (oy * sh + ky * dh) as isize - ph as isize;
                    if iy < 0 || iy >= h || lo >= hi {
                        continue;
                    }
                    let src = &plane[iy as usize * xs.w..(iy as usize + 1) * xs.w];
                    let d = &mut dst[(oy - r0) * ow..(oy - r0 + 1) * ow];
                    if sw == 1 {
                        let s0 = (lo as isize + off_x) as usize;
                        d[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            d[ox] = src[(ox as isize * sw as isize + off_x) as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    patch
}

/// Direct-summation oracle for [`conv2d`], accumulating in f64.
pub fn conv2d_reference(x: &Tensor4, p: &ConvParams) -> Result<Tensor4> {
    let os = p.output_shape(x.shape())?;
    let xs = x.shape();
    let (kh, kw) = p.kernel();
    let mut out = Tensor4::zeros(os);
    for n in 0..os.n {
        for oc in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let mut acc = p.bias.as_ref().map_or(0.0, |b| b[oc] as f64);
                    for ic in 0..xs.c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * p.stride.0 + ky * p.dilation.0) as isize - p.padding.0 as isize;
                                let ix = (ox * p.stride.1 + kx * p.dilation.1) as isize - p.padding.1 as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += x.at(n, ic, iy as usize, ix as usize) as f64
                                    * p.weight.at(oc, ic, ky, kx) as f64;
                            }
                        }
                    }
                    out.set(n, oc, oy, ox, acc as f32);
                }
            }
        }
    }
    Ok(out)
}

/// Visits every (output index, input index, weight index) triple of a
/// convolution. Padding taps are skipped.
fn for_each_tap(xs: Shape, os: Shape, p: &ConvParams, mut f: impl FnMut(usize, usize, usize)) {
    let (kh, kw) = p.kernel();
    let ws = p.weight.shape();
    for n in 0..os.n {
        for oc in 0..os.c {
            for oy in 0..os.h {
                for ox in 0..os.w {
                    let o = ((n * os.c + oc) * os.h + oy) * os.w + ox;
                    for ic in 0..xs.c {
                        for ky in 0..kh {
                            let iy = (oy * p.stride.0 + ky * p.dilation.0) as isize - p.padding.0 as isize;
                            if iy < 0 || iy >= xs.h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * p.stride.1 + kx * p.dilation.1) as isize - p.padding.1 as isize;
                                if ix < 0 || ix >= xs.w as isize {
                                    continue;
                                }
                                let i = ((n * xs.c + ic) * xs.h + iy as usize) * xs.w + ix as usize;
                                let wi = ((oc * ws.c + ic) * kh + ky) * kw + kx;
                                f(o, i, wi);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of a convolution's output with respect to its input: the
/// transposed correlation of `grad_out` with the kernel.
pub fn conv2d_grad_input(input_shape: Shape, p: &ConvParams, grad_out: &[f64]) -> Result<Vec<f64>> {
    let os = p.output_shape(input_shape)?;
    if grad_out.len() != os.numel() {
        return Err(Error::invalid("conv2d_grad_input", "gradient length does not match output"));
    }
    let w = p.weight.data();
    let mut gx = vec![0f64; input_shape.numel()];
    for_each_tap(input_shape, os, p, |o, i, wi| gx[i] += grad_out[o] * w[wi] as f64);
    Ok(gx)
}

/// Gradients with respect to the kernel and the bias.
pub fn conv2d_grad_params(x: &Tensor4, p: &ConvParams, grad_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let os = p.output_shape(x.shape())?;
    if grad_out.len() != os.numel() {
        return Err(Error::invalid("conv2d_grad_params", "gradient length does not match output"));
    }
    let xd = x.data();
    let mut gw = vec![0f64; p.weight.shape().numel()];
    for_each_tap(x.shape(), os, p, |o, i, wi| gw[wi] += grad_out[o] * xd[i] as f64);
    let mut gb = vec![0f64; os.c];
    let plane = os.plane();
    for n in 0..os.n {
        for (oc, g) in gb.iter_mut().enumerate() {
            let start = (n * os.c + oc) * plane;
            *g += grad_out[start..start + plane].iter().sum::<f64>();
        }
    }
    Ok((gw, gb))
}

/// Double-precision convolution with the geometry of `p` but caller-supplied
/// weights and bias, laid out like `p.weight` and `p.bias`.
pub fn conv2d_f64(xs: Shape, x: &[f64], p: &ConvParams, w: &[f64], b: Option<&[f64]>) -> Result<Vec<f64>> {
    let os = p.output_shape(xs)?;
    if x.len() != xs.numel() || w.len() != p.weight.shape().numel() || b.is_some_and(|b| b.len() != os.c) {
        return Err(Error::invalid("conv2d_f64", "buffer length does not match geometry"));
    }
    let plane = os.plane();
    let mut out: Vec<f64> = (0..os.numel())
        .map(|o| b.map_or(0.0, |b| b[(o / plane) % os.c]))
        .collect();
    for_each_tap(xs, os, p, |o, i, wi| out[o] += x[i] * w[wi]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> impl FnMut() -> f32 {
        let mut s = seed ^ 0x9E37_79B9_7F4A_7C15;
        move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            ((s >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
        }
    }

    fn rel_err(a: &Tensor4, b: &Tensor4) -> f32 {
        let scale = b.data().iter().fold(0f32, |m, v| m.max(v.abs())).max(1e-6);
        a.max_abs_diff(b) / scale
    }

    #[test]
    fn identity_kernel() {
        let mut r = rng(1);
        let x = Tensor4::from_fn(Shape::new(1, 1, 5, 7), |_, _, _, _| r());
        let p = ConvParams::new(Tensor4::full(Shape::new(1, 1, 1, 1), 1.0));
        assert_eq!(conv2d(&x, &p).unwrap(), x);
    }

    #[test]
    fn all_ones_counts_to_nine() {
        let x = Tensor4::full(Shape::new(1, 1, 3, 3), 1.0);
        let p = ConvParams::new(Tensor4::full(Shape::new(1, 1, 3, 3), 1.0));
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data(), &[9.0]);
        assert_eq!(conv2d_reference(&x, &p).unwrap().data(), &[9.0]);
    }

    #[test]
    fn strided_dilated_matches_reference() {
        let mut r = rng(2);
        let x = Tensor4::from_fn(Shape::new(1, 3, 8, 8), |_, _, _, _| r());
        let w = Tensor4::from_fn(Shape::new(4, 3, 3, 3), |_, _, _, _| r());
        let p = ConvParams::new(w)
            .with_bias((0..4).map(|_| r()).collect())
            .with_stride(2, 2)
            .with_dilation(2, 2)
            .with_padding(2, 2);
        let fast = conv2d(&x, &p).unwrap();
        let slow = conv2d_reference(&x, &p).unwrap();
        assert_eq!(fast.shape(), Shape::new(1, 4, 4, 4));
        assert!(rel_err(&fast, &slow) <= 1e-5);
    }

    #[test]
    fn wide_accumulation_matches_reference() {
        let mut r = rng(5);
        let x = Tensor4::from_fn(Shape::new(2, 16, 9, 7), |_, _, _, _| r());
        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0), (1, 2, 0)] {
            let w = Tensor4::from_fn(Shape::new(5, 16, k, k), |_, _, _, _| r());
            let p = ConvParams::new(w)
                .with_bias((0..5).map(|_| r()).collect())
                .with_stride(stride, stride)
                .with_padding(pad, pad);
            let wide = conv2d_with(&x, &p, Accumulation::F64).unwrap();
            let slow = conv2d_reference(&x, &p).unwrap();
            assert!(wide.max_abs_diff(&slow) <= 1e-6, "k{k} s{stride}");
        }
    }

    #[test]
    fn errors() {
        let x = Tensor4::zeros(Shape::new(1, 2, 2, 2));
        let p = ConvParams::new(Tensor4::zeros(Shape::new(1, 3, 1, 1)));
        assert!(matches!(conv2d(&x, &p), Err(Error::ShapeMismatch { .. })));
        let p = ConvParams::new(Tensor4::zeros(Shape::new(1, 2, 3, 3)));
        assert!(matches!(conv2d(&x, &p), Err(Error::DegenerateOutput { .. })));
    }

    #[test]
    fn out_size_formula_exhaustive() {
        for input in 1..12 {
            for k in 1..5 {
                for s in 1..4 {
                    for d in 1..4 {
                        for pad in 0..4 {
                            let expect = {
                                let num = input as i64 + 2 * pad as i64 - d as i64 * (k as i64 - 1) - 1;
                                if num < 0 { None } else { Some((num / s as i64 + 1) as usize) }
                            };
                            assert_eq!(conv_out_size(input, k, s, pad, d), expect);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn grad_input_is_adjoint() {
        // <conv(x), g> == <x, conv^T(g)> for a bias-free kernel.
        let mut r = rng(5);
        let x = Tensor4::from_fn(Shape::new(1, 2, 5, 6), |_, _, _, _| r());
        let p = ConvParams::new(Tensor4::from_fn(Shape::new(3, 2, 1, 3), |_, _, _, _| r())).with_padding(0, 1);
        let y = conv2d_reference(&x, &p).unwrap();
        let g: Vec<f64> = (0..y.shape().numel()).map(|_| r() as f64).collect();
        let lhs: f64 = y.data().iter().zip(&g).map(|(&a, b)| a as f64 * b).sum();
        let gx = conv2d_grad_input(x.shape(), &p, &g).unwrap();
        let rhs: f64 = x.data().iter().zip(&gx).map(|(&a, b)| a as f64 * b).sum();
        assert!((lhs - rhs).abs() < 1e-5, "{lhs} vs {rhs}");
    }
}
