use crate::error::{Error, Result};
use crate::kernels::conv::conv_out_size;
use crate::tensor::{Shape, Tensor4};

/// Window geometry for [`avg_pool2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolParams {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    /// Divide by the full window size instead of the in-bounds count.
    pub count_includes_pad: bool,
}

impl PoolParams {
    pub fn new(kernel: (usize, usize), stride: (usize, usize)) -> Self {
        PoolParams {
            kernel,
            stride,
            padding: (0, 0),
            count_includes_pad: false,
        }
    }

    pub fn with_padding(mut self, ph: usize, pw: usize) -> Self {
        self.padding = (ph, pw);
        self
    }

    pub fn counting_pad(mut self, on: bool) -> Self {
        self.count_includes_pad = on;
        self
    }
}

pub fn avg_pool2d(x: &Tensor4, p: PoolParams) -> Result<Tensor4> {
    let s = x.shape();
    let oh = conv_out_size(s.h, p.kernel.0, p.stride.0, p.padding.0, 1);
    let ow = conv_out_size(s.w, p.kernel.1, p.stride.1, p.padding.1, 1);
    let (oh, ow) = match (oh, ow) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::DegenerateOutput { op: "avg_pool2d", input: s }),
    };
    let mut out = Tensor4::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = out.plane_mut(n, c);
            for oy in 0..oh {
                let y0 = (oy * p.stride.0) as isize - p.padding.0 as isize;
                let y1 = y0 + p.kernel.0 as isize;
                let (ya, yb) = (y0.max(0) as usize, y1.min(s.h as isize) as usize);
                for ox in 0..ow {
                    let x0 = (ox * p.stride.1) as isize - p.padding.1 as isize;
                    let x1 = x0 + p.kernel.1 as isize;
                    let (xa, xb) = (x0.max(0) as usize, x1.min(s.w as isize) as usize);
                    let mut sum = 0f64;
                    for y in ya..yb {
                        sum += src[y * s.w + xa..y * s.w + xb].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let count = if p.count_includes_pad {
                        p.kernel.0 * p.kernel.1
                    } else {
                        (yb.saturating_sub(ya)) * (xb.saturating_sub(xa))
                    };
                    dst[oy * ow + ox] = if count == 0 { 0.0 } else { (sum / count as f64) as f32 };
                }
            }
        }
    }
    Ok(out)
}

/// Half-open input range covered by adaptive bin `i` of `out` over `len`.
pub fn adaptive_bin(i: usize, len: usize, out: usize) -> (usize, usize) {
    ((i * len) / out, ((i + 1) * len).div_ceil(out))
}

/// Averages each output bin over rows `[⌊i·h/oh⌋, ⌈(i+1)·h/oh⌉)` and the
/// analogous columns.
pub fn adaptive_avg_pool2d(x: &Tensor4, out: (usize, usize)) -> Result<Tensor4> {
    let s = x.shape();
    let (oh, ow) = out;
    if oh == 0 || ow == 0 || oh > s.h || ow > s.w {
        return Err(Error::invalid(
            "adaptive_avg_pool2d",
            format!("output grid {oh}×{ow} does not fit input {s}"),
        ));
    }
    let mut result = Tensor4::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = result.plane_mut(n, c);
            for i in 0..oh {
                let (ya, yb) = adaptive_bin(i, s.h, oh);
                for j in 0..ow {
                    let (xa, xb) = adaptive_bin(j, s.w, ow);
                    let mut sum = 0f64;
                    for y in ya..yb {
                        sum += src[y * s.w + xa..y * s.w + xb].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    dst[i * ow + j] = (sum / ((yb - ya) * (xb - xa)) as f64) as f32;
                }
            }
        }
    }
    Ok(result)
}
