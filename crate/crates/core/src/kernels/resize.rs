use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor4};

/// Source taps for one output coordinate under half-pixel centres:
/// `src = (dst + 0.5)·in/out − 0.5`, clamped at zero.
fn taps(dst: usize, input: usize, output: usize) -> (usize, usize, f32) {
    let scale = input as f64 / output as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(input - 1);
    let i1 = (i0 + 1).min(input - 1);
    (i0, i1, (src - i0 as f64) as f32)
}

/// Bilinear interpolation with `align_corners = false` semantics. Returns an
/// exact copy when the size is unchanged.
pub fn bilinear_resize(x: &Tensor4, out: (usize, usize)) -> Result<Tensor4> {
    let s = x.shape();
    let (oh, ow) = out;
    if oh == 0 || ow == 0 {
        return Err(Error::invalid("bilinear_resize", format!("target {oh}×{ow}")));
    }
    if (oh, ow) == (s.h, s.w) {
        return Ok(x.clone());
    }
    let rows: Vec<_> = (0..oh).map(|y| taps(y, s.h, oh)).collect();
    let cols: Vec<_> = (0..ow).map(|x| taps(x, s.w, ow)).collect();
    let mut result = Tensor4::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            let src = x.plane(n, c);
            let dst = result.plane_mut(n, c);
            for (y, &(y0, y1, ly)) in rows.iter().enumerate() {
                let r0 = &src[y0 * s.w..(y0 + 1) * s.w];
                let r1 = &src[y1 * s.w..(y1 + 1) * s.w];
                for (xo, &(x0, x1, lx)) in cols.iter().enumerate() {
                    let top = r0[x0] * (1.0 - lx) + r0[x1] * lx;
                    let bottom = r1[x0] * (1.0 - lx) + r1[x1] * lx;
                    dst[y * ow + xo] = top * (1.0 - ly) + bottom * ly;
                }
            }
        }
    }
    Ok(result)
}
