//! Receptive-field arithmetic and its empirical impulse-response check.

use crate::error::Result;
use crate::kernels::conv::{conv2d, ConvParams};
use crate::tensor::{Shape, Tensor4};

/// Kernel, stride and dilation of one layer, per axis (h, w).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerGeom {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
}

impl LayerGeom {
    pub fn square(k: usize, s: usize, d: usize) -> Self {
        LayerGeom {
            kernel: (k, k),
            stride: (s, s),
            dilation: (d, d),
        }
    }

    pub fn of(p: &ConvParams) -> Self {
        LayerGeom {
            kernel: p.kernel(),
            stride: p.stride,
            dilation: p.dilation,
        }
    }
}

/// Receptive field and jump after a chain, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfSummary {
    pub rf: (usize, usize),
    pub jump: (usize, usize),
}

/// Composes `r ← r + (k−1)·d·j`, `j ← j·s` from `r = j = 1`, per axis.
pub fn receptive_field_summary(chain: &[LayerGeom]) -> RfSummary {
    let mut r = (1, 1);
    let mut j = (1, 1);
    for g in chain {
        r.0 += (g.kernel.0 - 1) * g.dilation.0 * j.0;
        r.1 += (g.kernel.1 - 1) * g.dilation.1 * j.1;
        j.0 *= g.stride.0;
        j.1 *= g.stride.1;
    }
    RfSummary { rf: r, jump: j }
}

pub fn receptive_field(chain: &[LayerGeom]) -> (usize, usize) {
    receptive_field_summary(chain).rf
}

/// Inclusive bounding box of nonzero output positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SupportBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl SupportBox {
    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }

    pub fn contains(&self, other: &SupportBox) -> bool {
        self.top <= other.top && self.left <= other.left && self.bottom >= other.bottom && self.right >= other.right
    }

    /// Maps an output-space box at the given jump back to the input pixels
    /// at the centres of its first and last units.
    pub fn to_input(&self, jump: (usize, usize)) -> SupportBox {
        SupportBox {
            top: self.top * jump.0,
            left: self.left * jump.1,
            bottom: self.bottom * jump.0,
            right: self.right * jump.1,
        }
    }
}

/// Feeds a unit impulse at `at` (in every input channel) through `net` and
/// returns the box of output positions that became nonzero in any channel.
pub fn impulse_support<F>(net: F, input: Shape, at: (usize, usize)) -> Result<Option<SupportBox>>
where
    F: Fn(&Tensor4) -> Result<Tensor4>,
{
    let mut x = Tensor4::zeros(input);
    for c in 0..input.c {
        x.set(0, c, at.0, at.1, 1.0);
    }
    let y = net(&x)?;
    Ok(nonzero_box(&y))
}

pub fn nonzero_box(y: &Tensor4) -> Option<SupportBox> {
    let s = y.shape();
    let mut b: Option<SupportBox> = None;
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = y.plane(n, c);
            for yy in 0..s.h {
                for xx in 0..s.w {
                    if plane[yy * s.w + xx] != 0.0 {
                        b = Some(match b {
                            None => SupportBox { top: yy, left: xx, bottom: yy, right: xx },
                            Some(b) => SupportBox {
                                top: b.top.min(yy),
                                left: b.left.min(xx),
                                bottom: b.bottom.max(yy),
                                right: b.right.max(xx),
                            },
                        });
                    }
                }
            }
        }
    }
    b
}

/// Output units reached by an impulse at input position `p` along one axis,
/// for a chain whose layers are all centre-padded (`pad = d·(k−1)/2`): unit
/// `o` sees inputs `o·j ± (r−1)/2`.
pub fn predicted_span(rf: usize, jump: usize, p: usize, out_len: usize) -> (usize, usize) {
    let half = (rf - 1) / 2;
    let lo = p.saturating_sub(half).div_ceil(jump);
    let hi = ((p + half) / jump).min(out_len - 1);
    (lo, hi)
}

/// Centre-padded single-channel convolutions with all-ones kernels: the
/// probe network for a bare chain.
pub fn ones_chain(chain: &[LayerGeom]) -> Vec<ConvParams> {
    chain
        .iter()
        .map(|g| {
            ConvParams::new(Tensor4::full(Shape::new(1, 1, g.kernel.0, g.kernel.1), 1.0))
                .with_stride(g.stride.0, g.stride.1)
                .with_dilation(g.dilation.0, g.dilation.1)
                .with_padding(g.dilation.0 * (g.kernel.0 - 1) / 2, g.dilation.1 * (g.kernel.1 - 1) / 2)
        })
        .collect()
}

pub fn run_chain(convs: &[ConvParams], x: &Tensor4) -> Result<Tensor4> {
    convs.iter().try_fold(x.clone(), |acc, p| conv2d(&acc, p))
}

/// Empirical receptive field of output unit `unit`: the per-axis extent of
/// input positions whose impulse reaches it. Scans one full row and one full
/// column of the input, so it is meant for small probes.
pub fn measured_receptive_field<F>(net: F, input: Shape, unit: (usize, usize), centre: (usize, usize)) -> Result<(usize, usize)>
where
    F: Fn(&Tensor4) -> Result<Tensor4>,
{
    let reaches = |y: usize, x: usize| -> Result<bool> {
        let mut t = Tensor4::zeros(input);
        for c in 0..input.c {
            t.set(0, c, y, x, 1.0);
        }
        let out = net(&t)?;
        let s = out.shape();
        Ok((0..s.c).any(|c| out.at(0, c, unit.0, unit.1) != 0.0))
    };
    let mut rows = Vec::new();
    for y in 0..input.h {
        if reaches(y, centre.1)? {
            rows.push(y);
        }
    }
    let mut cols = Vec::new();
    for x in 0..input.w {
        if reaches(centre.0, x)? {
            cols.push(x);
        }
    }
    let extent = |v: &[usize]| v.last().map_or(0, |last| last - v[0] + 1);
    Ok((extent(&rows), extent(&cols)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(receptive_field(&[LayerGeom::square(3, 1, 1)]), (3, 3));
        assert_eq!(receptive_field(&[LayerGeom::square(3, 1, 1); 2]), (5, 5));
        assert_eq!(receptive_field(&[LayerGeom::square(3, 1, 2)]), (5, 5));
        let asym = LayerGeom { kernel: (1, 3), stride: (1, 1), dilation: (1, 1) };
        assert_eq!(receptive_field(&[asym]), (1, 3));
        assert_eq!(receptive_field(&[]), (1, 1));
    }

    #[test]
    fn impulse_through_identity_and_3x3() {
        let shape = Shape::new(1, 1, 9, 9);
        let id = ones_chain(&[LayerGeom::square(1, 1, 1)]);
        let b = impulse_support(|x| run_chain(&id, x), shape, (4, 4)).unwrap().unwrap();
        assert_eq!((b.height(), b.width()), (1, 1));
        let c3 = ones_chain(&[LayerGeom::square(3, 1, 1)]);
        let b = impulse_support(|x| run_chain(&c3, x), shape, (4, 4)).unwrap().unwrap();
        assert_eq!((b.height(), b.width()), (3, 3));
    }

    #[test]
    fn predicted_span_matches_stride_two() {
        // 3×3 stride 2 pad 1: output o sees inputs 2o−1..2o+1.
        let chain = [LayerGeom::square(3, 2, 1)];
        let convs = ones_chain(&chain);
        for p in 0..9 {
            let b = impulse_support(|x| run_chain(&convs, x), Shape::new(1, 1, 9, 9), (p, p)).unwrap().unwrap();
            assert_eq!((b.top, b.bottom), predicted_span(3, 2, p, 5), "p = {p}");
        }
    }
}
