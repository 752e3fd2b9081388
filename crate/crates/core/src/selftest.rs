//! Built-in oracle checks, runnable from a release binary.

use crate::error::Result;
use crate::io::init::SplitMix64;
use crate::io::{decode_stf, encode_stf, WeightStore};
use crate::kernels::{
    adaptive_avg_pool2d, avg_pool2d, batch_norm_infer, bilinear_resize, conv2d, conv2d_reference, fold_bn_into_conv,
    BnParams, ConvParams, PoolParams,
};
use crate::tensor::{Shape, Tensor4};
use crate::train::{sad_gradcheck, GradCheckConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub cases: usize,
    /// Worst error seen, in the check's own metric.
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

fn tensor(s: Shape, rng: &mut SplitMix64) -> Tensor4 {
    Tensor4::from_fn(s, |_, _, _, _| rng.uniform(-1.0, 1.0) as f32)
}

fn dim(rng: &mut SplitMix64, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Largest `|a − b| / max(1, |b|)`.
fn rel_err(a: &Tensor4, b: &Tensor4) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs() / (y as f64).abs().max(1.0))
        .fold(0.0, f64::max)
}

fn check_conv(rng: &mut SplitMix64, cases: usize) -> Result<f64> {
    let mut worst = 0f64;
    for _ in 0..cases {
        let (kh, kw) = (dim(rng, 1, 3), dim(rng, 1, 3));
        let (s, d) = (dim(rng, 1, 2), dim(rng, 1, 2));
        let ic = dim(rng, 1, 6);
        let min_side = d * (kh.max(kw) - 1) + 1;
        let x = tensor(Shape::new(1, ic, dim(rng, min_side, 12), dim(rng, min_side, 12)), rng);
        let w = tensor(Shape::new(dim(rng, 1, 6), ic, kh, kw), rng);
        let oc = w.shape().n;
        let p = ConvParams::new(w)
            .with_bias((0..oc).map(|_| rng.uniform(-1.0, 1.0) as f32).collect())
            .with_stride(s, s)
            .with_dilation(d, d)
            .with_padding(rng.below(2) * d * (kh - 1) / 2, rng.below(2) * d * (kw - 1) / 2);
        worst = worst.max(rel_err(&conv2d(&x, &p)?, &conv2d_reference(&x, &p)?));
    }
    Ok(worst)
}

fn check_pool(rng: &mut SplitMix64, cases: usize) -> Result<f64> {
    let mut worst = 0f64;
    for _ in 0..cases {
        let x = tensor(Shape::new(1, dim(rng, 1, 3), dim(rng, 3, 11), dim(rng, 3, 11)), rng);
        let s = x.shape();
        let (oh, ow) = (dim(rng, 1, s.h), dim(rng, 1, s.w));
        let fast = adaptive_avg_pool2d(&x, (oh, ow))?;
        let naive = Tensor4::from_fn(Shape::new(1, s.c, oh, ow), |_, c, i, j| {
            let (y0, y1) = ((i * s.h) / oh, ((i + 1) * s.h).div_ceil(oh));
            let (x0, x1) = ((j * s.w) / ow, ((j + 1) * s.w).div_ceil(ow));
            let mut sum = 0f64;
            for y in y0..y1 {
                for xx in x0..x1 {
                    sum += x.at(0, c, y, xx) as f64;
                }
            }
            (sum / ((y1 - y0) * (x1 - x0)) as f64) as f32
        });
        worst = worst.max(rel_err(&fast, &naive));

        let k = dim(rng, 1, 3);
        let p = PoolParams::new((k, k), (dim(rng, 1, 2), dim(rng, 1, 2))).with_padding(k / 2, k / 2);
        let fast = avg_pool2d(&x, p)?;
        let os = fast.shape();
        let naive = Tensor4::from_fn(os, |_, c, i, j| {
            let (mut sum, mut n) = (0f64, 0usize);
            for dy in 0..k {
                for dx in 0..k {
                    let y = (i * p.stride.0 + dy) as isize - p.padding.0 as isize;
                    let xx = (j * p.stride.1 + dx) as isize - p.padding.1 as isize;
                    if y >= 0 && xx >= 0 && (y as usize) < s.h && (xx as usize) < s.w {
                        sum += x.at(0, c, y as usize, xx as usize) as f64;
                        n += 1;
                    }
                }
            }
            (sum / n as f64) as f32
        });
        worst = worst.max(rel_err(&fast, &naive));
    }
    Ok(worst)
}

fn random_bn(rng: &mut SplitMix64, c: usize) -> BnParams {
    let mut v = |lo: f64, hi: f64| (0..c).map(|_| rng.uniform(lo, hi) as f32).collect::<Vec<_>>();
    BnParams {
        gamma: v(0.5, 1.5),
        beta: v(-0.5, 0.5),
        running_mean: v(-0.5, 0.5),
        running_var: v(0.2, 2.0),
        eps: 1e-5,
    }
}

fn check_bn(rng: &mut SplitMix64, cases: usize) -> Result<f64> {
    let mut worst = 0f64;
    for _ in 0..cases {
        let x = tensor(Shape::new(dim(rng, 1, 2), dim(rng, 1, 5), dim(rng, 1, 6), dim(rng, 1, 6)), rng);
        let bn = random_bn(rng, x.shape().c);
        let naive = Tensor4::from_fn(x.shape(), |n, c, y, xx| {
            let v = x.at(n, c, y, xx) as f64;
            let norm = (v - bn.running_mean[c] as f64) / (bn.running_var[c] as f64 + bn.eps as f64).sqrt();
            (bn.gamma[c] as f64 * norm + bn.beta[c] as f64) as f32
        });
        worst = worst.max(rel_err(&batch_norm_infer(&x, &bn)?, &naive));
    }
    Ok(worst)
}

fn check_resize(rng: &mut SplitMix64, cases: usize) -> Result<f64> {
    let mut worst = 0f64;
    for _ in 0..cases {
        let x = tensor(Shape::new(1, dim(rng, 1, 3), dim(rng, 1, 9), dim(rng, 1, 9)), rng);
        let s = x.shape();
        let (oh, ow) = (dim(rng, 1, 17), dim(rng, 1, 17));
        let src = |o: usize, inp: usize, out: usize| -> (usize, usize, f64) {
            let f = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).max(0.0);
            let lo = (f.floor() as usize).min(inp - 1);
            let hi = (lo + 1).min(inp - 1);
            (lo, hi, f - lo as f64)
        };
        let naive = Tensor4::from_fn(Shape::new(1, s.c, oh, ow), |_, c, i, j| {
            let (y0, y1, ly) = src(i, s.h, oh);
            let (x0, x1, lx) = src(j, s.w, ow);
            let v = |y, xx| x.at(0, c, y, xx) as f64;
            let top = v(y0, x0) * (1.0 - lx) + v(y0, x1) * lx;
            let bottom = v(y1, x0) * (1.0 - lx) + v(y1, x1) * lx;
            (top * (1.0 - ly) + bottom * ly) as f32
        });
        worst = worst.max(rel_err(&bilinear_resize(&x, (oh, ow))?, &naive));
    }
    Ok(worst)
}

fn check_fold(rng: &mut SplitMix64, cases: usize) -> Result<f64> {
    let mut worst = 0f64;
    for _ in 0..cases {
        let x = tensor(Shape::new(1, dim(rng, 1, 4), dim(rng, 3, 8), dim(rng, 3, 8)), rng);
        let oc = dim(rng, 1, 4);
        let p = ConvParams::new(tensor(Shape::new(oc, x.shape().c, 3, 3), rng)).with_padding(1, 1);
        let bn = random_bn(rng, oc);
        let unfolded = batch_norm_infer(&conv2d(&x, &p)?, &bn)?;
        let folded = conv2d(&x, &fold_bn_into_conv(&p, &bn)?)?;
        worst = worst.max(rel_err(&folded, &unfolded));
    }
    Ok(worst)
}

fn check_stf(rng: &mut SplitMix64, cases: usize) -> Result<f64> {
    let mut mismatches = 0usize;
    for case in 0..cases {
        let mut store = WeightStore::new();
        for t in 0..dim(rng, 0, 5) {
            let dims: Vec<usize> = (0..dim(rng, 0, 3)).map(|_| dim(rng, 1, 4)).collect();
            let n = dims.iter().product();
            let data = (0..n).map(|_| f32::from_bits(rng.next_u64() as u32)).collect();
            store.insert(format!("case{case}.t{t}"), dims, data)?;
        }
        let bytes = encode_stf(&store)?;
        let back = decode_stf(&bytes)?;
        if encode_stf(&back)? != bytes {
            mismatches += 1;
        }
    }
    Ok(mismatches as f64)
}

/// Runs every oracle suite with a fixed seed.
pub fn run_all() -> Result<Vec<CheckOutcome>> {
    let mut rng = SplitMix64::new(0x5e1f_7e57);
    let mut out = Vec::new();
    let mut push = |name, cases, worst, tolerance| {
        out.push(CheckOutcome {
            name,
            cases,
            worst,
            tolerance,
        })
    };
    push("conv2d vs direct sum", 100, check_conv(&mut rng, 100)?, 1e-5);
    push("avg pooling vs window mean", 100, check_pool(&mut rng, 100)?, 1e-6);
    push("batch norm vs formula", 100, check_bn(&mut rng, 100)?, 1e-6);
    push("bilinear resize vs formula", 100, check_resize(&mut rng, 100)?, 1e-5);
    push("bn folding vs conv+bn", 50, check_fold(&mut rng, 50)?, 1e-5);
    push("stf round trip mismatches", 50, check_stf(&mut rng, 50)?, 0.0);
    let mut worst = 0f64;
    for seed in 0..5 {
        let cfg = GradCheckConfig {
            seed,
            ..GradCheckConfig::default()
        };
        worst = worst.max(sad_gradcheck(Shape::new(1, 4, 6, 6), &cfg)?.max_rel());
    }
    push("decoder backward vs finite differences", 5, worst, 1e-3);
    Ok(out)
}
