mod common;

use common::random_tensor;
use proptest::prelude::*;
use sanet_core::kernels::conv::{conv2d_grad_input, conv2d_grad_params};
use sanet_core::kernels::{
    adaptive_avg_pool2d, avg_pool2d, batch_norm_infer, bilinear_resize, conv2d, conv2d_reference, conv2d_with,
    conv_out_size, fold_bn_into_conv, set_single_threaded, Accumulation, BnParams, ConvParams, PoolParams,
};
use sanet_core::{Shape, Tensor4};

#[derive(Debug, Clone)]
struct ConvCase {
    x: Shape,
    w: Shape,
    stride: (usize, usize),
    dilation: (usize, usize),
    padding: (usize, usize),
    bias: bool,
    seed: u64,
}

fn conv_case() -> impl Strategy<Value = ConvCase> {
    (1usize..=4, 1usize..=4, 1usize..=3, 1usize..=3, 1usize..=2, 1usize..=2, 1usize..=2, 1usize..=2, 0usize..=2, 0usize..=2)
        .prop_flat_map(|(ic, oc, kh, kw, sh, sw, dh, dw, ph, pw)| {
            let min_h = (dh * (kh - 1) + 1).saturating_sub(2 * ph).max(1);
            let min_w = (dw * (kw - 1) + 1).saturating_sub(2 * pw).max(1);
            (min_h..min_h + 9, min_w..min_w + 9, any::<bool>(), any::<u64>()).prop_map(move |(h, w, bias, seed)| ConvCase {
                x: Shape::new(1, ic, h, w),
                w: Shape::new(oc, ic, kh, kw),
                stride: (sh, sw),
                dilation: (dh, dw),
                padding: (ph, pw),
                bias,
                seed,
            })
        })
}

fn build(case: &ConvCase) -> (Tensor4, ConvParams) {
    let x = random_tensor(case.x, case.seed);
    let w = random_tensor(case.w, case.seed ^ 1);
    let mut p = ConvParams::new(w)
        .with_stride(case.stride.0, case.stride.1)
        .with_dilation(case.dilation.0, case.dilation.1)
        .with_padding(case.padding.0, case.padding.1);
    if case.bias {
        p = p.with_bias(random_tensor(Shape::new(1, case.w.n, 1, 1), case.seed ^ 2).into_vec());
    }
    (x, p)
}

fn rel(a: &Tensor4, b: &Tensor4) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs() / (y as f64).abs().max(1.0))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn conv_matches_direct_sum(case in conv_case()) {
        let (x, p) = build(&case);
        let fast = conv2d(&x, &p).unwrap();
        let slow = conv2d_reference(&x, &p).unwrap();
        prop_assert_eq!(fast.shape(), slow.shape());
        prop_assert!(rel(&fast, &slow) <= 1e-5);
    }

    #[test]
    fn conv_output_size_formula(case in conv_case()) {
        let (x, p) = build(&case);
        let out = conv2d(&x, &p).unwrap().shape();
        let (kh, kw) = p.kernel();
        let eh = (case.x.h + 2 * case.padding.0 - case.dilation.0 * (kh - 1) - 1) / case.stride.0 + 1;
        let ew = (case.x.w + 2 * case.padding.1 - case.dilation.1 * (kw - 1) - 1) / case.stride.1 + 1;
        prop_assert_eq!((out.h, out.w), (eh, ew));
        prop_assert_eq!(conv_out_size(case.x.h, kh, case.stride.0, case.padding.0, case.dilation.0), Some(eh));
    }

    #[test]
    fn conv_backward_is_adjoint(case in conv_case()) {
        let (x, mut p) = build(&case);
        p.bias = None;
        let y = conv2d(&x, &p).unwrap();
        let g = random_tensor(y.shape(), case.seed ^ 3);
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(&a, &b)| a as f64 * b as f64).sum();
        let gd: Vec<f64> = g.data().iter().map(|&v| v as f64).collect();
        let gx = conv2d_grad_input(x.shape(), &p, &gd).unwrap();
        let rhs: f64 = x.data().iter().zip(&gx).map(|(&a, b)| a as f64 * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs().max(1.0), "{} vs {}", lhs, rhs);
        // Weight gradient is the same bilinear form seen from the other side.
        let (gw, _) = conv2d_grad_params(&x, &p, &gd).unwrap();
        let rhs_w: f64 = p.weight.data().iter().zip(&gw).map(|(&a, b)| a as f64 * b).sum();
        prop_assert!((lhs - rhs_w).abs() <= 1e-4 * lhs.abs().max(1.0));
    }

    #[test]
    fn wide_and_narrow_accumulation_agree(case in conv_case()) {
        let (x, p) = build(&case);
        let a = conv2d_with(&x, &p, Accumulation::F32).unwrap();
        let b = conv2d_with(&x, &p, Accumulation::F64).unwrap();
        prop_assert!(rel(&a, &b) <= 1e-5);
    }

    #[test]
    fn folding_preserves_conv_bn(case in conv_case(), g in 0.1f32..2.0, v in 0.1f32..3.0) {
        let (x, p) = build(&case);
        let c = p.out_channels();
        let bn = BnParams {
            gamma: (0..c).map(|i| g + i as f32 * 0.1).collect(),
            beta: (0..c).map(|i| 0.3 - i as f32 * 0.2).collect(),
            running_mean: (0..c).map(|i| i as f32 * 0.05 - 0.1).collect(),
            running_var: (0..c).map(|i| v + i as f32 * 0.3).collect(),
            eps: 1e-5,
        };
        let unfolded = batch_norm_infer(&conv2d(&x, &p).unwrap(), &bn).unwrap();
        let folded = conv2d(&x, &fold_bn_into_conv(&p, &bn).unwrap()).unwrap();
        prop_assert!(rel(&folded, &unfolded) <= 1e-5);
    }

    #[test]
    fn adaptive_pool_of_constant_is_constant(c in 1usize..3, h in 1usize..12, w in 1usize..12, oh in 1usize..8, ow in 1usize..8, v in -5f32..5.0) {
        let x = Tensor4::full(Shape::new(1, c, h, w), v);
        let y = adaptive_avg_pool2d(&x, (oh.min(h), ow.min(w))).unwrap();
        prop_assert!(y.data().iter().all(|&u| (u - v).abs() <= 1e-5 * v.abs().max(1.0)));
    }

    #[test]
    fn global_pool_is_mean(c in 1usize..3, h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let x = random_tensor(Shape::new(1, c, h, w), seed);
        let y = adaptive_avg_pool2d(&x, (1, 1)).unwrap();
        for ch in 0..c {
            let mean = x.plane(0, ch).iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64;
            prop_assert!((y.at(0, ch, 0, 0) as f64 - mean).abs() <= 1e-6);
        }
    }

    #[test]
    fn resize_preserves_constants_and_range(h in 1usize..10, w in 1usize..10, oh in 1usize..20, ow in 1usize..20, seed in any::<u64>()) {
        let x = random_tensor(Shape::new(1, 2, h, w), seed);
        let y = bilinear_resize(&x, (oh, ow)).unwrap();
        let (lo, hi) = x.data().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert!(y.data().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
        let k = Tensor4::full(Shape::new(1, 1, h, w), 0.25);
        prop_assert!(bilinear_resize(&k, (oh, ow)).unwrap().data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }
}

#[test]
fn avg_pool_excludes_padding_by_default() {
    let x = Tensor4::full(Shape::new(1, 1, 4, 4), 2.0);
    let y = avg_pool2d(&x, PoolParams::new((3, 3), (1, 1)).with_padding(1, 1)).unwrap();
    assert!(y.data().iter().all(|&v| v == 2.0));
    let counted = avg_pool2d(&x, PoolParams::new((3, 3), (1, 1)).with_padding(1, 1).counting_pad(true)).unwrap();
    // Corner window holds 4 real pixels out of 9.
    assert!((counted.at(0, 0, 0, 0) - 8.0 / 9.0).abs() < 1e-6);
}

#[test]
fn threaded_and_single_threaded_conv_are_bit_identical() {
    let x = random_tensor(Shape::new(1, 16, 40, 56), 11);
    let p = ConvParams::new(random_tensor(Shape::new(24, 16, 3, 3), 12)).with_padding(1, 1);
    set_single_threaded(true);
    let a = conv2d(&x, &p).unwrap();
    set_single_threaded(false);
    let b = conv2d(&x, &p).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn hundred_case_conv_oracle_with_dilated_strided_geometry() {
    let mut worst = 0f64;
    for seed in 0..100u64 {
        let k = 1 + (seed % 3) as usize;
        let d = 1 + (seed / 3 % 3) as usize;
        let s = 1 + (seed / 9 % 2) as usize;
        let case = ConvCase {
            x: Shape::new(1, 3, 9 + (seed % 5) as usize, 11),
            w: Shape::new(4, 3, k, k),
            stride: (s, s),
            dilation: (d, d),
            padding: (d * (k - 1) / 2, d * (k - 1) / 2),
            bias: seed % 2 == 0,
            seed,
        };
        let (x, p) = build(&case);
        worst = worst.max(rel(&conv2d(&x, &p).unwrap(), &conv2d_reference(&x, &p).unwrap()));
    }
    assert!(worst <= 1e-5, "worst {worst}");
}
