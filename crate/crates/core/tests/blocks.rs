mod common;

use common::{random_tensor, UniformSource};
use proptest::prelude::*;
use sanet_core::blocks::{BasicBlock, BlockKind, BlockSpec, Bottleneck, ConvBn, DilatedPath, Head, Stem};
use sanet_core::context::{gated_fuse, Apppm, ApppmConfig, DualAxisAttention, PoolGrid, Ppm};
use sanet_core::kernels::{adaptive_avg_pool2d, batch_norm_infer, bilinear_resize, conv2d};
use sanet_core::sad::{sad_forward, sad_forward_f64, sad_flatten, SadWeights};
use sanet_core::train::{sad_gradcheck, GradCheckConfig};
use sanet_core::{Shape, Tensor4};

/// conv → BN → optional ReLU with the primitive kernels.
fn conv_bn(x: &Tensor4, l: &ConvBn) -> Tensor4 {
    let mut y = conv2d(x, &l.conv).unwrap();
    if let Some(bn) = &l.bn {
        y = batch_norm_infer(&y, bn).unwrap();
    }
    if l.relu {
        y = y.map(|v| v.max(0.0));
    }
    y
}

fn relu_sum(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    a.add(b).unwrap().map(|v| v.max(0.0))
}

fn close(a: &Tensor4, b: &Tensor4, tol: f32) {
    assert_eq!(a.shape(), b.shape());
    let d = a.max_abs_diff(b);
    assert!(d <= tol, "max abs diff {d}");
}

#[test]
fn basic_block_composes_from_kernels() {
    for (in_c, out_c, stride, d) in [(8, 8, 1, 1), (8, 16, 2, 1), (8, 8, 1, 2), (4, 6, 2, 1)] {
        let spec = BlockSpec::new(BlockKind::Basic, in_c, out_c, stride).with_dilation(d);
        let b = BasicBlock::load(&mut UniformSource::new(3, 0.3), "b", spec).unwrap();
        assert_eq!(b.shortcut.is_some(), stride != 1 || in_c != out_c);
        let x = random_tensor(Shape::new(1, in_c, 11, 13), 5);
        let main = conv_bn(&conv_bn(&x, &b.conv1), &b.conv2);
        let short = b.shortcut.as_ref().map_or(x.clone(), |s| conv_bn(&x, s));
        let y = b.forward(&x).unwrap();
        close(&y, &relu_sum(&main, &short), 1e-5);
        assert_eq!(y.shape(), spec.expected_out(x.shape()));
        assert_eq!(b.out_shape(x.shape()).unwrap(), y.shape());
    }
}

#[test]
fn bottleneck_composes_from_kernels() {
    let spec = BlockSpec::new(BlockKind::Bottleneck, 6, 12, 2);
    let b = Bottleneck::load(&mut UniformSource::new(4, 0.3), "b", spec).unwrap();
    assert_eq!(Bottleneck::mid_channels(&spec), 6);
    let x = random_tensor(Shape::new(1, 6, 9, 10), 6);
    let main = conv_bn(&conv_bn(&conv_bn(&x, &b.reduce), &b.conv), &b.expand);
    let y = b.forward(&x).unwrap();
    close(&y, &relu_sum(&main, &conv_bn(&x, &b.shortcut)), 1e-5);
    assert_eq!(y.shape(), Shape::new(1, 12, 5, 5));
}

#[test]
fn stem_quarters_resolution() {
    let stem = Stem::load(&mut UniformSource::new(1, 0.3), "stem", BlockSpec::new(BlockKind::Stem, 3, 32, 2)).unwrap();
    let x = random_tensor(Shape::new(1, 3, 37, 50), 2);
    let y = stem.forward(&x).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 32, 10, 13));
    close(&y, &conv_bn(&conv_bn(&x, &stem.convs[0]), &stem.convs[1]), 1e-5);
}

#[test]
fn dilated_path_keeps_resolution_and_taps() {
    let dp = DilatedPath::load(&mut UniformSource::new(7, 0.3), "dp", 8, (2, 4)).unwrap();
    assert_eq!(dp.dp1.spec.dilation, 2);
    assert_eq!(dp.dp2.spec.dilation, 4);
    let x = random_tensor(Shape::new(1, 8, 12, 15), 8);
    let t = dp.forward(&x).unwrap();
    close(&t.dp1, &dp.dp1.forward(&x).unwrap(), 0.0);
    close(&t.dp2, &dp.dp2.forward(&t.dp1).unwrap(), 0.0);
    close(&t.x, &conv_bn(&t.dp2, &dp.out), 1e-5);
    assert_eq!(t.x.shape(), x.shape());
}

#[test]
fn head_resizes_to_target() {
    let head = Head::load(&mut UniformSource::new(9, 0.3), "head", 8, 6, 5).unwrap();
    let x = random_tensor(Shape::new(1, 8, 6, 7), 10);
    let y = head.forward(&x, (45, 53)).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 5, 45, 53));
    let small = conv2d(&conv_bn(&x, &head.conv), &head.classifier).unwrap();
    close(&y, &bilinear_resize(&small, (45, 53)).unwrap(), 1e-6);
}

#[test]
fn folded_blocks_match_unfolded() {
    let spec = BlockSpec::new(BlockKind::Basic, 8, 16, 2);
    let b = BasicBlock::load(&mut UniformSource::new(12, 0.3), "b", spec).unwrap();
    let x = random_tensor(Shape::new(1, 8, 10, 10), 13);
    close(&b.folded().unwrap().forward(&x).unwrap(), &b.forward(&x).unwrap(), 1e-5);
    let f = b.folded().unwrap();
    assert!(f.conv1.bn.is_none() && f.conv2.bn.is_none());
}

#[test]
fn channel_mismatch_is_rejected() {
    let b = BasicBlock::load(&mut UniformSource::new(1, 0.3), "b", BlockSpec::new(BlockKind::Basic, 8, 8, 1)).unwrap();
    assert!(b.forward(&random_tensor(Shape::new(1, 4, 8, 8), 1)).is_err());
    assert!(BlockSpec::new(BlockKind::Basic, 8, 8, 3).validate().is_err());
}

fn small_apppm() -> (Apppm, ApppmConfig) {
    let cfg = ApppmConfig {
        in_c: 6,
        branch_c: 4,
        out_c: 5,
        grids: ApppmConfig::default().grids,
    };
    (Apppm::load(&mut UniformSource::new(21, 0.3), "apppm", &cfg).unwrap(), cfg)
}

#[test]
fn apppm_branch_grids_are_asymmetric() {
    assert_eq!(PoolGrid::Global.resolve(16, 32), (1, 1));
    assert_eq!(PoolGrid::Divisor(2, 1).resolve(16, 32), (8, 32));
    assert_eq!(PoolGrid::Divisor(4, 2).resolve(16, 32), (4, 16));
    assert_eq!(PoolGrid::Divisor(4, 2).resolve(3, 3), (1, 2));
    ApppmConfig::default().validate().unwrap();
    let square = ApppmConfig {
        grids: vec![PoolGrid::Global, PoolGrid::Fixed(2, 2), PoolGrid::Fixed(3, 3)],
        ..ApppmConfig::default()
    };
    assert!(square.validate().is_err());
}

#[test]
fn apppm_composes_from_kernels() {
    let (m, cfg) = small_apppm();
    let x = random_tensor(Shape::new(1, 6, 16, 32), 22);
    let t = m.trace(&x).unwrap();
    for ((grid, conv), b) in cfg.grids.iter().zip(&m.branches).zip(&t.branches) {
        let pooled = adaptive_avg_pool2d(&x, grid.resolve(16, 32)).unwrap();
        close(b, &bilinear_resize(&conv_bn(&pooled, conv), (16, 32)).unwrap(), 1e-6);
    }
    // The global branch is constant over space.
    let g = &t.branches[0];
    assert!(g.plane(0, 0).iter().all(|&v| v == g.at(0, 0, 0, 0)));
    close(&t.residual, &conv_bn(&x, &m.residual), 1e-6);
    let fused = gated_fuse(&t.fused, &t.residual, &t.attention.a).unwrap();
    close(&t.output, &conv2d(&fused, &m.out).unwrap(), 1e-6);
    assert_eq!(m.forward(&x).unwrap().shape(), Shape::new(1, 5, 16, 32));
    close(&m.folded().unwrap().forward(&x).unwrap(), &t.output, 1e-4);
}

#[test]
fn apppm_accepts_one_by_one_input() {
    let (m, _) = small_apppm();
    let y = m.forward(&random_tensor(Shape::new(1, 6, 1, 1), 1)).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 5, 1, 1));
}

#[test]
fn ppm_shapes() {
    let p = Ppm::load(&mut UniformSource::new(30, 0.3), "ppm", 6, 4, 5).unwrap();
    let y = p.forward(&random_tensor(Shape::new(1, 6, 16, 32), 31)).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 5, 16, 32));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_in_range_and_coefficients_sum_to_three(seed in any::<u64>(), scale in 0.01f64..20.0) {
        let att = DualAxisAttention::load(&mut UniformSource::new(seed, scale), "a", 3).unwrap();
        let s = random_tensor(Shape::new(1, 3, 5, 6), seed ^ 9);
        let maps = att.forward(&s).unwrap();
        for &a in maps.a.data() {
            prop_assert!((0.0..=2.0).contains(&a));
            let (a, b) = (1.0 + a as f64, 2.0 - a as f64);
            prop_assert!((a + b - 3.0).abs() <= 1e-6);
        }
        prop_assert!(maps.a_row.data().iter().chain(maps.a_col.data()).all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn gated_fuse_of_equal_inputs_triples(seed in any::<u64>()) {
        let x = random_tensor(Shape::new(1, 2, 4, 4), seed);
        let a = random_tensor(Shape::new(1, 2, 4, 4), seed ^ 1).map(|v| v + 1.0);
        let f = gated_fuse(&x, &x, &a).unwrap();
        for (&o, &i) in f.data().iter().zip(x.data()) {
            prop_assert!((o - 3.0 * i).abs() <= 1e-5);
        }
    }
}

#[test]
fn attention_stays_strictly_inside_for_moderate_logits() {
    let att = DualAxisAttention::load(&mut UniformSource::new(3, 0.5), "a", 4).unwrap();
    let maps = att.forward(&random_tensor(Shape::new(1, 4, 6, 6), 4)).unwrap();
    assert!(maps.a.data().iter().all(|&a| a > 0.0 && a < 2.0));
}

fn zero_attention_sad(c: usize, seed: u64) -> SadWeights {
    let mut w = SadWeights::load(&mut UniformSource::new(seed, 0.5), "sad", c).unwrap();
    for p in [&mut w.attention.row, &mut w.attention.col] {
        p.weight = Tensor4::zeros(p.weight.shape());
        p.bias = Some(vec![0.0; c]);
    }
    w
}

#[test]
fn zero_attention_decoder_is_conv_of_2x_plus_y() {
    for seed in 0..5 {
        let w = zero_attention_sad(4, seed);
        let s = Shape::new(1, 4, 6, 7);
        let (x, dp1, dp2, y) = (
            random_tensor(s, seed * 4),
            random_tensor(s, seed * 4 + 1),
            random_tensor(s, seed * 4 + 2),
            random_tensor(s, seed * 4 + 3),
        );
        let (out, cache) = sad_forward(&x, &dp1, &dp2, &y, &w).unwrap();
        assert!(cache.a.data().iter().all(|&a| a == 1.0));
        let expect = conv2d(&x.scalar_mul(2.0).add(&y).unwrap(), &w.out).unwrap();
        assert_eq!(out.data(), expect.data());
    }
}

#[test]
fn decoder_forward_matches_wide_evaluation() {
    let s = Shape::new(1, 4, 6, 6);
    let w = SadWeights::load(&mut UniformSource::new(40, 0.5), "sad", 4).unwrap();
    let t: Vec<Tensor4> = (0..4).map(|i| random_tensor(s, 41 + i)).collect();
    let (out, _) = sad_forward(&t[0], &t[1], &t[2], &t[3], &w).unwrap();
    let wide = sad_forward_f64(s, &sad_flatten(&t[0], &t[1], &t[2], &t[3], &w), &w).unwrap();
    for (&a, &b) in out.data().iter().zip(&wide) {
        assert!((a as f64 - b).abs() <= 1e-5 * b.abs().max(1.0));
    }
}

#[test]
fn decoder_rejects_mismatched_inputs() {
    let w = SadWeights::load(&mut UniformSource::new(1, 0.5), "sad", 4).unwrap();
    let a = random_tensor(Shape::new(1, 4, 6, 6), 1);
    let b = random_tensor(Shape::new(1, 4, 6, 5), 2);
    assert!(sad_forward(&a, &a, &a, &b, &w).is_err());
}

#[test]
fn decoder_gradients_over_twenty_seeds() {
    let mut worst = 0f64;
    for seed in 0..20 {
        let cfg = GradCheckConfig {
            seed,
            ..GradCheckConfig::default()
        };
        let r = sad_gradcheck(Shape::new(1, 4, 6, 6), &cfg).unwrap();
        assert_eq!(r.tensors.len(), 10);
        worst = worst.max(r.max_rel());
    }
    assert!(worst <= 1e-3, "worst relative error {worst}");
}
