use proptest::prelude::*;
use sanet_core::receptive::{
    impulse_support, measured_receptive_field, ones_chain, predicted_span, receptive_field_summary, run_chain, LayerGeom,
};
use sanet_core::{Model, ModelConfig, Prefix, Shape, Variant};

fn geom() -> impl Strategy<Value = LayerGeom> {
    (prop_oneof![Just(1usize), Just(3), Just(5)], prop_oneof![Just(1usize), Just(3)], 1usize..=2, 1usize..=3, 1usize..=3).prop_map(
        |(kh, kw, s, dh, dw)| LayerGeom {
            kernel: (kh, kw),
            stride: (s, s),
            dilation: (dh, dw),
        },
    )
}

/// Every unit sees a contiguous input interval only when no layer steps
/// further than the field it already covers.
fn gap_free(chain: &[LayerGeom]) -> bool {
    let (mut r, mut j) = ((1, 1), (1, 1));
    for g in chain {
        if (g.kernel.0 > 1 && g.dilation.0 * j.0 > r.0) || (g.kernel.1 > 1 && g.dilation.1 * j.1 > r.1) {
            return false;
        }
        r.0 += (g.kernel.0 - 1) * g.dilation.0 * j.0;
        r.1 += (g.kernel.1 - 1) * g.dilation.1 * j.1;
        j.0 *= g.stride.0;
        j.1 *= g.stride.1;
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn analytic_span_equals_impulse_support(
        chain in prop::collection::vec(geom(), 1..=6).prop_filter("contiguous fields", |c| gap_free(c)),
        frac in 0.0f64..1.0,
    ) {
        let sum = receptive_field_summary(&chain);
        let (h, w) = (sum.rf.0 + 3 * sum.jump.0, sum.rf.1 + 3 * sum.jump.1);
        let convs = ones_chain(&chain);
        let shape = Shape::new(1, 1, h, w);
        let p = ((h as f64 * frac) as usize).min(h - 1);
        let q = ((w as f64 * (1.0 - frac)) as usize).min(w - 1);
        let out = run_chain(&convs, &sanet_core::Tensor4::zeros(shape)).unwrap().shape();
        let (rows, cols) = (predicted_span(sum.rf.0, sum.jump.0, p, out.h), predicted_span(sum.rf.1, sum.jump.1, q, out.w));
        let Some(b) = impulse_support(|x| run_chain(&convs, x), shape, (p, q)).unwrap() else {
            // Only the last rows or columns can fall between output windows.
            prop_assert!(rows.0 > rows.1 || cols.0 > cols.1);
            return Ok(());
        };
        prop_assert_eq!((b.top, b.bottom), predicted_span(sum.rf.0, sum.jump.0, p, out.h));
        prop_assert_eq!((b.left, b.right), predicted_span(sum.rf.1, sum.jump.1, q, out.w));
    }

    #[test]
    fn analytic_field_equals_measured_field(chain in prop::collection::vec(geom(), 1..=6)) {
        let sum = receptive_field_summary(&chain);
        let half = ((sum.rf.0 - 1) / 2, (sum.rf.1 - 1) / 2);
        let unit = (half.0.div_ceil(sum.jump.0), half.1.div_ceil(sum.jump.1));
        let centre = (unit.0 * sum.jump.0, unit.1 * sum.jump.1);
        let shape = Shape::new(1, 1, centre.0 + half.0 + 1 + sum.jump.0, centre.1 + half.1 + 1 + sum.jump.1);
        let convs = ones_chain(&chain);
        let m = measured_receptive_field(|x| run_chain(&convs, x), shape, unit, centre).unwrap();
        prop_assert_eq!(m, sum.rf);
    }
}

#[test]
fn depth_six_closed_form() {
    // Six 3×3 stride-2 layers: r = 1 + 2·(1+2+4+8+16+32) = 127, j = 64.
    let s = receptive_field_summary(&[LayerGeom::square(3, 2, 1); 6]);
    assert_eq!(s.rf, (127, 127));
    assert_eq!(s.jump, (64, 64));
}

#[test]
fn small_model_fields_match_impulses_and_grow() {
    let probe = Model::probe(&ModelConfig::new(Variant::S, 1)).unwrap();
    let mut fields = Vec::new();
    for prefix in Prefix::ALL {
        let analytic = receptive_field_summary(&probe.chain(prefix)).rf;
        let measured = probe.impulse_receptive_field(prefix).unwrap();
        assert_eq!(measured, analytic, "{}", prefix.name());
        fields.push(analytic.0);
    }
    assert_eq!(fields, vec![159, 351, 559]);
}

#[test]
fn medium_model_fields_grow() {
    let probe = Model::probe(&ModelConfig::new(Variant::M, 1)).unwrap();
    let rf: Vec<usize> = Prefix::ALL
        .iter()
        .map(|&p| receptive_field_summary(&probe.chain(p)).rf.0)
        .collect();
    assert!(rf[0] < rf[1] && rf[1] < rf[2], "{rf:?}");
    let jumps: Vec<usize> = Prefix::ALL
        .iter()
        .map(|&p| receptive_field_summary(&probe.chain(p)).jump.0)
        .collect();
    assert_eq!(jumps, vec![8, 8, 64]);
}
