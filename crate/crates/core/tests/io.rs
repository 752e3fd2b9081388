use proptest::prelude::*;
use sanet_core::io::image::decode_pnm;
use sanet_core::io::init::{tensor_seed, SplitMix64};
use sanet_core::io::{
    colorize, decode_stf, encode_stf, read_image, read_label_map, write_image, write_label_map, Palette,
    Raster, StfError,
};
use sanet_core::{init_weights, read_stf, write_stf, ClassMap, ModelConfig, Shape, Tensor4, Variant, WeightStore};

fn store_strategy() -> impl Strategy<Value = WeightStore> {
    let tensor = ("[a-z][a-z0-9_.]{0,12}", prop::collection::vec(1usize..4, 0..4), any::<u64>());
    prop::collection::vec(tensor, 0..6).prop_map(|ts| {
        let mut s = WeightStore::new();
        for (name, dims, seed) in ts {
            if s.contains(&name) {
                continue;
            }
            let n = dims.iter().product();
            let mut rng = SplitMix64::new(seed);
            // Raw bit patterns: NaN payloads, infinities and subnormals included.
            let data = (0..n).map(|_| f32::from_bits(rng.next_u64() as u32)).collect();
            s.insert(name, dims, data).unwrap();
        }
        s
    })
}

fn bits(s: &WeightStore) -> Vec<(String, Vec<usize>, Vec<u32>)> {
    s.iter()
        .map(|(n, r)| (n.to_string(), r.dims.clone(), r.data.iter().map(|v| v.to_bits()).collect()))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stf_round_trip_is_bit_exact(store in store_strategy()) {
        let bytes = encode_stf(&store).unwrap();
        let back = decode_stf(&bytes).unwrap();
        prop_assert_eq!(bits(&back), bits(&store));
        prop_assert_eq!(encode_stf(&back).unwrap(), bytes);
    }

    #[test]
    fn stf_rejects_every_truncation(store in store_strategy(), frac in 0.0f64..1.0) {
        let bytes = encode_stf(&store).unwrap();
        let cut = (bytes.len() as f64 * frac) as usize;
        prop_assume!(cut < bytes.len());
        prop_assert!(decode_stf(&bytes[..cut]).is_err());
    }

    #[test]
    fn pnm_round_trip(w in 1usize..20, h in 1usize..20, gray in any::<bool>(), seed in any::<u64>()) {
        let c = if gray { 1 } else { 3 };
        let mut rng = SplitMix64::new(seed);
        let r = Raster::new(w, h, c, (0..w * h * c).map(|_| rng.next_u64() as u8).collect());
        prop_assert_eq!(decode_pnm(&r.encode()).unwrap(), r);
    }

    #[test]
    fn tensor_seeds_differ_per_name(seed in any::<u64>(), a in "[a-z.0-9]{1,16}", b in "[a-z.0-9]{1,16}") {
        prop_assume!(a != b);
        prop_assert_ne!(tensor_seed(seed, &a), tensor_seed(seed, &b));
    }
}

#[test]
fn stf_file_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let store = init_weights(&ModelConfig::new(Variant::S, 19), 5).unwrap();
    let path = dir.path().join("w.stf");
    write_stf(&store, &path).unwrap();
    let back = read_stf(&path).unwrap();
    assert_eq!(bits(&back), bits(&store));

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    assert!(matches!(decode_stf(&bytes), Err(StfError::BadMagic(_))));
    bytes[0] = b'S';
    bytes[4] = 9;
    assert!(matches!(decode_stf(&bytes), Err(StfError::UnsupportedVersion(9))));
    bytes[4] = 1;
    bytes.push(0);
    assert!(matches!(decode_stf(&bytes), Err(StfError::TrailingBytes(1))));
    assert!(read_stf(dir.path().join("missing.stf")).is_err());
}

#[test]
fn init_is_reproducible() {
    let cfg = ModelConfig::new(Variant::S, 19);
    let a = encode_stf(&init_weights(&cfg, 42).unwrap()).unwrap();
    let b = encode_stf(&init_weights(&cfg, 42).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = encode_stf(&init_weights(&cfg, 43).unwrap()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn init_subseeds_depend_only_on_name() {
    // The medium model holds every small-model tensor name plus extra blocks;
    // shared names must get identical values.
    let s = init_weights(&ModelConfig::new(Variant::S, 19), 7).unwrap();
    let m = init_weights(&ModelConfig::new(Variant::M, 19), 7).unwrap();
    let mut shared = 0;
    for (name, rec) in s.iter() {
        let other = m.get(name).unwrap_or_else(|| panic!("{name} missing from medium store"));
        if other.dims == rec.dims {
            assert_eq!(other.data, rec.data, "{name}");
            shared += 1;
        }
    }
    assert!(shared > 100, "{shared}");
}

#[test]
fn init_statistics() {
    let store = init_weights(&ModelConfig::new(Variant::S, 19), 1).unwrap();
    let w = store.get("l3.block0.conv1.w").unwrap();
    let fan_in = w.dims[1] * w.dims[2] * w.dims[3];
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    assert!(w.data.iter().all(|v| v.abs() <= bound));
    let mean = w.data.iter().map(|&v| v as f64).sum::<f64>() / w.data.len() as f64;
    assert!(mean.abs() < 0.01 * bound as f64);
    assert!(store.get("l3.block0.conv1.bn.var").unwrap().data.iter().all(|&v| v == 1.0));
}

#[test]
fn image_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = Tensor4::from_fn(Shape::new(1, 3, 5, 7), |_, c, y, x| ((c * 35 + y * 7 + x) as f32) / 104.0);
    let path = dir.path().join("a.ppm");
    write_image(&img, &path).unwrap();
    let back = read_image(&path).unwrap();
    assert_eq!(back.shape(), img.shape());
    assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-6);

    let labels = ClassMap::new(2, 3, vec![0, 4, 18, 255, 1, 2]);
    let lp = dir.path().join("l.pgm");
    write_label_map(&labels, &lp).unwrap();
    assert_eq!(read_label_map(&lp).unwrap().data(), labels.data());
    assert!(read_label_map(&path).is_err(), "P6 is not a label map");
    assert!(write_label_map(&ClassMap::new(1, 1, vec![300]), dir.path().join("x.pgm")).is_err());
}

#[test]
fn colorize_uses_palette_and_blacks_out_ignore() {
    let map = ClassMap::new(1, 3, vec![0, 255, 1]);
    let p = Palette::parse("# test\n0 10 20 30\n1 1 2 3\n").unwrap();
    let r = colorize(&map, &p).unwrap();
    assert_eq!(r.data, vec![10, 20, 30, 0, 0, 0, 1, 2, 3]);
    assert!(colorize(&ClassMap::new(1, 1, vec![2]), &p).is_err());
    let city = Palette::cityscapes();
    assert_eq!(city.len(), 19);
    assert_eq!(city.get(0), Some([128, 64, 128]));
    assert_eq!(Palette::for_classes(30).len(), 30);
}
