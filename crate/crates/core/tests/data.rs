mod common;

use proptest::prelude::*;
use robustkit::data::*;
use robustkit::error::{ContainerError, IdxError};
use robustkit::{Error, Tensor};

const FIXTURE_IMAGES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/tiny-images.idx");
const FIXTURE_LABELS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/tiny-labels.idx");

fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
    let mut v = magic.to_be_bytes().to_vec();
    for d in dims {
        v.extend(d.to_be_bytes());
    }
    v
}

#[test]
fn idx_fixture_loads_exactly() {
    let ds = load_idx_files(FIXTURE_IMAGES.as_ref(), FIXTURE_LABELS.as_ref()).unwrap();
    assert_eq!(ds.images().shape(), &[2, 1, 3, 3]);
    assert_eq!(ds.labels(), &[1, 0]);
    assert_eq!(ds.num_classes(), 2);
    let bytes: [u8; 18] = [0, 255, 51, 102, 153, 204, 1, 2, 3, 4, 5, 6, 255, 0, 255, 0, 128, 127];
    let expect: Vec<f32> = bytes.iter().map(|&b| b as f32 / 255.0).collect();
    assert_eq!(ds.images().data(), &expect[..]);
    assert_eq!(ds.images().data()[1], 1.0);
    assert_eq!(ds.split, "idx");
    match &ds.provenance {
        Provenance::Idx { images_sha256, labels_sha256 } => {
            assert_eq!(images_sha256.len(), 64);
            assert_ne!(images_sha256, labels_sha256);
        }
        other => panic!("unexpected provenance {other:?}"),
    }
}

#[test]
fn idx_round_trips_through_writer() {
    let ds = load_idx_files(FIXTURE_IMAGES.as_ref(), FIXTURE_LABELS.as_ref()).unwrap();
    let (img, lab) = to_idx(&ds);
    assert_eq!(img, std::fs::read(FIXTURE_IMAGES).unwrap());
    assert_eq!(lab, std::fs::read(FIXTURE_LABELS).unwrap());
}

#[test]
fn idx_four_dimensional_layout() {
    let mut img = header(IDX_IMAGES_MAGIC_4D, &[1, 2, 1, 2]);
    img.extend([10, 20, 30, 40]);
    let mut lab = header(IDX_LABELS_MAGIC, &[1]);
    lab.push(4);
    let ds = load_idx(&img, &lab).unwrap();
    assert_eq!(ds.images().shape(), &[1, 2, 1, 2]);
    assert_eq!(ds.num_classes(), 5);
    let (img2, lab2) = to_idx(&ds);
    assert_eq!((img2, lab2), (img, lab));
}

#[test]
fn idx_rejects_bad_magic() {
    let mut img = header(0x0802, &[1, 1, 1]);
    img.push(0);
    let mut lab = header(IDX_LABELS_MAGIC, &[1]);
    lab.push(0);
    let err = load_idx(&img, &lab).unwrap_err();
    assert!(matches!(err, Error::Idx(IdxError::Magic { found: 0x0802, .. })), "{err:?}");
}

#[test]
fn idx_count_mismatch_is_reported() {
    let mut img = header(IDX_IMAGES_MAGIC, &[2, 1, 1]);
    img.extend([0, 1]);
    let mut lab = header(IDX_LABELS_MAGIC, &[3]);
    lab.extend([0, 0, 0]);
    let err = load_idx(&img, &lab).unwrap_err();
    assert!(matches!(err, Error::Idx(IdxError::CountMismatch { images: 2, labels: 3 })), "{err:?}");
}

#[test]
fn idx_truncation_is_reported() {
    let mut img = header(IDX_IMAGES_MAGIC, &[2, 2, 2]);
    img.extend([0; 7]);
    let mut lab = header(IDX_LABELS_MAGIC, &[2]);
    lab.extend([0, 1]);
    let err = load_idx(&img, &lab).unwrap_err();
    assert!(matches!(err, Error::Idx(IdxError::Truncated { needed: 24, available: 23 })), "{err:?}");
    let err = load_idx(&[], &lab).unwrap_err();
    assert!(matches!(err, Error::Idx(IdxError::Truncated { needed: 4, available: 0 })), "{err:?}");
}

#[test]
fn idx_with_zero_samples_is_empty_dataset() {
    let img = header(IDX_IMAGES_MAGIC, &[0, 2, 2]);
    let lab = header(IDX_LABELS_MAGIC, &[0]);
    assert!(load_idx(&img, &lab).is_err());
}

#[test]
fn dataset_validation() {
    let t = Tensor::new([2, 1, 2, 2], vec![0.5; 8]).unwrap();
    let prov = Provenance::Generator { name: "t".into(), seed: 0 };
    assert!(matches!(Dataset::new(t.clone(), vec![0, 3], 3, "x", prov.clone()), Err(Error::LabelOutOfRange { label: 3, classes: 3 })));
    assert!(matches!(Dataset::new(t.clone(), vec![0], 3, "x", prov.clone()), Err(Error::Shape(_))));
    assert!(matches!(Dataset::new(t.clone(), vec![], 3, "x", prov.clone()), Err(Error::EmptyDataset)));
    let mut bad = t.clone();
    bad.data_mut()[0] = 1.5;
    assert!(Dataset::new(bad, vec![0, 1], 3, "x", prov.clone()).is_err());
    let mut nan = t;
    nan.data_mut()[3] = f32::NAN;
    assert!(matches!(Dataset::new(nan, vec![0, 1], 3, "x", prov), Err(Error::NonFinite(_))));
}

#[test]
fn dataset_container_round_trip_is_exact() {
    let ds = gen_shapes(&ShapesConfig { n: 23, channels: 3, size: 12, ..Default::default() }, 5).unwrap();
    let bytes = save_dataset(&ds);
    let back = load_dataset(&bytes).unwrap();
    assert_eq!(back, ds);
    assert_eq!(save_dataset(&back), bytes);
}

#[test]
fn dataset_container_detects_corruption() {
    let ds = gen_shapes(&ShapesConfig { n: 4, size: 10, ..Default::default() }, 1).unwrap();
    let mut bytes = save_dataset(&ds);
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(load_dataset(&bytes), Err(Error::Container(_))));
    let bytes = save_dataset(&ds);
    // the trailing checksum no longer matches a cut-off body
    assert!(matches!(load_dataset(&bytes[..bytes.len() - 3]), Err(Error::Container(ContainerError::Checksum { .. }))));
    assert!(matches!(load_dataset(&bytes[..2]), Err(Error::Container(ContainerError::Truncated(2)))));
}

#[test]
fn shapes_are_deterministic_and_prefix_stable() {
    let cfg = ShapesConfig { n: 40, size: 16, ..Default::default() };
    let a = gen_shapes(&cfg, 9).unwrap();
    let b = gen_shapes(&cfg, 9).unwrap();
    assert_eq!(a, b);
    let big = gen_shapes(&ShapesConfig { n: 60, ..cfg.clone() }, 9).unwrap();
    assert_eq!(big.head(40).unwrap().images(), a.images());
    let other = gen_shapes(&cfg, 10).unwrap();
    assert_ne!(other.images(), a.images());
}

#[test]
fn shapes_classes_are_balanced() {
    let ds = gen_shapes(&ShapesConfig { n: 103, size: 12, ..Default::default() }, 2).unwrap();
    let mut counts = [0usize; 10];
    for &l in ds.labels() {
        counts[l] += 1;
    }
    assert!(counts.iter().all(|&c| c == 10 || c == 11), "{counts:?}");
    assert_eq!(counts.iter().sum::<usize>(), 103);
}

#[test]
fn shapes_have_foreground_over_background() {
    let ds = gen_shapes(&ShapesConfig { n: 30, ..Default::default() }, 3).unwrap();
    for i in 0..ds.len() {
        let row = ds.images().row(i);
        let max = row.iter().cloned().fold(f32::MIN, f32::max);
        let min = row.iter().cloned().fold(f32::MAX, f32::min);
        // foreground >= 0.75·0.8, background <= 0.25
        assert!(max >= 0.6 && min <= 0.25, "sample {i}: {min} {max}");
    }
}

#[test]
fn shapes_config_is_validated() {
    assert!(gen_shapes(&ShapesConfig { num_classes: 11, ..Default::default() }, 0).is_err());
    assert!(gen_shapes(&ShapesConfig { textures: vec![], ..Default::default() }, 0).is_err());
    assert!(matches!(gen_shapes(&ShapesConfig { n: 0, ..Default::default() }, 0), Err(Error::EmptyDataset)));
}

#[test]
fn v2_split_is_a_fresh_draw() {
    let cfg = ShapesConfig { n: 20, size: 12, ..Default::default() };
    let v2 = v2_split(&cfg, 4).unwrap();
    assert_eq!(v2.split, "v2-seed");
    assert_ne!(v2.images(), gen_shapes(&cfg, 4).unwrap().images());
    assert_eq!(v2.labels(), gen_shapes(&cfg, 4).unwrap().labels());
}

#[test]
fn ood_variants_preserve_labels_and_range() {
    let ds = gen_shapes(&ShapesConfig { n: 20, size: 16, channels: 3, ..Default::default() }, 6).unwrap();
    for v in [OodVariant::RotationShift, OodVariant::EdgeSketch, OodVariant::TextureRandomized] {
        let out = ood_variants::<robustkit::nn::Model>(&ds, v, None, 1).unwrap();
        assert_eq!(out.labels(), ds.labels());
        assert_eq!(out.images().shape(), ds.images().shape());
        assert!(out.images().data().iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert_ne!(out.images(), ds.images(), "{v:?} left data unchanged");
        assert_eq!(out.split, v.name());
        assert!(out.provenance.describe().contains(v.name()));
        assert_eq!(ood_variants::<robustkit::nn::Model>(&ds, v, None, 1).unwrap(), out);
    }
}

#[test]
fn edge_sketch_of_constant_image_is_white() {
    let d = robustkit::image::Dims { c: 1, h: 5, w: 5 };
    assert!(edge_sketch(&[0.3; 25], d).iter().all(|&v| v == 1.0));
    // a vertical step edge is darkest along the step
    let img: Vec<f32> = (0..25).map(|i| if i % 5 < 2 { 0.0 } else { 1.0 }).collect();
    let e = edge_sketch(&img, d);
    assert_eq!(e[1].min(e[2]), 0.0);
    assert_eq!(e[4], 1.0);
}

#[test]
fn otsu_splits_two_levels() {
    let mut v = vec![0.1f32; 50];
    v.extend(vec![0.9f32; 30]);
    let t = otsu_threshold(&v).unwrap();
    assert!(t > 0.1 && t < 0.9, "{t}");
    assert_eq!(otsu_threshold(&[0.5; 10]), None);
}

#[test]
fn hard_mined_needs_model_and_keeps_mistakes() {
    let ds = gen_shapes(&ShapesConfig { n: 30, size: 12, ..Default::default() }, 7).unwrap();
    assert!(matches!(
        ood_variants::<robustkit::nn::Model>(&ds, OodVariant::HardMined, None, 0),
        Err(Error::InvalidArgument(_))
    ));
    let model = common::small_cnn(3, 10);
    let hard = ood_variants(&ds, OodVariant::HardMined, Some(&model), 0).unwrap();
    let pred = model.logits(hard.images()).unwrap().argmax_rows();
    assert!(pred.iter().zip(hard.labels()).all(|(p, l)| p != l));
    let all_pred = model.logits(ds.images()).unwrap().argmax_rows();
    let wrong = all_pred.iter().zip(ds.labels()).filter(|(p, l)| p != l).count();
    assert_eq!(hard.len(), wrong);
}

#[test]
fn ood_variant_names_parse() {
    for v in OodVariant::ALL {
        assert_eq!(v.name().parse::<OodVariant>().unwrap(), v);
    }
    assert!("blur".parse::<OodVariant>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shapes_stay_in_unit_range(seed in any::<u64>(), size in 8usize..20, channels in 1usize..4) {
        let ds = gen_shapes(&ShapesConfig { n: 10, size, channels, ..Default::default() }, seed).unwrap();
        prop_assert!(ds.images().data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn idx_round_trip_quantizes_to_bytes(seed in any::<u64>()) {
        let ds = gen_shapes(&ShapesConfig { n: 5, size: 8, ..Default::default() }, seed).unwrap();
        let (img, lab) = to_idx(&ds);
        let back = load_idx(&img, &lab).unwrap();
        for (a, b) in back.images().data().iter().zip(ds.images().data()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        prop_assert_eq!(back.labels(), ds.labels());
    }
}
