mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustkit::attacks::{Classifier, LossKind};
use robustkit::corruptions::*;
use robustkit::{Error, Result, Tensor};

#[test]
fn severity_zero_is_bit_identical_for_every_kind() {
    let x = common::random_images(1, 3, 2, 10, 10);
    for kind in CorruptionKind::ALL {
        assert_eq!(corrupt(&x, kind, 0, 42).unwrap(), x, "{kind}");
    }
}

#[test]
fn categories_partition_the_kinds() {
    let mut seen = BTreeMap::new();
    for kind in CorruptionKind::ALL {
        *seen.entry(format!("{:?}", kind.category())).or_insert(0) += 1;
    }
    assert_eq!(seen.len(), 4);
    assert_eq!(seen.values().sum::<i32>(), 9);
}

#[test]
fn names_round_trip_and_unknown_kinds_fail() {
    for kind in CorruptionKind::ALL {
        assert_eq!(kind.name().parse::<CorruptionKind>().unwrap(), kind);
    }
    let err = "snow".parse::<CorruptionKind>().unwrap_err();
    assert!(err.to_string().contains("snow"));
    let x = Tensor::zeros([1, 1, 4, 4]);
    assert!(corrupt(&x, CorruptionKind::Fog, 6, 0).is_err());
}

/// Variance of clamp(0.5 + σZ, 0, 1) by numerical integration over the normal density.
fn clamped_variance(sigma: f64) -> f64 {
    let n = 200_000;
    let (lo, hi) = (-10.0, 10.0);
    let dz = (hi - lo) / n as f64;
    let (mut m1, mut m2) = (0.0, 0.0);
    for i in 0..n {
        let z = lo + (i as f64 + 0.5) * dz;
        let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let v = (0.5 + sigma * z).clamp(0.0, 1.0);
        m1 += v * pdf * dz;
        m2 += v * v * pdf * dz;
    }
    m2 - m1 * m1
}

#[test]
fn gaussian_noise_variance_matches_table() {
    let x = Tensor::full([1, 1, 100, 100], 0.5);
    for s in 1..=5u8 {
        let sigma = CorruptionKind::GaussianNoise.table()[s as usize - 1];
        let out = corrupt(&x, CorruptionKind::GaussianNoise, s, 9).unwrap();
        let mean = out.mean();
        let var = out.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (out.numel() - 1) as f64;
        let expect = clamped_variance(sigma);
        assert!((var / expect - 1.0).abs() < 0.1, "severity {s}: {var} vs {expect}");
    }
}

fn channel_std(plane: &[f32]) -> f64 {
    let m = plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len() as f64;
    (plane.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / plane.len() as f64).sqrt()
}

#[test]
fn contrast_shrinks_std_by_table_factor() {
    let x = common::random_images(3, 2, 3, 16, 16);
    let out = corrupt(&x, CorruptionKind::Contrast, 5, 0).unwrap();
    for (a, b) in x.data().chunks(256).zip(out.data().chunks(256)) {
        let ratio = channel_std(b) / channel_std(a);
        assert!((ratio - 0.2).abs() < 1e-3, "{ratio}");
    }
}

#[test]
fn brightness_adds_offset_below_the_clamp() {
    let x = Tensor::full([1, 1, 4, 4], 0.25);
    let out = corrupt(&x, CorruptionKind::Brightness, 2, 0).unwrap();
    assert!(out.data().iter().all(|&v| (v - 0.45).abs() < 1e-6));
}

#[test]
fn blurs_preserve_constant_images_and_kernels_are_normalized() {
    let x = Tensor::full([1, 2, 12, 12], 0.6);
    for kind in [CorruptionKind::DefocusBlur, CorruptionKind::MotionBlur, CorruptionKind::Pixelate] {
        let out = corrupt(&x, kind, 5, 1).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.6).abs() < 1e-6), "{kind}");
    }
    for r in [1.0, 2.0, 6.0] {
        let (k, _) = defocus_kernel(r);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    for len in [3, 12] {
        let (k, size) = motion_kernel(len, 0.7);
        assert_eq!(size % 2, 1);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    // horizontal motion kernel is a centered row
    let (k, size) = motion_kernel(3, 0.0);
    assert_eq!(size, 3);
    assert_eq!(k, vec![0.0, 0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0, 0.0]);
}

#[test]
fn fog_moves_pixels_toward_white() {
    let x = common::random_images(4, 1, 1, 10, 10);
    let out = corrupt(&x, CorruptionKind::Fog, 3, 2).unwrap();
    assert!(out.data().iter().zip(x.data()).all(|(o, i)| o >= i));
}

#[test]
fn pixelate_is_blockwise_constant() {
    let x = common::random_images(5, 1, 1, 8, 8);
    // severity 2 halves each side: 2x2 blocks averaging the source
    let out = corrupt(&x, CorruptionKind::Pixelate, 2, 0).unwrap();
    for by in 0..4 {
        for bx in 0..4 {
            let idx = |r: usize, c: usize| r * 8 + c;
            let vals: Vec<f32> = [(0, 0), (0, 1), (1, 0), (1, 1)].iter().map(|(dy, dx)| out.data()[idx(2 * by + dy, 2 * bx + dx)]).collect();
            let src: f64 = [(0, 0), (0, 1), (1, 0), (1, 1)].iter().map(|(dy, dx)| x.data()[idx(2 * by + dy, 2 * bx + dx)] as f64).sum::<f64>() / 4.0;
            assert!(vals.iter().all(|&v| (v as f64 - src).abs() < 1e-6));
        }
    }
}

#[test]
fn noise_is_deterministic_per_seed_and_sample_id() {
    let x = common::random_images(6, 4, 1, 8, 8);
    for kind in [CorruptionKind::GaussianNoise, CorruptionKind::ShotNoise, CorruptionKind::ImpulseNoise] {
        let a = corrupt(&x, kind, 3, 7).unwrap();
        assert_eq!(a, corrupt(&x, kind, 3, 7).unwrap());
        assert_ne!(a, corrupt(&x, kind, 3, 8).unwrap());
        // sample 2 alone with its id gives the same result
        let single = corrupt_ids(&x.select(&[2]).unwrap(), kind, 3, 7, &[2]).unwrap();
        assert_eq!(single.data(), a.row(2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outputs_stay_in_range(seed in 0u64..500, k in 0usize..9, s in 0u8..=5) {
        let x = common::random_images(seed, 2, 2, 9, 9);
        let out = corrupt(&x, CorruptionKind::ALL[k], s, seed).unwrap();
        prop_assert_eq!(out.shape(), x.shape());
        prop_assert!(out.min() >= 0.0 && out.max() <= 1.0);
    }
}

/// Returns the stored label of an exactly matching training image.
struct Memorizer {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Classifier for Memorizer {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = Tensor::zeros([x.batch(), self.classes]);
        for i in 0..x.batch() {
            let hit = (0..self.images.batch()).find(|&j| self.images.row(j) == x.row(i));
            let class = hit.map(|j| self.labels[j]).unwrap_or(0);
            out.row_mut(i)[class] = 1.0;
        }
        Ok(out)
    }

    fn loss_and_input_grad(&self, _: &Tensor, _: &[usize], _: LossKind) -> Result<(Vec<f32>, Tensor, Tensor)> {
        Err(Error::GradientAccess)
    }
}

#[test]
fn memorizer_has_zero_error_at_severity_zero() {
    let images = common::random_images(7, 20, 1, 6, 6);
    let labels: Vec<usize> = (0..20).map(|i| i % 3 + 1).collect();
    let m = Memorizer { images: images.clone(), labels: labels.clone(), classes: 4 };
    let grid = corruption_suite_eval_with(&m, &images, &labels, 0, &CorruptionKind::ALL, &[0]).unwrap();
    assert_eq!(grid.clean_error, 0.0);
    assert!(grid.errors.values().all(|row| row == &vec![0.0]));
    assert_eq!(grid.errors.len(), 9);
}

#[test]
fn random_labels_give_chance_error_in_every_cell() {
    let k = 4;
    let n = 300;
    let model = common::small_cnn(8, k);
    let images = common::random_images(9, n, 1, 12, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let grid = corruption_suite_eval(&model, &images, &labels, 3).unwrap();
    let p = 1.0 - 1.0 / k as f64;
    let tol = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
    for (kind, row) in &grid.errors {
        for &e in row {
            assert!((e - p).abs() <= tol, "{kind}: {e}");
        }
    }
    assert_eq!(grid, corruption_suite_eval(&model, &images, &labels, 3).unwrap());
}

#[test]
fn suite_rejects_empty_datasets() {
    let model = common::small_cnn(8, 3);
    let err = corruption_suite_eval(&model, &Tensor::zeros([1, 1, 12, 12]), &[], 0).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset));
}

fn grid(rows: &[(&str, [f64; 5])]) -> ErrorGrid {
    ErrorGrid {
        clean_error: 0.1,
        severities: vec![1, 2, 3, 4, 5],
        errors: rows.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect(),
    }
}

#[test]
fn mce_identity_and_scaling() {
    let base = grid(&[("fog", [0.1, 0.2, 0.3, 0.35, 0.5]), ("contrast", [0.13, 0.27, 0.31, 0.6, 0.7])]);
    let same = mce(&base, &base).unwrap();
    assert_eq!(same.mce, 100.0);
    assert!(same.rows.iter().all(|r| r.ce == 100.0));
    let half = grid(&[("fog", [0.05, 0.1, 0.15, 0.175, 0.25]), ("contrast", [0.065, 0.135, 0.155, 0.3, 0.35])]);
    assert_eq!(mce(&half, &base).unwrap().mce, 50.0);
}

#[test]
fn mce_hand_grid_is_75() {
    let model = grid(&[("a", [0.2; 5]), ("b", [0.4; 5])]);
    let base = grid(&[("a", [0.4; 5]), ("b", [0.4; 5])]);
    let r = mce(&model, &base).unwrap();
    assert_eq!(r.rows[0].ce, 50.0);
    assert_eq!(r.rows[1].ce, 100.0);
    assert_eq!(r.mce, 75.0);
}

#[test]
fn mce_scales_with_model_errors() {
    let base = grid(&[("x", [0.3, 0.4, 0.5, 0.6, 0.7]), ("y", [0.2, 0.2, 0.3, 0.5, 0.8])]);
    let model = grid(&[("x", [0.1, 0.2, 0.25, 0.3, 0.3]), ("y", [0.1, 0.1, 0.2, 0.2, 0.4])]);
    let r1 = mce(&model, &base).unwrap();
    for c in [0.5, 1.3] {
        let mut scaled = model.clone();
        scaled.errors.values_mut().for_each(|row| row.iter_mut().for_each(|e| *e *= c));
        let r2 = mce(&scaled, &base).unwrap();
        for (a, b) in r1.rows.iter().zip(&r2.rows) {
            assert!((b.ce - c * a.ce).abs() < 1e-9);
        }
    }
}

#[test]
fn mce_rejects_zero_baseline_and_mismatched_grids() {
    let base = grid(&[("fog", [0.0; 5]), ("contrast", [0.1; 5])]);
    let model = grid(&[("fog", [0.1; 5]), ("contrast", [0.1; 5])]);
    match mce(&model, &base).unwrap_err() {
        Error::ZeroBaseline(kind) => assert_eq!(kind, "fog"),
        e => panic!("unexpected {e}"),
    }
    let other = grid(&[("fog", [0.1; 5])]);
    assert!(mce(&other, &model).is_err());
    let mut fewer = model.clone();
    fewer.severities = vec![1, 2, 3, 4, 6];
    assert!(mce(&fewer, &model).is_err());
}
