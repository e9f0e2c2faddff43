use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustkit::error::ContainerError;
use robustkit::nn::kernels::{binomial_kernel, blurpool_forward};
use robustkit::nn::{
    build_model, cross_entropy, finite_diff_grad_with_kinks, gradcheck, load_checkpoint, max_relative_error_masked,
    save_checkpoint, BnBranch, LayerKind, Mode, Model, ModelSpec,
};
use robustkit::{Error, Tensor};

fn random_batch(seed: u64, shape: &[usize]) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random::<f32>()).collect()).unwrap()
}

#[test]
fn backward_matches_finite_differences_on_random_nets() {
    let mut kinked = 0;
    let mut total = 0;
    for seed in 0..24u64 {
        let (spec, batch, labels) = gradcheck::random_case(seed);
        let mut model = build_model(spec, seed).unwrap();
        model.set_mode(Mode::Eval);
        let (logits, cache) = model.forward(&batch, true).unwrap();
        let (_, g) = cross_entropy(&logits, &labels, 0.0).unwrap();
        let analytic = model.backward(&cache.unwrap(), &g).unwrap();
        let fd = finite_diff_grad_with_kinks(&model, &batch, &labels, 1e-3).unwrap();
        let err = max_relative_error_masked(&analytic.params, &fd.grads, Some(&fd.kinked)).unwrap();
        assert!(err <= 1e-3, "seed {seed}: relative error {err:e}");
        kinked += fd.kinked_count();
        total += fd.total();
    }
    // the kink mask must only remove a small minority of coordinates
    assert!(kinked * 10 < total, "{kinked}/{total} coordinates excluded");
}

#[test]
fn input_gradient_matches_finite_differences() {
    let spec = ModelSpec {
        input_shape: [1, 6, 6],
        num_classes: 3,
        layers: vec![
            LayerKind::Conv2d { out_channels: 3, kernel: 3, stride: 1, padding: 1 },
            LayerKind::SmoothActivation,
            LayerKind::BlurPool { stride: 2, kernel: 3 },
            LayerKind::Flatten,
            LayerKind::Linear { out_features: 3 },
        ],
    };
    let mut model = build_model(spec, 4).unwrap();
    model.set_mode(Mode::Eval);
    let x = random_batch(9, &[2, 1, 6, 6]);
    let labels = [1, 2];
    let (logits, cache) = model.forward(&x, true).unwrap();
    let (_, g) = cross_entropy(&logits, &labels, 0.0).unwrap();
    let dx = model.backward(&cache.unwrap(), &g).unwrap().input;
    let h = 1e-2f32;
    for j in (0..x.numel()).step_by(5) {
        let mut p = x.clone();
        p.data_mut()[j] += h;
        let mut m = x.clone();
        m.data_mut()[j] -= h;
        let lp = cross_entropy(&model.logits(&p).unwrap(), &labels, 0.0).unwrap().0 as f64;
        let lm = cross_entropy(&model.logits(&m).unwrap(), &labels, 0.0).unwrap().0 as f64;
        let fd = (lp - lm) / (2.0 * h as f64);
        assert!((fd - dx.data()[j] as f64).abs() < 2e-3, "coord {j}: {fd} vs {}", dx.data()[j]);
    }
}

#[test]
fn linear_shapes_and_determinism() {
    let spec = ModelSpec {
        input_shape: [4, 1, 1],
        num_classes: 10,
        layers: vec![LayerKind::Flatten, LayerKind::Linear { out_features: 10 }],
    };
    let a = build_model(spec.clone(), 11).unwrap();
    let b = build_model(spec, 11).unwrap();
    assert_eq!(a.params()["1.weight"].shape(), &[10, 4]);
    assert_eq!(a.params()["1.bias"].shape(), &[10]);
    assert_eq!(a.params(), b.params());
}

#[test]
fn conv_shape_formula() {
    let spec = ModelSpec {
        input_shape: [1, 28, 28],
        num_classes: 10,
        layers: vec![
            LayerKind::Conv2d { out_channels: 8, kernel: 3, stride: 1, padding: 1 },
            LayerKind::GlobalAvgPool,
            LayerKind::Linear { out_features: 10 },
        ],
    };
    let m = build_model(spec, 0).unwrap();
    let expect = (28 + 2 - 3) / 1 + 1;
    assert_eq!(m.activation_shapes()[1], vec![8, expect, expect]);
}

#[test]
fn bad_chain_names_layer() {
    let spec = ModelSpec {
        input_shape: [1, 4, 4],
        num_classes: 2,
        layers: vec![LayerKind::Flatten, LayerKind::MaxPool { kernel: 2 }, LayerKind::Linear { out_features: 2 }],
    };
    match build_model(spec, 0) {
        Err(Error::Spec { index, .. }) => assert_eq!(index, 1),
        other => panic!("unexpected {other:?}"),
    }
}

fn hand_linear() -> Model {
    let spec = ModelSpec {
        input_shape: [2, 1, 1],
        num_classes: 2,
        layers: vec![LayerKind::Flatten, LayerKind::Linear { out_features: 2 }],
    };
    let mut m = build_model(spec, 0).unwrap();
    m.param_mut("1.weight").unwrap().data_mut().copy_from_slice(&[1.0, 2.0, -3.0, 0.5]);
    m.param_mut("1.bias").unwrap().data_mut().copy_from_slice(&[0.25, -1.0]);
    m
}

#[test]
fn forward_hand_computed_and_zero_weights() {
    let mut m = hand_linear();
    let x = Tensor::new(vec![1, 2, 1, 1], vec![3.0, 4.0]).unwrap();
    // [1·3 + 2·4 + 0.25, −3·3 + 0.5·4 − 1]
    assert_eq!(m.logits(&x).unwrap().data(), &[11.25, -8.0]);
    for name in ["1.weight", "1.bias"] {
        m.param_mut(name).unwrap().data_mut().fill(0.0);
    }
    assert!(m.logits(&x).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn eval_forward_is_repeatable_and_batch_invariant() {
    let (spec, batch, _) = gradcheck::random_case(3);
    let mut m = build_model(spec, 3).unwrap();
    m.set_mode(Mode::Eval);
    let a = m.forward(&batch, false).unwrap().0;
    let b = m.forward(&batch, false).unwrap().0;
    assert_eq!(a, b);
    let single = m.logits(&batch.sample(1)).unwrap();
    assert_eq!(single.data(), a.row(1));
}

#[test]
fn identity_network_passes_gradient_through() {
    let spec = ModelSpec { input_shape: [5, 1, 1], num_classes: 5, layers: vec![LayerKind::Flatten] };
    let mut m = build_model(spec, 0).unwrap();
    let x = random_batch(1, &[3, 5, 1, 1]);
    let (logits, cache) = m.forward(&x, true).unwrap();
    let grads = m.backward(&cache.unwrap(), &Tensor::full(logits.shape().to_vec(), 1.0)).unwrap();
    assert!(grads.input.data().iter().all(|&v| v == 1.0));
    assert_eq!(grads.input.shape(), x.shape());
}

#[test]
fn gradients_are_linear_in_loss_grad() {
    let (spec, batch, labels) = gradcheck::random_case(5);
    let mut m = build_model(spec, 5).unwrap();
    let (logits, cache) = m.forward(&batch, true).unwrap();
    let cache = cache.unwrap();
    let (_, g) = cross_entropy(&logits, &labels, 0.1).unwrap();
    let one = m.backward(&cache, &g).unwrap();
    let two = m.backward(&cache, &g.scale(2.0)).unwrap();
    assert_eq!(one.params.keys().collect::<Vec<_>>(), m.params().keys().collect::<Vec<_>>());
    for (name, t) in &one.params {
        assert_eq!(t.scale(2.0), two.params[name], "{name}");
    }
    assert_eq!(one.input.scale(2.0), two.input);
}

#[test]
fn backward_without_matching_cache_is_rejected() {
    let (spec, batch, _) = gradcheck::random_case(1);
    let mut m = build_model(spec, 1).unwrap();
    let other = hand_linear();
    let x = Tensor::new(vec![1, 2, 1, 1], vec![0.0, 1.0]).unwrap();
    let (_, cache) = other.forward_eval(&x, true).unwrap();
    let (logits, _) = m.forward(&batch, false).unwrap();
    assert!(m.backward(&cache.unwrap(), &logits).is_err());
}

fn bn_spec(kind: LayerKind) -> ModelSpec {
    ModelSpec {
        input_shape: [3, 4, 4],
        num_classes: 48,
        layers: vec![kind, LayerKind::Flatten],
    }
}

#[test]
fn batch_norm_train_output_is_standardized() {
    let mut m = build_model(bn_spec(LayerKind::BatchNorm), 0).unwrap();
    let x = random_batch(2, &[8, 3, 4, 4]).map(|v| 3.0 * v - 0.7);
    let y = m.forward(&x, false).unwrap().0;
    for ch in 0..3 {
        let vals: Vec<f64> = (0..8).flat_map(|s| y.row(s)[ch * 16..(ch + 1) * 16].to_vec()).map(|v| v as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() <= 1e-4, "{mean}");
        assert!((var - 1.0).abs() <= 1e-3, "{var}");
    }
}

#[test]
fn switchable_bn_with_tied_stats_matches_plain_bn() {
    let x = random_batch(3, &[4, 3, 4, 4]);
    let mut plain = build_model(bn_spec(LayerKind::BatchNorm), 0).unwrap();
    let mut sw = build_model(bn_spec(LayerKind::SwitchableBatchNorm), 0).unwrap();
    // give the main statistics non-trivial values first
    plain.forward(&x, false).unwrap();
    sw.forward(&x, false).unwrap();
    sw.tie_bn_branches();
    for branch in [BnBranch::Main, BnBranch::Auxiliary] {
        sw.set_bn_branch(branch);
        for mode in [Mode::Train, Mode::Eval] {
            let mut p = plain.clone();
            let mut s = sw.clone();
            p.set_mode(mode);
            s.set_mode(mode);
            assert_eq!(p.forward(&x, false).unwrap().0, s.forward(&x, false).unwrap().0);
        }
    }
}

#[test]
fn train_mode_updates_only_active_branch() {
    let mut sw = build_model(bn_spec(LayerKind::SwitchableBatchNorm), 0).unwrap();
    let before = sw.bn_state().clone();
    sw.set_bn_branch(BnBranch::Auxiliary);
    sw.forward(&random_batch(4, &[4, 3, 4, 4]), false).unwrap();
    assert_eq!(sw.bn_state()["0.running_mean"], before["0.running_mean"]);
    assert_ne!(sw.bn_state()["0.aux_running_mean"], before["0.aux_running_mean"]);
}

#[test]
fn dwt_pool_keeps_constant_images() {
    let spec = ModelSpec {
        input_shape: [2, 8, 8],
        num_classes: 32,
        layers: vec![LayerKind::DwtPool, LayerKind::Flatten],
    };
    let m = build_model(spec, 0).unwrap();
    let y = m.logits(&Tensor::full(vec![1, 2, 8, 8], 0.37)).unwrap();
    assert!(y.data().iter().all(|&v| v == 0.37));
}

#[test]
fn style_layers_are_identity_in_eval_and_shape_preserving_in_train() {
    for kind in [LayerKind::PermutedAdaIn { p_swap: 1.0 }, LayerKind::CrossNorm { p_swap: 1.0 }] {
        let spec = ModelSpec { input_shape: [2, 3, 3], num_classes: 18, layers: vec![kind, LayerKind::Flatten] };
        let mut m = build_model(spec, 0).unwrap();
        let x = random_batch(6, &[4, 2, 3, 3]);
        m.set_mode(Mode::Eval);
        assert_eq!(m.forward(&x, false).unwrap().0.data(), x.data());
        m.set_mode(Mode::Train);
        let y = m.forward(&x, false).unwrap().0;
        assert_eq!(y.shape(), &[4, 18]);
        assert_ne!(y.data(), x.data());
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (spec, batch, _) = gradcheck::random_case(7);
    let mut m = build_model(spec, 7).unwrap();
    m.forward(&batch, false).unwrap();
    m.set_mode(Mode::Eval);
    let bytes = save_checkpoint(&m);
    let back = load_checkpoint(&bytes).unwrap();
    assert_eq!(save_checkpoint(&back), bytes);
    assert_eq!(back.params(), m.params());
    assert_eq!(back.bn_state(), m.bn_state());
    assert_eq!(back.spec(), m.spec());
    assert_eq!(back.logits(&batch).unwrap(), m.logits(&batch).unwrap());
}

#[test]
fn truncated_checkpoint_fails_checksum() {
    let (spec, _, _) = gradcheck::random_case(8);
    let bytes = save_checkpoint(&build_model(spec, 8).unwrap());
    for cut in [bytes.len() - 1, bytes.len() / 2, 30] {
        assert!(matches!(
            load_checkpoint(&bytes[..cut]),
            Err(Error::Container(ContainerError::Checksum { .. }))
        ));
    }
    assert!(load_checkpoint(&[]).is_err());
}

proptest! {
    #[test]
    fn blurpool_kernel_one_is_subsampling(h in 1usize..9, w in 1usize..9, stride in 1usize..4, seed in 0u64..1000) {
        let x = random_batch(seed, &[1, 1, h, w]);
        let y = blurpool_forward(x.data(), 1, 1, h, w, stride, 1);
        let mut expect = Vec::new();
        for r in (0..h).step_by(stride) {
            for c in (0..w).step_by(stride) {
                expect.push(x.data()[r * w + c]);
            }
        }
        prop_assert_eq!(y, expect);
    }

    #[test]
    fn blurpool_does_not_add_energy(h in 2usize..10, w in 2usize..10, m in 1usize..6, seed in 0u64..1000) {
        let x = random_batch(seed, &[1, 1, h, w]).map(|v| 2.0 * v - 1.0);
        let y = blurpool_forward(x.data(), 1, 1, h, w, 2, m);
        let ex: f64 = x.data().iter().map(|&v| (v as f64).powi(2)).sum();
        let ey: f64 = y.iter().map(|&v| (v as f64).powi(2)).sum();
        prop_assert!(ey <= ex + 1e-9);
        let k: f64 = binomial_kernel(m).iter().sum();
        prop_assert!((k - 1.0).abs() < 1e-12);
    }
}
