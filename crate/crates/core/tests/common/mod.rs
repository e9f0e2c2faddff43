#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustkit::nn::{build_model, LayerKind, Mode, Model, ModelSpec};
use robustkit::Tensor;

pub fn random_images(seed: u64, n: usize, c: usize, h: usize, w: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![n, c, h, w], (0..n * c * h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
}

/// Small conv net on 1×12×12 inputs, eval mode.
pub fn small_cnn(seed: u64, classes: usize) -> Model {
    let spec = ModelSpec {
        input_shape: [1, 12, 12],
        num_classes: classes,
        layers: vec![
            LayerKind::Conv2d { out_channels: 4, kernel: 3, stride: 1, padding: 1 },
            LayerKind::Relu,
            LayerKind::MaxPool { kernel: 2 },
            LayerKind::Conv2d { out_channels: 6, kernel: 3, stride: 1, padding: 1 },
            LayerKind::Relu,
            LayerKind::Flatten,
            LayerKind::Linear { out_features: classes },
        ],
    };
    let mut m = build_model(spec, seed).unwrap();
    m.set_mode(Mode::Eval);
    m
}

/// Linear classifier on a `d`-vector input laid out as (d, 1, 1).
pub fn linear_model(weights: &[f32], bias: &[f32]) -> Model {
    let k = bias.len();
    let d = weights.len() / k;
    let spec = ModelSpec {
        input_shape: [d, 1, 1],
        num_classes: k,
        layers: vec![LayerKind::Flatten, LayerKind::Linear { out_features: k }],
    };
    let mut m = build_model(spec, 0).unwrap();
    m.param_mut("1.weight").unwrap().data_mut().copy_from_slice(weights);
    m.param_mut("1.bias").unwrap().data_mut().copy_from_slice(bias);
    m.set_mode(Mode::Eval);
    m
}
