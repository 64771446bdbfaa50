use dprandp_core::models::{
    softmax_cross_entropy, Activation, Example, FrontendSpec, Model, ModelKind, ModelSpec, ParameterVector,
};
use dprandp_core::rng;
use proptest::prelude::*;
use rand::Rng;

const H: f64 = 1e-5;

/// Floor for coordinates whose gradient is itself tiny.
const FLOOR: f64 = 1e-4;

/// Largest coordinatewise |a − b| / max(|a|, |b|, floor). Central differences
/// at h = 1e-5 carry roundoff near 1e-11 absolute, so coordinates below the
/// floor are effectively held to an absolute 1e-5·floor.
fn max_relative_error(a: &ParameterVector, b: &ParameterVector, floor: f64) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

fn random_spec(kind: ModelKind, r: &mut impl Rng) -> ModelSpec {
    let act = if r.gen::<bool>() { Activation::Tanh } else { Activation::Relu };
    let classes = r.gen_range(2..6);
    match kind {
        ModelKind::LinearHead => ModelSpec::linear_head(r.gen_range(1..9), classes),
        ModelKind::Mlp => ModelSpec {
            kind,
            input_dim: r.gen_range(1..8),
            output_dim: classes,
            hidden_dims: (0..r.gen_range(1..4)).map(|_| r.gen_range(1..7)).collect(),
            activation: act,
            frontend: None,
        },
        ModelKind::Encoder => {
            let frontend = r.gen::<bool>().then(|| FrontendSpec {
                image_size: 6,
                channels: 2,
                patch: 3,
                stride: r.gen_range(1..3),
                filters: r.gen_range(1..4),
                pool_grid: 2,
                gain: 1.0 + 9.0 * r.gen::<f64>(),
                seed: r.gen(),
            });
            ModelSpec {
                kind,
                input_dim: frontend.map_or_else(|| r.gen_range(2..8), |f| f.input_dim()),
                output_dim: r.gen_range(2..6),
                hidden_dims: (0..r.gen_range(1..3)).map(|_| r.gen_range(2..7)).collect(),
                activation: act,
                frontend,
            }
        }
    }
}

fn random_instance(kind: ModelKind, i: u64) -> (Model, ParameterVector, Example) {
    let mut r = rng::item_stream(17, "gradient-check", &[kind as u64, i]);
    let spec = random_spec(kind, &mut r);
    let model = Model::new(spec.clone()).unwrap();
    let mut params = model.init_params(&mut r);
    // Nonzero biases exercise every term of the backward pass.
    for v in params.values.iter_mut() {
        *v += 0.1 * (r.gen::<f64>() - 0.5);
    }
    let input = (0..spec.input_dim).map(|_| r.gen::<f64>() * 2.0 - 1.0).collect();
    let label = r.gen_range(0..spec.output_dim);
    (model, params, Example { input, label })
}

#[test]
fn per_sample_gradients_match_central_differences() {
    for kind in [ModelKind::LinearHead, ModelKind::Mlp, ModelKind::Encoder] {
        let mut worst: f64 = 0.0;
        for i in 0..100 {
            let (model, params, ex) = random_instance(kind, i);
            let analytic = model.per_sample_grad(&params, std::slice::from_ref(&ex)).unwrap().remove(0);
            let numeric = model.finite_diff_grad(&params, &ex, H).unwrap();
            worst = worst.max(max_relative_error(&analytic, &numeric, FLOOR));
        }
        assert!(worst < 1e-5, "{kind:?}: max relative error {worst:e}");
    }
}

#[test]
fn linear_head_logit_gradient_is_softmax_minus_onehot() {
    let mut r = rng::stream(3, "softmax");
    for _ in 0..50 {
        let (d, k) = (r.gen_range(1..6), r.gen_range(2..6));
        let model = Model::new(ModelSpec::linear_head(d, k)).unwrap();
        let params = model.init_params(&mut r);
        let ex = Example {
            input: (0..d).map(|_| r.gen::<f64>()).collect(),
            label: r.gen_range(0..k),
        };
        let logits = model.forward(&params, &ex.input).unwrap();
        let (_, d_logits) = softmax_cross_entropy(&logits, ex.label).unwrap();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
        for (j, g) in d_logits.iter().enumerate() {
            let p = (logits[j] - m).exp() / z;
            let expected = p - if j == ex.label { 1.0 } else { 0.0 };
            assert!((g - expected).abs() < 1e-14);
        }
        // Weight gradient is the outer product with the input; bias gradient is d_logits.
        let g = model.per_sample_grad(&params, std::slice::from_ref(&ex)).unwrap().remove(0);
        let gb = g.segment("out.bias").unwrap();
        let gw = g.segment("out.weight").unwrap();
        for j in 0..k {
            assert!((gb[j] - d_logits[j]).abs() < 1e-14);
            for i in 0..d {
                assert!((gw[j * d + i] - d_logits[j] * ex.input[i]).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn batch_mean_of_per_sample_gradients_is_gradient_of_mean_loss() {
    let (model, params, _) = random_instance(ModelKind::Mlp, 7);
    let mut r = rng::stream(5, "batch");
    let spec = model.spec().clone();
    let batch: Vec<Example> = (0..9)
        .map(|_| Example {
            input: (0..spec.input_dim).map(|_| r.gen::<f64>()).collect(),
            label: r.gen_range(0..spec.output_dim),
        })
        .collect();
    let grads = model.per_sample_grad(&params, &batch).unwrap();
    let mut mean = params.zeros_like();
    for g in &grads {
        mean.axpy(1.0 / batch.len() as f64, g);
    }
    // Gradient of the mean loss, accumulated through the model's own backward pass.
    let mut direct = params.zeros_like();
    for ex in &batch {
        let t = model.trace(&params, &ex.input).unwrap();
        let (_, d) = softmax_cross_entropy(t.output(), ex.label).unwrap();
        let scaled: Vec<f64> = d.iter().map(|v| v / batch.len() as f64).collect();
        model.backward_into(&params, &t, &scaled, &mut direct);
    }
    for (a, b) in mean.values.iter().zip(&direct.values) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_and_duplicated_examples() {
    let (model, params, ex) = random_instance(ModelKind::Encoder, 3);
    let one = model.per_sample_grad(&params, std::slice::from_ref(&ex)).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0], model.loss_and_grad(&params, &ex).unwrap().1);
    let two = model.per_sample_grad(&params, &[ex.clone(), ex]).unwrap();
    assert_eq!(two[0], two[1]);
    assert!(model.per_sample_grad(&params, &[]).is_err());
}

#[test]
fn finite_differences_on_a_quadratic_are_exact() {
    // Two-class head with one weight: loss(w) = ln(1 + e^{-w x}) is smooth; the
    // difference quotient converges at O(h²).
    let model = Model::new(ModelSpec::linear_head(1, 2)).unwrap();
    let mut params = ParameterVector::zeros(model.layout().to_vec());
    params.values[0] = 0.3;
    let ex = Example { input: vec![1.5], label: 0 };
    let exact = model.loss_and_grad(&params, &ex).unwrap().1;
    let coarse = model.finite_diff_grad(&params, &ex, 1e-2).unwrap();
    let fine = model.finite_diff_grad(&params, &ex, 1e-3).unwrap();
    let e1 = max_relative_error(&exact, &coarse, 1e-12);
    let e2 = max_relative_error(&exact, &fine, 1e-12);
    assert!(e2 < e1 / 50.0, "{e1:e} → {e2:e}");
    assert!(model.finite_diff_grad(&params, &ex, 0.0).is_err());
}

#[test]
fn encoder_output_moves_boundedly_under_input_perturbation() {
    let mut worst: f64 = 0.0;
    for i in 0..30 {
        let (model, params, ex) = random_instance(ModelKind::Encoder, 1000 + i);
        let mut r = rng::item_stream(9, "lipschitz", &[i]);
        let base = model.forward(&params, &ex.input).unwrap();
        let eps = 1e-4;
        let dir: Vec<f64> = (0..ex.input.len()).map(|_| r.gen::<f64>() - 0.5).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let moved: Vec<f64> = ex.input.iter().zip(&dir).map(|(x, d)| x + eps * d / n).collect();
        let out = model.forward(&params, &moved).unwrap();
        let shift = base.iter().zip(&out).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(shift / eps);
    }
    assert!(worst.is_finite() && worst < 1e3, "empirical Lipschitz constant {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn head_gradient_matches_finite_differences(seed in any::<u64>(), d in 1usize..6, k in 2usize..5) {
        let model = Model::new(ModelSpec::linear_head(d, k)).unwrap();
        let mut r = rng::stream(seed, "prop");
        let params = model.init_params(&mut r);
        let ex = Example {
            input: (0..d).map(|_| r.gen::<f64>() * 4.0 - 2.0).collect(),
            label: r.gen_range(0..k),
        };
        let a = model.loss_and_grad(&params, &ex).unwrap().1;
        let b = model.finite_diff_grad(&params, &ex, H).unwrap();
        prop_assert!(max_relative_error(&a, &b, FLOOR) < 1e-5);
    }

    #[test]
    fn encoder_outputs_are_unit_norm(seed in any::<u64>()) {
        let mut r = rng::stream(seed, "unit");
        let spec = random_spec(ModelKind::Encoder, &mut r);
        let model = Model::new(spec.clone()).unwrap();
        let params = model.init_params(&mut r);
        let input: Vec<f64> = (0..spec.input_dim).map(|_| r.gen::<f64>()).collect();
        let out = model.forward(&params, &input).unwrap();
        let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-12);
    }
}

