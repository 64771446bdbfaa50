use dprandp_core::dp_optimizer::{
    augmult_grad, clip, dp_sgd_step, noisy_aggregate, poisson_sample, train, Augmenter, DpSgdConfig,
    IdentityAugmenter, TrainInputs, TrainMode, TrainState,
};
use dprandp_core::models::{Activation, Example, Model, ModelKind, ModelSpec, ParameterVector, Segment};
use dprandp_core::random_prior::{AugmentSettings, ImageAugmenter};
use dprandp_core::rng::{self, Stream};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn vector(values: Vec<f64>) -> ParameterVector {
    ParameterVector::new(vec![Segment::new("g", vec![values.len()])], values).unwrap()
}

fn random_gradient(r: &mut Stream, dim: usize) -> ParameterVector {
    // Norms spread over several orders of magnitude around c = 1.
    let scale = 10f64.powf(r.gen_range(-3.0..3.0));
    vector((0..dim).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect())
}

fn mlp(input: usize, hidden: Vec<usize>, classes: usize) -> ModelSpec {
    ModelSpec {
        kind: ModelKind::Mlp,
        input_dim: input,
        output_dim: classes,
        hidden_dims: hidden,
        activation: Activation::Tanh,
        frontend: None,
    }
}

/// Three Gaussian blobs in `dim` dimensions.
fn blobs(n: usize, dim: usize, spread: f64, seed: u64) -> Vec<Example> {
    let mut r = rng::stream(seed, "blobs");
    let centers: Vec<Vec<f64>> = (0..3)
        .map(|k| (0..dim).map(|j| if j % 3 == k { 1.0 } else { 0.0 }).collect())
        .collect();
    (0..n)
        .map(|i| {
            let label = i % 3;
            let input = centers[label]
                .iter()
                .map(|c| c + spread * r.sample::<f64, _>(StandardNormal))
                .collect();
            Example { input, label }
        })
        .collect()
}

fn config(mode: TrainMode, sigma: f64, q: f64, steps: usize) -> DpSgdConfig {
    DpSgdConfig {
        clip_norm: 1.0,
        noise_multiplier: sigma,
        learning_rate: 0.5,
        sampling_rate: q,
        steps,
        momentum: 0.0,
        augmult: 0,
        ema_decay: None,
        mode,
    }
}

#[test]
fn clipped_contributions_never_exceed_unit_norm() {
    let mut r = rng::stream(1, "clip-bound");
    let mut violations = 0;
    for _ in 0..10_000 {
        let dim = r.gen_range(1..40);
        let g = random_gradient(&mut r, dim);
        let c = 10f64.powf(r.gen_range(-2.0..2.0));
        let clipped = clip(&g, c);
        let contribution = clipped.norm() / c;
        if contribution > 1.0 + 4.0 * f64::EPSILON {
            violations += 1;
        }
        if g.norm() <= c {
            assert_eq!(clipped, g);
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn noise_std_matches_sigma() {
    let sigma = 3.0;
    let mut r = rng::stream(2, "grads");
    let grads: Vec<ParameterVector> = (0..5).map(|_| random_gradient(&mut r, 8)).collect();
    let like = grads[0].zeros_like();
    let exact = noisy_aggregate(&grads, &like, 1.0, 0.0, &mut rng::stream(0, "unused"));
    let mut noise = rng::stream(3, "noise");
    let mut residuals = Vec::with_capacity(10_000);
    for _ in 0..10_000 {
        let noisy = noisy_aggregate(&grads, &like, 1.0, sigma, &mut noise);
        residuals.push(noisy.values[0] - exact.values[0]);
    }
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let std = (residuals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((std / sigma - 1.0).abs() < 0.02, "empirical std {std}");
    assert!(mean.abs() < 4.0 * sigma / n.sqrt());
}

/// Plain SGD with heavy-ball momentum written out directly.
fn reference_sgd(model: &Model, mut w: ParameterVector, data: &[Example], lr: f64, momentum: f64, steps: usize) -> ParameterVector {
    let mut buf = w.zeros_like();
    for step in 0..steps {
        let mut sum = w.zeros_like();
        for ex in data {
            let (_, g) = model.loss_and_grad(&w, ex).unwrap();
            for (s, gi) in sum.values.iter_mut().zip(&g.values) {
                *s += gi;
            }
        }
        if step == 0 || momentum == 0.0 {
            buf = sum;
        } else {
            for (b, s) in buf.values.iter_mut().zip(&sum.values) {
                *b = momentum * *b + s;
            }
        }
        let rate = lr / data.len() as f64;
        for (wi, b) in w.values.iter_mut().zip(&buf.values) {
            *wi -= rate * b;
        }
    }
    w
}

#[test]
fn noiseless_unclipped_full_batch_is_plain_sgd() {
    for k in 0..10u64 {
        let mut r = rng::item_stream(4, "plain-configs", &[k]);
        let spec = mlp(r.gen_range(2..6), vec![r.gen_range(2..6)], 3);
        let model = Model::new(spec.clone()).unwrap();
        let w0 = model.init_params(&mut r);
        let data = blobs(r.gen_range(5..30), spec.input_dim, 0.5, k);
        let mut cfg = config(TrainMode::Plain, 0.0, 1.0, 50);
        cfg.learning_rate = r.gen_range(0.01..1.0);
        cfg.momentum = if k % 2 == 0 { 0.0 } else { r.gen_range(0.0..0.95) };
        let inputs = TrainInputs {
            data: &data,
            eval: None,
            augmenter: None,
            seed: k,
            eval_every: 0,
        };
        let out = train(&model, w0.clone(), &inputs, &cfg, &mut |_| {}).unwrap();
        let reference = reference_sgd(&model, w0, &data, cfg.learning_rate, cfg.momentum, 50);
        assert_eq!(out.params.values, reference.values, "config {k}");
    }
}

#[test]
fn one_sample_moves_the_pre_noise_sum_by_at_most_one() {
    let mut r = rng::stream(5, "neighbors");
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let dim = r.gen_range(1..20);
        let c = 10f64.powf(r.gen_range(-1.0..1.0));
        let batch: Vec<ParameterVector> = (0..r.gen_range(0..12)).map(|_| random_gradient(&mut r, dim)).collect();
        let mut neighbor = batch.clone();
        neighbor.push(random_gradient(&mut r, dim));
        let like = vector(vec![0.0; dim]);
        let mut unused = rng::stream(0, "unused");
        let a = noisy_aggregate(&batch, &like, c, 0.0, &mut unused);
        let b = noisy_aggregate(&neighbor, &like, c, 0.0, &mut unused);
        let mut diff = b.clone();
        diff.axpy(-1.0, &a);
        worst = worst.max(diff.norm());
    }
    assert!(worst <= 1.0 + 1e-12, "sensitivity {worst}");
}

#[test]
fn poisson_batch_sizes_follow_the_binomial() {
    let mut r = rng::stream(6, "sampling");
    let n = 100_000;
    let sizes: Vec<f64> = (0..100).map(|_| poisson_sample(n, 0.5, &mut r).len() as f64).collect();
    let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
    // std of the mean of 100 draws: sqrt(n q (1 − q) / 100)
    let sd = (n as f64 * 0.25 / 100.0).sqrt();
    assert!((mean - 50_000.0).abs() < 3.0 * sd, "mean batch {mean}");
}

#[test]
fn zero_learning_rate_keeps_params_and_ema_tracks_them() {
    let model = Model::new(mlp(3, vec![4], 3)).unwrap();
    let w0 = model.init_params(&mut rng::stream(7, "init"));
    let data = blobs(12, 3, 0.3, 7);
    let mut cfg = config(TrainMode::Private, 2.0, 1.0, 3);
    cfg.learning_rate = 0.0;
    cfg.ema_decay = Some(0.5);
    let mut state = TrainState::new(w0.clone(), 7);
    // Start the EMA away from the parameters to watch it contract.
    state.ema_params = w0.zeros_like();
    let batch: Vec<(usize, &Example)> = data.iter().enumerate().collect();
    let mut gap = w0.norm();
    for _ in 0..3 {
        dp_sgd_step(&mut state, &model, &batch, &cfg, 12.0, None).unwrap();
        assert_eq!(state.params, w0);
        let mut d = state.ema_params.clone();
        d.axpy(-1.0, &w0);
        assert!((d.norm() - 0.5 * gap).abs() < 1e-12);
        gap = d.norm();
    }
    assert!(dp_sgd_step(&mut state, &model, &batch, &cfg, 12.0, None).is_err());
}

#[test]
fn single_full_batch_step_is_gradient_descent() {
    let model = Model::new(mlp(3, vec![5], 3)).unwrap();
    let w0 = model.init_params(&mut rng::stream(8, "init"));
    let data = blobs(9, 3, 0.3, 8);
    let cfg = config(TrainMode::Plain, 0.0, 1.0, 1);
    let inputs = TrainInputs {
        data: &data,
        eval: None,
        augmenter: None,
        seed: 8,
        eval_every: 0,
    };
    let out = train(&model, w0.clone(), &inputs, &cfg, &mut |_| {}).unwrap();
    let mut expected = w0.clone();
    for ex in &data {
        let (_, g) = model.loss_and_grad(&w0, ex).unwrap();
        expected.axpy(-cfg.learning_rate / data.len() as f64, &g);
    }
    for (a, b) in out.params.values.iter().zip(&expected.values) {
        assert!((a - b).abs() < 1e-9);
    }
    let mut zero_steps = cfg.clone();
    zero_steps.steps = 0;
    assert!(train(&model, w0, &inputs, &zero_steps, &mut |_| {}).is_err());
}

#[test]
fn training_is_bit_reproducible() {
    let model = Model::new(mlp(4, vec![6], 3)).unwrap();
    let w0 = model.init_params(&mut rng::stream(9, "init"));
    let data = blobs(60, 4, 0.5, 9);
    let mut cfg = config(TrainMode::Private, 1.5, 0.2, 40);
    cfg.momentum = 0.5;
    cfg.ema_decay = Some(0.9);
    let run = |seed| {
        let inputs = TrainInputs {
            data: &data,
            eval: Some(&data),
            augmenter: None,
            seed,
            eval_every: 10,
        };
        train(&model, w0.clone(), &inputs, &cfg, &mut |_| {}).unwrap()
    };
    let (a, b, c) = (run(1), run(1), run(2));
    assert_eq!(a.params, b.params);
    assert_eq!(a.ema_params, b.ema_params);
    assert_eq!(a.log, b.log);
    assert_ne!(a.params, c.params);
}

#[test]
fn full_batch_probe_registers_its_mechanism() {
    let model = Model::new(ModelSpec::linear_head(4, 3)).unwrap();
    let data = blobs(30, 4, 0.5, 10);
    let mut cfg = config(TrainMode::Private, 38.0, 1.0, 100);
    cfg.momentum = 0.9;
    let inputs = TrainInputs {
        data: &data,
        eval: None,
        augmenter: None,
        seed: 10,
        eval_every: 0,
    };
    let out = train(&model, ParameterVector::zeros(model.layout().to_vec()), &inputs, &cfg, &mut |_| {}).unwrap();
    let mech = out.mechanism.unwrap();
    assert_eq!((mech.sigma, mech.q, mech.steps), (38.0, 1.0, 100));
    cfg.mode = TrainMode::ClipOnly;
    assert!(cfg.mechanism().is_none());
}

#[test]
fn clipping_bias_costs_accuracy() {
    // Separable blobs at a scale where per-sample gradient norms sit well
    // above c = 1. By 300 steps plain descent fits the set; the clipped run,
    // whose every contribution is capped, has not.
    let model = Model::new(mlp(6, vec![8], 3)).unwrap();
    let mut plain_acc = 0.0;
    let mut clip_acc = 0.0;
    for seed in 0..5 {
        let mut data = blobs(300, 6, 0.15, 100 + seed);
        for v in data.iter_mut().flat_map(|e| e.input.iter_mut()) {
            *v *= 20.0;
        }
        let w0 = model.init_params(&mut rng::stream(seed, "init"));
        let inputs = TrainInputs {
            data: &data,
            eval: None,
            augmenter: None,
            seed,
            eval_every: 0,
        };
        let mut cfg = config(TrainMode::Plain, 0.0, 0.2, 300);
        cfg.learning_rate = 0.01;
        let plain = train(&model, w0.clone(), &inputs, &cfg, &mut |_| {}).unwrap();
        cfg.mode = TrainMode::ClipOnly;
        let clipped = train(&model, w0, &inputs, &cfg, &mut |_| {}).unwrap();
        plain_acc += model.accuracy(&plain.params, &data).unwrap() / 5.0;
        clip_acc += model.accuracy(&clipped.params, &data).unwrap() / 5.0;
    }
    assert!(plain_acc > clip_acc, "plain {plain_acc} vs clipped {clip_acc}");
}

#[test]
fn augmult_reduces_to_single_view_gradients() {
    let model = Model::new(mlp(4, vec![5], 3)).unwrap();
    let w = model.init_params(&mut rng::stream(11, "init"));
    let ex = blobs(1, 4, 0.5, 11).remove(0);
    let single = model.per_sample_grad(&w, std::slice::from_ref(&ex)).unwrap().remove(0);
    let mut r = rng::stream(11, "aug");
    assert_eq!(augmult_grad(&model, &w, &ex, 1, &IdentityAugmenter, &mut r).unwrap(), single);
    let two = augmult_grad(&model, &w, &ex, 2, &IdentityAugmenter, &mut r).unwrap();
    for (a, b) in two.values.iter().zip(&single.values) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(augmult_grad(&model, &w, &ex, 0, &IdentityAugmenter, &mut r).is_err());
}

#[test]
fn augmult_averages_independent_views() {
    let size = 6;
    let model = Model::new(mlp(size * size * 3, vec![4], 3)).unwrap();
    let w = model.init_params(&mut rng::stream(12, "init"));
    let mut r = rng::stream(12, "image");
    let ex = Example {
        input: (0..size * size * 3).map(|_| r.gen::<f64>()).collect(),
        label: 1,
    };
    let aug = ImageAugmenter {
        size,
        channels: 3,
        settings: AugmentSettings::default(),
    };
    let got = augmult_grad(&model, &w, &ex, 16, &aug, &mut rng::stream(12, "views")).unwrap();
    // Replay the same view stream one view at a time.
    let mut views = rng::stream(12, "views");
    let mut expected = w.zeros_like();
    for _ in 0..16 {
        let view = Example {
            input: aug.augment(&ex.input, &mut views),
            label: ex.label,
        };
        let g = model.per_sample_grad(&w, &[view]).unwrap().remove(0);
        expected.axpy(1.0 / 16.0, &g);
    }
    for (a, b) in got.values.iter().zip(&expected.values) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn ema_converges_geometrically_to_constant_params() {
    let model = Model::new(ModelSpec::linear_head(2, 2)).unwrap();
    let w = vector(vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0]);
    let w = ParameterVector::new(model.layout().to_vec(), w.values).unwrap();
    let mut cfg = config(TrainMode::Plain, 0.0, 1.0, 20);
    cfg.learning_rate = 0.0;
    cfg.ema_decay = Some(0.8);
    let mut state = TrainState::new(w.clone(), 0);
    state.ema_params = w.zeros_like();
    for t in 1..=20 {
        dp_sgd_step(&mut state, &model, &[], &cfg, 1.0, None).unwrap();
        let mut d = state.ema_params.clone();
        d.axpy(-1.0, &w);
        let expected = 0.8f64.powi(t) * w.norm();
        assert!((d.norm() - expected).abs() < 1e-12 * w.norm());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn clip_never_exceeds_c(values in prop::collection::vec(-1e6f64..1e6, 1..50), c in 1e-3f64..1e3) {
        let g = vector(values);
        let n = clip(&g, c).norm();
        prop_assert!(n <= c * (1.0 + 4.0 * f64::EPSILON));
        prop_assert!(n <= g.norm() * (1.0 + 4.0 * f64::EPSILON));
    }

    #[test]
    fn poisson_indices_are_sorted_and_in_range(n in 0usize..500, q in 0.001f64..1.0, seed in any::<u64>()) {
        let idx = poisson_sample(n, q, &mut rng::stream(seed, "sampling"));
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(idx.iter().all(|&i| i < n));
    }
}

