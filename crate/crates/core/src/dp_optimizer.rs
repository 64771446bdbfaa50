//! DP-SGD.
//!
//! One step with Poisson batch B, clip norm c, noise multiplier σ and
//! expected batch size q·N:
//!
//! ```text
//! w ← w − η/(qN) · ( Σ_{i∈B} clip_c(g_i)/c + σ ξ ),   clip_c(g) = c·g / max(c, ‖g‖)
//! ```
//!
//! Dividing by c makes every contribution at most unit norm, so the noise
//! std is σ regardless of c. With momentum m the bracket feeds a heavy-ball
//! buffer first. `ClipOnly` keeps clipping but draws no noise; `Plain`
//! skips both and is ordinary minibatch SGD.

use std::io::Write;

use dprandp_privacy::SubsampledGaussianSpec;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, CoreError, Result};
use crate::models::{softmax_cross_entropy, Example, Model, ParameterVector};
use crate::rng::{self, Stream};

/// Produces a randomized view of one input.
pub trait Augmenter {
    fn augment(&self, input: &[f64], rng: &mut Stream) -> Vec<f64>;
}

/// Returns the input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityAugmenter;

impl Augmenter for IdentityAugmenter {
    fn augment(&self, input: &[f64], _rng: &mut Stream) -> Vec<f64> {
        input.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Private,
    ClipOnly,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSgdConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub learning_rate: f64,
    pub sampling_rate: f64,
    pub steps: usize,
    #[serde(default)]
    pub momentum: f64,
    /// Views per example; 0 uses the raw example.
    #[serde(default)]
    pub augmult: usize,
    #[serde(default)]
    pub ema_decay: Option<f64>,
    pub mode: TrainMode,
}

impl DpSgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) {
            return config("clip norm must be positive");
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return config("noise multiplier must be nonnegative and finite");
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return config("learning rate must be nonnegative and finite");
        }
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return config("sampling rate must lie in (0, 1]");
        }
        if self.steps == 0 {
            return config("number of steps must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config("momentum must lie in [0, 1)");
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return config("EMA decay must lie in [0, 1)");
            }
        }
        if self.mode == TrainMode::Private && !(self.noise_multiplier > 0.0) {
            return config("private mode needs a positive noise multiplier");
        }
        Ok(())
    }

    /// Noise actually drawn: σ in private mode, zero otherwise.
    pub fn effective_sigma(&self) -> f64 {
        match self.mode {
            TrainMode::Private => self.noise_multiplier,
            _ => 0.0,
        }
    }

    /// The Gaussian mechanism a run with this config consumes, or `None`
    /// when the run carries no privacy guarantee.
    pub fn mechanism(&self) -> Option<SubsampledGaussianSpec> {
        (self.mode == TrainMode::Private).then_some(SubsampledGaussianSpec {
            sigma: self.noise_multiplier,
            q: self.sampling_rate,
            steps: self.steps as u64,
        })
    }
}

/// c·g / max(c, ‖g‖)
pub fn clip(g: &ParameterVector, c: f64) -> ParameterVector {
    let mut out = g.clone();
    let norm = g.norm();
    if norm > c {
        out.scale(c / norm);
    }
    out
}

/// Σ clip(gᵢ, c)/c + σξ over `grads`; an empty list yields pure noise.
pub fn noisy_aggregate(
    grads: &[ParameterVector],
    like: &ParameterVector,
    c: f64,
    sigma: f64,
    noise_rng: &mut Stream,
) -> ParameterVector {
    let mut sum = like.zeros_like();
    for g in grads {
        sum.axpy(1.0 / g.norm().max(c), g);
    }
    add_noise(&mut sum, sigma, noise_rng);
    sum
}

fn add_noise(v: &mut ParameterVector, sigma: f64, rng: &mut Stream) {
    if sigma > 0.0 {
        for x in v.values.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x += sigma * z;
        }
    }
}

/// Each index joins independently with probability q.
pub fn poisson_sample(n: usize, q: f64, rng: &mut Stream) -> Vec<usize> {
    if q >= 1.0 {
        return (0..n).collect();
    }
    (0..n).filter(|_| rng.gen::<f64>() < q).collect()
}

/// Mean loss and gradient over K augmented views of one example.
pub fn augmult_loss_grad(
    model: &Model,
    params: &ParameterVector,
    example: &Example,
    k: usize,
    augmenter: &dyn Augmenter,
    aug_rng: &mut Stream,
) -> Result<(f64, ParameterVector)> {
    if k == 0 {
        return config("augmentation multiplicity must be at least 1");
    }
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for _ in 0..k {
        let view = augmenter.augment(&example.input, aug_rng);
        let trace = model.trace(params, &view)?;
        let (l, d) = softmax_cross_entropy(trace.output(), example.label)?;
        model.backward_into(params, &trace, &d, &mut grad);
        loss += l;
    }
    grad.scale(1.0 / k as f64);
    Ok((loss / k as f64, grad))
}

/// (1/K) Σₖ ∇ℓ(aug_k(x), w)
pub fn augmult_grad(
    model: &Model,
    params: &ParameterVector,
    example: &Example,
    k: usize,
    augmenter: &dyn Augmenter,
    aug_rng: &mut Stream,
) -> Result<ParameterVector> {
    augmult_loss_grad(model, params, example, k, augmenter, aug_rng).map(|(_, g)| g)
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ParameterVector,
    pub momentum_buffer: ParameterVector,
    pub ema_params: ParameterVector,
    pub step_index: usize,
    seed: u64,
    sampling: Stream,
    noise: Stream,
}

impl TrainState {
    pub fn new(params: ParameterVector, seed: u64) -> Self {
        Self {
            momentum_buffer: params.zeros_like(),
            ema_params: params.clone(),
            params,
            step_index: 0,
            seed,
            sampling: rng::stream(seed, "sampling"),
            noise: rng::stream(seed, "noise"),
        }
    }

    pub fn sampling_stream(&mut self) -> &mut Stream {
        &mut self.sampling
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub batch_size: usize,
    pub mean_loss: f64,
    pub grad_norm_median: f64,
    pub clipped_fraction: f64,
}

/// One DP-SGD transition. `batch` pairs dataset indices with examples; the
/// indices key the augmentation streams.
pub fn dp_sgd_step(
    state: &mut TrainState,
    model: &Model,
    batch: &[(usize, &Example)],
    cfg: &DpSgdConfig,
    expected_batch: f64,
    augmenter: Option<&dyn Augmenter>,
) -> Result<StepStats> {
    if state.step_index >= cfg.steps {
        return config("training already ran its configured number of steps");
    }
    let c = cfg.clip_norm;
    let mut agg = state.params.zeros_like();
    let mut norms = Vec::with_capacity(batch.len());
    let mut loss_sum = 0.0;
    let mut clipped = 0usize;
    for &(index, ex) in batch {
        let (loss, g) = match (cfg.augmult, augmenter) {
            (k, Some(aug)) if k > 0 => {
                let mut aug_rng =
                    rng::item_stream(state.seed, "augment", &[state.step_index as u64, index as u64]);
                augmult_loss_grad(model, &state.params, ex, k, aug, &mut aug_rng)?
            }
            _ => model.loss_and_grad(&state.params, ex)?,
        };
        let norm = g.norm();
        norms.push(norm);
        loss_sum += loss;
        match cfg.mode {
            TrainMode::Plain => agg.axpy(1.0, &g),
            TrainMode::Private | TrainMode::ClipOnly => {
                if norm > c {
                    clipped += 1;
                }
                agg.axpy(1.0 / norm.max(c), &g);
            }
        }
    }
    add_noise(&mut agg, cfg.effective_sigma(), &mut state.noise);

    if cfg.momentum == 0.0 {
        state.momentum_buffer = agg;
    } else {
        state.momentum_buffer.scale(cfg.momentum);
        state.momentum_buffer.axpy(1.0, &agg);
    }
    let step = cfg.learning_rate / expected_batch;
    for (w, b) in state.params.values.iter_mut().zip(&state.momentum_buffer.values) {
        *w -= step * b;
    }
    match cfg.ema_decay {
        Some(d) => {
            for (e, w) in state.ema_params.values.iter_mut().zip(&state.params.values) {
                *e = d * *e + (1.0 - d) * w;
            }
        }
        None => state.ema_params.values.clone_from(&state.params.values),
    }
    state.step_index += 1;

    let n = batch.len();
    norms.sort_by(f64::total_cmp);
    Ok(StepStats {
        batch_size: n,
        mean_loss: if n > 0 { loss_sum / n as f64 } else { 0.0 },
        grad_norm_median: median_sorted(&norms),
        clipped_fraction: if n > 0 { clipped as f64 / n as f64 } else { 0.0 },
    })
}

fn median_sorted(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// One row of the metric log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub train_loss: f64,
    pub eval_acc: Option<f64>,
    pub grad_norm_median: f64,
    pub clipped_fraction: f64,
}

pub fn write_metrics_csv<W: Write>(out: &mut W, log: &[StepMetrics]) -> std::io::Result<()> {
    writeln!(out, "step,train_loss,eval_acc,grad_norm_median,clipped_fraction")?;
    for m in log {
        let acc = m.eval_acc.map_or(String::new(), |a| format!("{a:.6}"));
        writeln!(
            out,
            "{},{:.6},{},{:.6},{:.6}",
            m.step, m.train_loss, acc, m.grad_norm_median, m.clipped_fraction
        )?;
    }
    Ok(())
}

pub struct TrainInputs<'a> {
    pub data: &'a [Example],
    pub eval: Option<&'a [Example]>,
    pub augmenter: Option<&'a dyn Augmenter>,
    pub seed: u64,
    /// Evaluate every this many steps (and after the last); 0 only at the end.
    pub eval_every: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParameterVector,
    pub ema_params: ParameterVector,
    pub log: Vec<StepMetrics>,
    pub mechanism: Option<SubsampledGaussianSpec>,
}

pub fn train(
    model: &Model,
    params0: ParameterVector,
    inputs: &TrainInputs<'_>,
    cfg: &DpSgdConfig,
    sink: &mut dyn FnMut(&StepMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if inputs.data.is_empty() {
        return config("training data is empty");
    }
    // Without augmentation the fixed frontend sees each input unchanged, so
    // its features are computed once.
    let augmenting = cfg.augmult > 0 && inputs.augmenter.is_some();
    let cached;
    let (model, data, eval) = if !augmenting && model.spec().frontend.is_some() {
        let featurize = |set: &[Example]| -> Vec<Example> {
            set.iter()
                .map(|e| Example {
                    input: model.features(&e.input),
                    label: e.label,
                })
                .collect()
        };
        cached = (
            model.without_frontend(),
            featurize(inputs.data),
            inputs.eval.map(featurize),
        );
        (&cached.0, cached.1.as_slice(), cached.2.as_deref())
    } else {
        (model, inputs.data, inputs.eval)
    };
    let n = data.len();
    let expected_batch = cfg.sampling_rate * n as f64;
    let mut state = TrainState::new(params0, inputs.seed);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let indices = poisson_sample(n, cfg.sampling_rate, state.sampling_stream());
        let batch: Vec<(usize, &Example)> = indices.iter().map(|&i| (i, &data[i])).collect();
        let stats = dp_sgd_step(&mut state, model, &batch, cfg, expected_batch, inputs.augmenter)?;
        if !stats.mean_loss.is_finite() || !state.params.all_finite() {
            return Err(CoreError::NonFinite { step });
        }
        let last = step + 1 == cfg.steps;
        let due = inputs.eval_every > 0 && (step + 1) % inputs.eval_every == 0;
        let eval_acc = match eval {
            Some(eval) if last || due => Some(model.accuracy(&state.params, eval)?),
            _ => None,
        };
        let row = StepMetrics {
            step,
            train_loss: stats.mean_loss,
            eval_acc,
            grad_norm_median: stats.grad_norm_median,
            clipped_fraction: stats.clipped_fraction,
        };
        sink(&row);
        log.push(row);
    }
    Ok(TrainOutcome {
        params: state.params,
        ema_params: state.ema_params,
        log,
        mechanism: cfg.mechanism(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use rand::SeedableRng;

    fn pv(values: Vec<f64>) -> ParameterVector {
        ParameterVector::new(
            vec![crate::models::Segment::new("x", vec![values.len()])],
            values,
        )
        .unwrap()
    }

    #[test]
    fn clip_examples() {
        let g = pv(vec![0.0, 2.0]);
        let c = clip(&g, 1.0);
        assert_eq!(c.values, vec![0.0, 1.0]);
        let small = pv(vec![0.3, 0.4]);
        assert_eq!(clip(&small, 1.0), small);
        assert_eq!(clip(&pv(vec![0.0, 0.0]), 1.0).values, vec![0.0, 0.0]);
    }

    #[test]
    fn aggregate_of_nothing_is_noise() {
        let like = pv(vec![0.0; 4]);
        let mut rng = rng::stream(1, "noise");
        assert_eq!(noisy_aggregate(&[], &like, 1.0, 0.0, &mut rng).values, vec![0.0; 4]);
        let noisy = noisy_aggregate(&[], &like, 1.0, 2.0, &mut rng);
        assert!(noisy.values.iter().any(|v| *v != 0.0));
        let one = noisy_aggregate(&[pv(vec![2.0, 0.0, 0.0, 0.0])], &like, 1.0, 0.0, &mut rng);
        assert_eq!(one.norm(), 1.0);
    }

    #[test]
    fn poisson_full_batch() {
        let mut rng = rng::stream(1, "sampling");
        assert_eq!(poisson_sample(5, 1.0, &mut rng), vec![0, 1, 2, 3, 4]);
        assert!(poisson_sample(3, 1e-9, &mut rng).is_empty());
    }

    #[test]
    fn config_validation() {
        let mut cfg = DpSgdConfig {
            clip_norm: 1.0,
            noise_multiplier: 0.0,
            learning_rate: 0.1,
            sampling_rate: 0.5,
            steps: 1,
            momentum: 0.0,
            augmult: 0,
            ema_decay: None,
            mode: TrainMode::Private,
        };
        assert!(cfg.validate().is_err());
        cfg.mode = TrainMode::ClipOnly;
        assert!(cfg.validate().is_ok());
        assert!(cfg.mechanism().is_none());
        cfg.steps = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_moves_only_the_ema() {
        let model = Model::new(ModelSpec::linear_head(2, 2)).unwrap();
        let params = model.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        let mut state = TrainState::new(params.clone(), 3);
        state.ema_params = params.zeros_like();
        let cfg = DpSgdConfig {
            clip_norm: 1.0,
            noise_multiplier: 1.0,
            learning_rate: 0.0,
            sampling_rate: 1.0,
            steps: 2,
            momentum: 0.9,
            augmult: 0,
            ema_decay: Some(0.5),
            mode: TrainMode::Private,
        };
        let ex = Example {
            input: vec![1.0, 2.0],
            label: 1,
        };
        dp_sgd_step(&mut state, &model, &[(0, &ex)], &cfg, 1.0, None).unwrap();
        assert_eq!(state.params, params);
        for (e, w) in state.ema_params.values.iter().zip(&params.values) {
            assert!((e - 0.5 * w).abs() < 1e-15);
        }
    }
}
