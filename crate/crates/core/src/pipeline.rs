//! Three-phase private training.
//!
//! Phase I pretrains an encoder on synthetic images (see
//! [`crate::random_prior`]) at no privacy cost. Phase II trains a linear head
//! on the frozen encoder's penultimate features with DP-SGD for N₁ steps;
//! Phase III continues with DP-SGD on the whole network for the remaining
//! T − N₁ steps. One σ, calibrated for all T steps, serves both private
//! phases, and the Phase II share of the budget is reported as ε₁, the
//! accounted cost of the first N₁ steps.

use std::time::Instant;

use dprandp_privacy::{
    calibrate_sigma, compose_gaussians, epsilon_of, gdp_epsilon, AccountingConfig, GaussianMechanismSpec, GdpParameter,
    PrivacyLossDistribution, SubsampledGaussianSpec,
};
use serde::{Deserialize, Serialize};

use crate::dp_optimizer::{train, Augmenter, DpSgdConfig, StepMetrics, TrainInputs, TrainMode};
use crate::error::{config, shape, CoreError, Result};
use crate::feature_preproc::{apply_preprocessing, extract_features, preprocess, PreprocConfig};
use crate::models::{Example, Model, ModelKind, ModelSpec, ParameterVector};
use crate::rng;

/// Optimizer settings shared by every plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseHyper {
    #[serde(default = "one")]
    pub clip_norm: f64,
    pub lr_phase2: f64,
    pub lr_phase3: f64,
    #[serde(default = "heavy_ball")]
    pub momentum_phase2: f64,
    #[serde(default)]
    pub momentum_phase3: f64,
    #[serde(default)]
    pub augmult_phase3: usize,
    #[serde(default = "default_ema")]
    pub ema_decay: Option<f64>,
    /// Start Phase III from a freshly initialized head instead of the
    /// Phase II head.
    #[serde(default)]
    pub reinit_head: bool,
}

fn one() -> f64 {
    1.0
}

fn heavy_ball() -> f64 {
    0.9
}

fn default_ema() -> Option<f64> {
    Some(0.999)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    /// Infinite for runs without a privacy guarantee.
    pub epsilon_total: f64,
    pub delta: f64,
    pub q: f64,
    pub t_total: u64,
    pub n1: u64,
    pub sigma: f64,
    /// Accounted ε of the first N₁ steps.
    pub epsilon1_report: f64,
    pub mode: TrainMode,
    pub hyper: PhaseHyper,
}

impl PhasePlan {
    pub fn validate(&self) -> Result<()> {
        if self.n1 > self.t_total {
            return config(format!("N1 = {} exceeds T = {}", self.n1, self.t_total));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return config("sampling rate must lie in (0, 1]");
        }
        if self.mode == TrainMode::Private && !(self.sigma > 0.0 && self.epsilon_total.is_finite()) {
            return config("a private plan needs a positive sigma and a finite budget");
        }
        Ok(())
    }

    pub fn n2(&self) -> u64 {
        self.t_total - self.n1
    }

    /// ε₁/ε, or `None` without a finite budget.
    pub fn epsilon1_fraction(&self) -> Option<f64> {
        (self.mode == TrainMode::Private && self.epsilon_total > 0.0).then(|| self.epsilon1_report / self.epsilon_total)
    }

    /// Same plan with a different split point; ε₁ is re-accounted.
    pub fn with_n1(&self, n1: u64, acct: &AccountingConfig) -> Result<Self> {
        let mut p = self.clone();
        p.n1 = n1;
        p.epsilon1_report = phase_epsilon(&p, n1, acct)?;
        p.validate()?;
        Ok(p)
    }

    /// A plan without noise (`ClipOnly` or `Plain`).
    pub fn non_private(q: f64, t_total: u64, n1: u64, mode: TrainMode, hyper: PhaseHyper) -> Result<Self> {
        if mode == TrainMode::Private {
            return config("use allocate_budget for private plans");
        }
        let p = Self {
            epsilon_total: f64::INFINITY,
            delta: 0.0,
            q,
            t_total,
            n1,
            sigma: 0.0,
            epsilon1_report: f64::INFINITY,
            mode,
            hyper,
        };
        p.validate()?;
        Ok(p)
    }

    /// A private plan with an explicitly chosen σ (no calibration).
    #[allow(clippy::too_many_arguments)]
    pub fn with_sigma(
        epsilon: f64,
        delta: f64,
        q: f64,
        t_total: u64,
        n1: u64,
        sigma: f64,
        hyper: PhaseHyper,
        acct: &AccountingConfig,
    ) -> Result<Self> {
        let mut p = Self {
            epsilon_total: epsilon,
            delta,
            q,
            t_total,
            n1,
            sigma,
            epsilon1_report: 0.0,
            mode: TrainMode::Private,
            hyper,
        };
        p.validate()?;
        p.epsilon1_report = phase_epsilon(&p, n1, acct)?;
        Ok(p)
    }
}

fn phase_epsilon(plan: &PhasePlan, steps: u64, acct: &AccountingConfig) -> Result<f64> {
    match plan.mode {
        TrainMode::Private if steps == 0 => Ok(0.0),
        TrainMode::Private => {
            let spec = SubsampledGaussianSpec::new(plan.sigma, plan.q, steps)?;
            Ok(epsilon_of(&spec, plan.delta, acct)?)
        }
        _ => Ok(f64::INFINITY),
    }
}

/// σ calibrated for all T steps and the accounted cost ε₁ of the first N₁.
pub fn allocate_budget(
    epsilon: f64,
    delta: f64,
    q: f64,
    t_total: u64,
    n1: u64,
    hyper: PhaseHyper,
    acct: &AccountingConfig,
) -> Result<PhasePlan> {
    if n1 > t_total {
        return config(format!("N1 = {n1} exceeds T = {t_total}"));
    }
    let sigma = calibrate_sigma(epsilon, delta, q, t_total, acct)?;
    PhasePlan::with_sigma(epsilon, delta, q, t_total, n1, sigma, hyper, acct)
}

/// Smallest σ₂ on the 0.1 grid such that a full-batch linear probe of
/// `steps` steps, composed with a mean release at σ₁ (0 for none), meets
/// (ε, δ) under exact Gaussian composition.
pub fn calibrate_full_batch_sigma(epsilon: f64, delta: f64, steps: u64, sigma1: f64) -> Result<f64> {
    let meets = |k: u64| -> Result<bool> {
        let mut mechs = vec![GaussianMechanismSpec::new(k as f64 / 10.0, steps)?];
        if sigma1 > 0.0 {
            mechs.push(GaussianMechanismSpec::new(sigma1, 1)?);
        }
        Ok(gdp_epsilon(compose_gaussians(&mechs)?, delta)? <= epsilon)
    };
    // lo misses (σ = 0 always does), hi meets.
    let (mut lo, mut hi) = (0u64, 1u64);
    while !meets(hi)? {
        lo = hi;
        hi *= 2;
        if hi > 1 << 40 {
            return config("full-batch calibration did not converge");
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if meets(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi as f64 / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LedgerMechanism {
    /// Poisson subsampled Gaussian run for `steps` steps.
    Subsampled(SubsampledGaussianSpec),
    /// Full-data Gaussian mechanism applied `count` times.
    Gaussian(GaussianMechanismSpec),
    /// A release without a guarantee; closes the ledger at ε = ∞.
    NonPrivate,
}

impl LedgerMechanism {
    /// (σ, q, steps), or `None` for non-private entries.
    fn as_subsampled(&self) -> Option<(f64, f64, u64)> {
        match *self {
            Self::Subsampled(s) => Some((s.sigma, s.q, s.steps)),
            Self::Gaussian(g) => Some((g.noise_multiplier, 1.0, g.count)),
            Self::NonPrivate => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub mechanism: LedgerMechanism,
    pub purpose: String,
}

/// Append-only record of every mechanism applied to the private data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    pub delta: f64,
    entries: Vec<LedgerEntry>,
    pub accounting: AccountingConfig,
}

impl PrivacyLedger {
    pub fn new(delta: f64, accounting: AccountingConfig) -> Self {
        Self {
            delta,
            entries: Vec::new(),
            accounting,
        }
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn record(&mut self, mechanism: LedgerMechanism, purpose: impl Into<String>) {
        self.entries.push(LedgerEntry {
            mechanism,
            purpose: purpose.into(),
        });
    }

    pub fn closed_epsilon(&self) -> Result<f64> {
        close(&self.entries, self.delta, &self.accounting)
    }

    /// ε the ledger would close at with `extra` appended.
    pub fn epsilon_with(&self, extra: LedgerMechanism) -> Result<f64> {
        let mut all = self.entries.clone();
        all.push(LedgerEntry {
            mechanism: extra,
            purpose: String::new(),
        });
        close(&all, self.delta, &self.accounting)
    }
}

fn close(entries: &[LedgerEntry], delta: f64, acct: &AccountingConfig) -> Result<f64> {
    let mut groups: Vec<(f64, f64, u64)> = Vec::new();
    for e in entries {
        let Some((sigma, q, steps)) = e.mechanism.as_subsampled() else {
            return Ok(f64::INFINITY);
        };
        match groups.iter_mut().find(|g| g.0 == sigma && g.1 == q) {
            Some(g) => g.2 += steps,
            None => groups.push((sigma, q, steps)),
        }
    }
    if groups.is_empty() {
        return Ok(0.0);
    }
    if !(delta > 0.0 && delta < 1.0) {
        return config("ledger delta must lie in (0, 1)");
    }
    if groups.iter().all(|g| g.1 == 1.0) {
        let mechs = groups
            .iter()
            .map(|g| GaussianMechanismSpec::new(g.0, g.2))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        return Ok(gdp_epsilon(compose_gaussians(&mechs)?, delta)?);
    }
    if let [(sigma, q, steps)] = groups[..] {
        return Ok(epsilon_of(&SubsampledGaussianSpec::new(sigma, q, steps)?, delta, acct)?);
    }
    let total: u64 = groups.iter().map(|g| g.2).sum();
    let eta = acct.delta_error_fraction * delta;
    let h = acct.spacing_for(total, eta);
    let mut pld: Option<PrivacyLossDistribution> = None;
    for &(sigma, q, steps) in &groups {
        let one = PrivacyLossDistribution::subsampled_gaussian(sigma, q, h, acct.tail_bound, acct.max_grid_points)?
            .self_compose(steps)?;
        pld = Some(match pld {
            None => one,
            Some(p) => p.compose(&one)?,
        });
    }
    let pld = pld.expect("nonempty groups");
    Ok(pld.epsilon_for_delta(delta - eta)? + acct.eps_error)
}

fn ensure_within(ledger: &PrivacyLedger, extra: LedgerMechanism, allowed: f64, eps_error: f64) -> Result<()> {
    if !allowed.is_finite() {
        return Ok(());
    }
    let closed = ledger.epsilon_with(extra)?;
    if closed > allowed + eps_error {
        return Err(CoreError::Budget { closed, allowed });
    }
    Ok(())
}

/// Private data plus evaluation split and the augmenter for Phase III.
pub struct PrivateData<'a> {
    pub train: &'a [Example],
    pub eval: &'a [Example],
    pub augmenter: Option<&'a dyn Augmenter>,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub plan: PhasePlan,
    pub ledger: PrivacyLedger,
    pub closed_epsilon: f64,
    pub final_accuracy: f64,
    pub ema_accuracy: f64,
    pub phase2_metrics: Vec<StepMetrics>,
    pub phase3_metrics: Vec<StepMetrics>,
    pub seed: u64,
    pub wall_time_s: f64,
    /// CSV files written alongside the report, if any.
    #[serde(default)]
    pub metric_files: Vec<String>,
}

fn optimizer(plan: &PhasePlan, steps: u64, lr: f64, momentum: f64, augmult: usize) -> DpSgdConfig {
    DpSgdConfig {
        clip_norm: plan.hyper.clip_norm,
        noise_multiplier: if plan.mode == TrainMode::Private { plan.sigma } else { 0.0 },
        learning_rate: lr,
        sampling_rate: plan.q,
        steps: steps as usize,
        momentum,
        augmult,
        ema_decay: plan.hyper.ema_decay,
        mode: plan.mode,
    }
}

fn mechanism_of(cfg: &DpSgdConfig) -> LedgerMechanism {
    cfg.mechanism().map_or(LedgerMechanism::NonPrivate, LedgerMechanism::Subsampled)
}

/// Copies hidden layers from `encoder` into a classifier whose output layer
/// is zero.
pub fn classifier_from(encoder_spec: &ModelSpec, encoder: &ParameterVector, classes: usize) -> Result<(Model, ParameterVector)> {
    if encoder_spec.kind != ModelKind::Encoder {
        return config("expected an encoder spec");
    }
    let model = Model::new(encoder_spec.classifier_from_encoder(classes))?;
    let mut params = ParameterVector::zeros(model.layout().to_vec());
    for seg in model.layout() {
        if seg.name.starts_with("out.") {
            continue;
        }
        let src = encoder
            .segment(&seg.name)
            .ok_or_else(|| CoreError::Shape(format!("encoder lacks segment {}", seg.name)))?;
        params
            .segment_mut(&seg.name)
            .expect("segment from own layout")
            .copy_from_slice(src);
    }
    Ok((model, params))
}

/// Glorot-uniform output layer, zero bias, as for any new classifier.
fn fresh_head(model: &Model, params: &mut ParameterVector, seed: u64) {
    let fresh = model.init_params(&mut rng::stream(seed, "head-init"));
    for name in ["out.weight", "out.bias"] {
        params
            .segment_mut(name)
            .expect("classifier head")
            .copy_from_slice(fresh.segment(name).expect("classifier head"));
    }
}

/// Phase II then Phase III, starting from the given encoder weights.
pub fn run_dp_randp(
    plan: &PhasePlan,
    encoder_spec: &ModelSpec,
    encoder: &ParameterVector,
    data: &PrivateData<'_>,
    acct: &AccountingConfig,
    seed: u64,
) -> Result<RunReport> {
    run_phases("dp_randp", plan, encoder_spec, encoder, data, acct, seed)
}

fn run_phases(
    method: &str,
    plan: &PhasePlan,
    encoder_spec: &ModelSpec,
    encoder: &ParameterVector,
    data: &PrivateData<'_>,
    acct: &AccountingConfig,
    seed: u64,
) -> Result<RunReport> {
    plan.validate()?;
    if data.train.is_empty() || data.eval.is_empty() {
        return config("private training and evaluation splits must be nonempty");
    }
    let start = Instant::now();
    let (model, mut params) = classifier_from(encoder_spec, encoder, data.classes)?;
    let mut ledger = PrivacyLedger::new(if plan.delta > 0.0 { plan.delta } else { 1e-5 }, *acct);
    let mut ema = params.clone();
    let mut phase2_metrics = Vec::new();
    let mut phase3_metrics = Vec::new();

    if plan.n1 > 0 {
        let cfg = optimizer(plan, plan.n1, plan.hyper.lr_phase2, plan.hyper.momentum_phase2, 0);
        let mech = mechanism_of(&cfg);
        ensure_within(&ledger, mech, plan.epsilon_total, acct.eps_error)?;
        let head = Model::new(ModelSpec::linear_head(model.spec().penultimate_dim(), data.classes))?;
        let featurize = |set: &[Example]| -> Result<Vec<Example>> {
            set.iter()
                .map(|ex| {
                    let t = model.trace(&params, &ex.input)?;
                    let input = t.hidden().last().map_or_else(|| t.frontend_features().to_vec(), Clone::clone);
                    Ok(Example { input, label: ex.label })
                })
                .collect()
        };
        let train_f = featurize(data.train)?;
        let eval_f = featurize(data.eval)?;
        let head0 = ParameterVector::zeros(head.layout().to_vec());
        let inputs = TrainInputs {
            data: &train_f,
            eval: Some(&eval_f),
            augmenter: None,
            seed: rng::derive_seed(seed, &[2]),
            eval_every: 0,
        };
        let out = train(&head, head0, &inputs, &cfg, &mut |_| {})?;
        ledger.record(mech, "phase2_linear_probe");
        phase2_metrics = out.log;
        let before = params.clone();
        for (name, trained, ema_trained) in [
            ("out.weight", &out.params, &out.ema_params),
            ("out.bias", &out.params, &out.ema_params),
        ] {
            params.segment_mut(name).expect("classifier head").copy_from_slice(trained.segment(name).expect("head"));
            ema.segment_mut(name).expect("classifier head").copy_from_slice(ema_trained.segment(name).expect("head"));
        }
        debug_assert!(model
            .layout()
            .iter()
            .filter(|s| !s.name.starts_with("out."))
            .all(|s| params.segment(&s.name) == before.segment(&s.name)));
    }

    if plan.n2() > 0 {
        if plan.n1 == 0 || plan.hyper.reinit_head {
            fresh_head(&model, &mut params, seed);
        }
        let cfg = optimizer(
            plan,
            plan.n2(),
            plan.hyper.lr_phase3,
            plan.hyper.momentum_phase3,
            plan.hyper.augmult_phase3,
        );
        let mech = mechanism_of(&cfg);
        ensure_within(&ledger, mech, plan.epsilon_total, acct.eps_error)?;
        let inputs = TrainInputs {
            data: data.train,
            eval: Some(data.eval),
            augmenter: data.augmenter,
            seed: rng::derive_seed(seed, &[3]),
            eval_every: 0,
        };
        let out = train(&model, params, &inputs, &cfg, &mut |_| {})?;
        ledger.record(mech, "phase3_fine_tune");
        params = out.params;
        ema = out.ema_params;
        phase3_metrics = out.log;
    }

    let closed = ledger.closed_epsilon()?;
    if plan.epsilon_total.is_finite() && closed > plan.epsilon_total + acct.eps_error {
        return Err(CoreError::Budget {
            closed,
            allowed: plan.epsilon_total,
        });
    }
    Ok(RunReport {
        method: method.to_string(),
        plan: plan.clone(),
        ledger,
        closed_epsilon: closed,
        final_accuracy: model.accuracy(&params, data.eval)?,
        ema_accuracy: model.accuracy(&ema, data.eval)?,
        phase2_metrics,
        phase3_metrics,
        seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        metric_files: Vec::new(),
    })
}

/// Randomly initialized encoder weights for `spec`, from `seed`.
pub fn random_encoder(spec: &ModelSpec, seed: u64) -> Result<ParameterVector> {
    let model = Model::new(spec.clone())?;
    Ok(model.init_params(&mut rng::stream(seed, "encoder-init")))
}

/// Phase III only, from a random encoder.
pub fn run_cold_baseline(
    plan: &PhasePlan,
    encoder_spec: &ModelSpec,
    data: &PrivateData<'_>,
    acct: &AccountingConfig,
    seed: u64,
) -> Result<RunReport> {
    let mut p = plan.clone();
    p.n1 = 0;
    p.epsilon1_report = 0.0;
    let encoder = random_encoder(encoder_spec, seed)?;
    run_phases("cold", &p, encoder_spec, &encoder, data, acct, seed)
}

/// Full-batch linear probe on normalized, privately centered features.
/// `plan` must have q = 1; its σ is the probe's σ₂ and all T steps are
/// probe steps. The mean release (σ₁ in `preproc`) is composed exactly.
pub fn run_lp_only(
    plan: &PhasePlan,
    encoder_spec: &ModelSpec,
    encoder: &ParameterVector,
    data: &PrivateData<'_>,
    preproc: &PreprocConfig,
    seed: u64,
) -> Result<RunReport> {
    plan.validate()?;
    if plan.q != 1.0 {
        return config("the linear-probe recipe runs full batch (q = 1)");
    }
    preproc.validate()?;
    let start = Instant::now();
    let enc_model = Model::new(encoder_spec.clone())?;
    let train_in: Vec<&[f64]> = data.train.iter().map(|e| e.input.as_slice()).collect();
    let eval_in: Vec<&[f64]> = data.eval.iter().map(|e| e.input.as_slice()).collect();
    let raw_train = extract_features(&enc_model, encoder, &train_in, preproc)?;
    let raw_eval = extract_features(&enc_model, encoder, &eval_in, preproc)?;
    let mut ledger = PrivacyLedger::new(if plan.delta > 0.0 { plan.delta } else { 1e-5 }, AccountingConfig::default());

    let private = plan.mode == TrainMode::Private;
    let mut mean_rng = rng::stream(seed, "feature-mean");
    let (train_x, mean) = if private && preproc.sigma1 > 0.0 {
        let (x, mean, mech) = preprocess(&raw_train, preproc, &mut mean_rng)?;
        let mech = LedgerMechanism::Gaussian(mech.expect("sigma1 > 0 registers a mechanism"));
        ensure_within(&ledger, mech, plan.epsilon_total, 0.0)?;
        ledger.record(mech, "feature_mean");
        (x, mean)
    } else {
        (apply_preprocessing(&raw_train, None, preproc)?, None)
    };
    let eval_x = apply_preprocessing(&raw_eval, mean.as_deref(), preproc)?;
    if train_x.dim() == 0 {
        return shape("empty feature rows");
    }

    let head = Model::new(ModelSpec::linear_head(train_x.dim(), data.classes))?;
    let mut params = ParameterVector::zeros(head.layout().to_vec());
    let mut ema = params.clone();
    let to_examples = |rows: Vec<Vec<f64>>, src: &[Example]| -> Vec<Example> {
        rows.into_iter()
            .zip(src)
            .map(|(input, e)| Example { input, label: e.label })
            .collect()
    };
    let train_ex = to_examples(train_x.rows, data.train);
    let eval_ex = to_examples(eval_x.rows, data.eval);
    let mut metrics = Vec::new();
    if plan.t_total > 0 {
        let cfg = optimizer(plan, plan.t_total, plan.hyper.lr_phase2, plan.hyper.momentum_phase2, 0);
        let mech = match cfg.mechanism() {
            Some(s) => LedgerMechanism::Gaussian(GaussianMechanismSpec::new(s.sigma, s.steps)?),
            None => LedgerMechanism::NonPrivate,
        };
        ensure_within(&ledger, mech, plan.epsilon_total, 0.0)?;
        let inputs = TrainInputs {
            data: &train_ex,
            eval: Some(&eval_ex),
            augmenter: None,
            seed: rng::derive_seed(seed, &[2]),
            eval_every: 0,
        };
        let out = train(&head, params, &inputs, &cfg, &mut |_| {})?;
        ledger.record(mech, "linear_probe");
        params = out.params;
        ema = out.ema_params;
        metrics = out.log;
    }
    let closed = ledger.closed_epsilon()?;
    if plan.epsilon_total.is_finite() && closed > plan.epsilon_total + AccountingConfig::default().eps_error {
        return Err(CoreError::Budget {
            closed,
            allowed: plan.epsilon_total,
        });
    }
    Ok(RunReport {
        method: "lp_only".into(),
        plan: plan.clone(),
        ledger,
        closed_epsilon: closed,
        final_accuracy: head.accuracy(&params, &eval_ex)?,
        ema_accuracy: head.accuracy(&ema, &eval_ex)?,
        phase2_metrics: metrics,
        phase3_metrics: Vec::new(),
        seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        metric_files: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n1: u64,
    pub epsilon1_fraction: Option<f64>,
    pub accuracy: Option<f64>,
    pub ema_accuracy: Option<f64>,
    pub closed_epsilon: Option<f64>,
    pub error: Option<String>,
}

/// One run per N₁; a failing row records its error and the sweep goes on.
pub fn sweep_allocation(
    base: &PhasePlan,
    n1_list: &[u64],
    acct: &AccountingConfig,
    run: &mut dyn FnMut(&PhasePlan) -> Result<RunReport>,
) -> Vec<SweepRow> {
    n1_list
        .iter()
        .map(|&n1| {
            let outcome = base.with_n1(n1, acct).and_then(|p| {
                let fraction = p.epsilon1_fraction();
                run(&p).map(|r| (fraction, r))
            });
            match outcome {
                Ok((fraction, r)) => SweepRow {
                    n1,
                    epsilon1_fraction: fraction,
                    accuracy: Some(r.final_accuracy),
                    ema_accuracy: Some(r.ema_accuracy),
                    closed_epsilon: Some(r.closed_epsilon),
                    error: None,
                },
                Err(e) => SweepRow {
                    n1,
                    epsilon1_fraction: None,
                    accuracy: None,
                    ema_accuracy: None,
                    closed_epsilon: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// GDP parameter of a full-batch probe composed with a mean release.
pub fn full_batch_mu(sigma2: f64, steps: u64, sigma1: Option<f64>) -> Result<GdpParameter> {
    let mut mechs = vec![GaussianMechanismSpec::new(sigma2, steps)?];
    if let Some(s1) = sigma1 {
        mechs.push(GaussianMechanismSpec::new(s1, 1)?);
    }
    Ok(compose_gaussians(&mechs)?)
}
