//! Experiment configuration and the runs it describes.

use std::path::PathBuf;

use dprandp_privacy::AccountingConfig;
use serde::{Deserialize, Serialize};

use crate::dp_optimizer::TrainMode;
use crate::error::{config, Result};
use crate::feature_preproc::PreprocConfig;
use crate::models::{Activation, Example, FrontendSpec, Model, ModelKind, ModelSpec, ParameterVector};
use crate::pipeline::{
    allocate_budget, calibrate_full_batch_sigma, random_encoder, run_cold_baseline, run_dp_randp, run_lp_only,
    PhaseHyper, PhasePlan, PrivateData, RunReport,
};
use crate::random_prior::{
    labeled_dataset, pretrain_encoder, AugmentSettings, ContrastiveConfig, GeneratorParams, GeneratorSpec,
    ImageAugmenter, LeafShape, PretrainMetrics,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivateDatasetConfig {
    /// One generator per class.
    pub classes: Vec<GeneratorSpec>,
    pub train_size: usize,
    pub eval_size: usize,
    /// Per-image brightness/contrast jitter amplitude.
    #[serde(default)]
    pub nuisance: f64,
    pub seed: u64,
}

impl PrivateDatasetConfig {
    /// Train and evaluation splits; the evaluation images come from
    /// generator seeds disjoint from the training ones.
    pub fn build(&self) -> Result<(Vec<Example>, Vec<Example>)> {
        if self.classes.len() < 2 {
            return config("a classification task needs at least two classes");
        }
        if self.train_size == 0 || self.eval_size == 0 {
            return config("dataset splits must be nonempty");
        }
        let train = labeled_dataset(&self.classes, self.train_size, self.nuisance, self.seed)?;
        let held_out: Vec<GeneratorSpec> = self
            .classes
            .iter()
            .map(|g| GeneratorSpec {
                seed: rng::derive_seed(g.seed, &[1]),
                ..g.clone()
            })
            .collect();
        let eval = labeled_dataset(&held_out, self.eval_size, self.nuisance, rng::derive_seed(self.seed, &[1]))?;
        Ok((train, eval))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    /// Omitted for runs without a privacy guarantee.
    #[serde(default)]
    pub epsilon: Option<f64>,
    pub delta: f64,
    pub q: f64,
    pub t_total: u64,
    /// Phase II steps; defaults to 96/875 of T.
    #[serde(default)]
    pub n1: Option<u64>,
    #[serde(default = "private_mode")]
    pub mode: TrainMode,
}

fn private_mode() -> TrainMode {
    TrainMode::Private
}

/// Default Phase II length: the same fraction of T as 96 of 875 steps.
pub fn default_n1(t_total: u64) -> u64 {
    (t_total as f64 * 96.0 / 875.0).round() as u64
}

impl PlanConfig {
    pub fn n1(&self) -> u64 {
        self.n1.unwrap_or_else(|| default_n1(self.t_total))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    /// Encoder initialization and Phase I.
    pub pretrain: u64,
    /// One private run per seed.
    pub runs: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Phase I image sources.
    pub generator: Vec<GeneratorSpec>,
    pub encoder: ModelSpec,
    pub pretrain: ContrastiveConfig,
    pub private_dataset: PrivateDatasetConfig,
    pub plan: PlanConfig,
    pub optimizer: PhaseHyper,
    /// Phase III augmentation (used when `optimizer.augmult_phase3 > 0`).
    #[serde(default = "AugmentSettings::identity")]
    pub augment: AugmentSettings,
    #[serde(default)]
    pub preproc: PreprocConfig,
    pub seeds: SeedConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub accounting: AccountingConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Phase II then Phase III from the pretrained encoder.
    DpRandp,
    /// Phase III only from a random encoder.
    Cold,
    /// Phase II then Phase III from a random encoder.
    ColdTwoStage,
    /// Full-batch linear probe on preprocessed features.
    LpOnly,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.generator.is_empty() {
            return config("at least one Phase I generator is required");
        }
        for g in self.generator.iter().chain(&self.private_dataset.classes) {
            g.validate()?;
            if g.input_dim() != self.encoder.input_dim {
                return config("generator image size does not match the encoder input");
            }
        }
        if self.encoder.kind != ModelKind::Encoder {
            return config("the encoder section must describe an encoder");
        }
        self.encoder.validate()?;
        self.pretrain.validate()?;
        self.preproc.validate()?;
        self.accounting.validate().map_err(crate::CoreError::from)?;
        let p = &self.plan;
        if p.n1() > p.t_total || p.t_total == 0 {
            return config("plan needs 0 ≤ N1 ≤ T and T ≥ 1");
        }
        match (p.mode, p.epsilon) {
            (TrainMode::Private, None) => return config("a private plan needs epsilon"),
            (TrainMode::Private, Some(e)) if !(e > 0.0) || !e.is_finite() => {
                return config("epsilon must be positive and finite")
            }
            (TrainMode::ClipOnly | TrainMode::Plain, Some(_)) => {
                return config("epsilon is meaningless without noise; drop it or use private mode")
            }
            _ => {}
        }
        if self.seeds.runs.is_empty() {
            return config("at least one run seed is required");
        }
        Ok(())
    }

    /// The plan for staged runs: σ calibrated over all T steps.
    pub fn phase_plan(&self) -> Result<PhasePlan> {
        let p = &self.plan;
        match p.epsilon {
            Some(eps) => allocate_budget(eps, p.delta, p.q, p.t_total, p.n1(), self.optimizer.clone(), &self.accounting),
            None => PhasePlan::non_private(p.q, p.t_total, p.n1(), p.mode, self.optimizer.clone()),
        }
    }

    /// The full-batch probe plan: all T steps are probe steps, σ₂ calibrated
    /// jointly with the mean release under exact Gaussian composition.
    pub fn lp_plan(&self) -> Result<PhasePlan> {
        let p = &self.plan;
        match p.epsilon {
            Some(eps) => {
                let sigma = calibrate_full_batch_sigma(eps, p.delta, p.t_total, self.preproc.sigma1)?;
                PhasePlan::with_sigma(
                    eps,
                    p.delta,
                    1.0,
                    p.t_total,
                    p.t_total,
                    sigma,
                    self.optimizer.clone(),
                    &self.accounting,
                )
            }
            None => PhasePlan::non_private(1.0, p.t_total, p.t_total, p.mode, self.optimizer.clone()),
        }
    }

    pub fn encoder_model(&self) -> Result<Model> {
        Model::new(self.encoder.clone())
    }

    /// Phase I from a seeded random encoder.
    pub fn pretrain_encoder(&self) -> Result<(ParameterVector, Vec<PretrainMetrics>)> {
        let model = self.encoder_model()?;
        let init = random_encoder(&self.encoder, self.seeds.pretrain)?;
        pretrain_encoder(&self.generator, &model, init, &self.pretrain, self.seeds.pretrain)
    }

    pub fn augmenter(&self) -> ImageAugmenter {
        let size = self.encoder.frontend.map_or(self.private_dataset.classes[0].image_size, |f| f.image_size);
        ImageAugmenter {
            size,
            channels: 3,
            settings: self.augment,
        }
    }

    /// One private run. `encoder` is the Phase I result (ignored by the
    /// random-encoder methods).
    pub fn run(
        &self,
        method: Method,
        plan: &PhasePlan,
        encoder: &ParameterVector,
        train: &[Example],
        eval: &[Example],
        seed: u64,
    ) -> Result<RunReport> {
        let aug = self.augmenter();
        let data = PrivateData {
            train,
            eval,
            augmenter: Some(&aug),
            classes: self.private_dataset.classes.len(),
        };
        match method {
            Method::DpRandp => run_dp_randp(plan, &self.encoder, encoder, &data, &self.accounting, seed),
            Method::Cold => run_cold_baseline(plan, &self.encoder, &data, &self.accounting, seed),
            Method::ColdTwoStage => {
                let random = random_encoder(&self.encoder, seed)?;
                let mut r = run_dp_randp(plan, &self.encoder, &random, &data, &self.accounting, seed)?;
                r.method = "cold_two_stage".into();
                Ok(r)
            }
            Method::LpOnly => run_lp_only(plan, &self.encoder, encoder, &data, &self.preproc, seed),
        }
    }

    /// The desk-scale task: three spectral-slope classes of 16×16 images,
    /// an encoder pretrained on dead leaves and color mixtures.
    pub fn toy() -> Self {
        let spectral = |lo: f64, hi: f64, seed: u64| GeneratorSpec {
            image_size: 16,
            channels: 3,
            params: GeneratorParams::SpectralNoise {
                alpha_min: lo,
                alpha_max: hi,
            },
            seed,
        };
        Self {
            generator: vec![
                GeneratorSpec {
                    image_size: 16,
                    channels: 3,
                    params: GeneratorParams::DeadLeaves {
                        shape: LeafShape::Mixed,
                        radius_min: 1.0,
                        radius_max: 8.0,
                        exponent: 3.0,
                        count_min: 10,
                        count_max: 40,
                    },
                    seed: 1,
                },
                GeneratorSpec {
                    image_size: 16,
                    channels: 3,
                    params: GeneratorParams::ColorMixture {
                        components_min: 2,
                        components_max: 6,
                        width_min: 0.1,
                        width_max: 0.4,
                    },
                    seed: 2,
                },
            ],
            encoder: ModelSpec {
                kind: ModelKind::Encoder,
                input_dim: 16 * 16 * 3,
                output_dim: 16,
                hidden_dims: vec![150, 150],
                activation: Activation::Tanh,
                frontend: Some(FrontendSpec {
                    image_size: 16,
                    channels: 3,
                    patch: 4,
                    stride: 2,
                    filters: 16,
                    pool_grid: 2,
                    gain: 10.0,
                    seed: 7,
                }),
            },
            pretrain: ContrastiveConfig {
                batch_size: 64,
                steps: 2000,
                learning_rate: 0.05,
                align_weight: 1.0,
                uniform_weight: 1.0,
                temperature: 2.0,
                momentum: 0.9,
                augment: AugmentSettings {
                    crop_scale_min: 0.8,
                    ..AugmentSettings::default()
                },
            },
            private_dataset: PrivateDatasetConfig {
                classes: vec![spectral(0.5, 1.2, 11), spectral(1.2, 1.9, 12), spectral(1.9, 2.6, 13)],
                train_size: 6000,
                eval_size: 1500,
                nuisance: 0.2,
                seed: 21,
            },
            plan: PlanConfig {
                epsilon: Some(1.0),
                delta: 1e-5,
                q: 128.0 / 6000.0,
                t_total: 1000,
                n1: None,
                mode: TrainMode::Private,
            },
            optimizer: PhaseHyper {
                clip_norm: 1.0,
                lr_phase2: 0.05,
                lr_phase3: 0.3,
                momentum_phase2: 0.9,
                momentum_phase3: 0.0,
                augmult_phase3: 0,
                ema_decay: Some(0.99),
                reinit_head: false,
            },
            augment: AugmentSettings {
                crop_scale_min: 1.0,
                crop_scale_max: 1.0,
                flip_prob: 0.5,
                brightness: 0.1,
                contrast: 0.1,
            },
            preproc: PreprocConfig::default(),
            seeds: SeedConfig {
                pretrain: 3,
                runs: vec![0, 1, 2, 3, 4],
            },
            output_dir: PathBuf::from("runs/toy"),
            accounting: AccountingConfig::default(),
        }
    }
}
