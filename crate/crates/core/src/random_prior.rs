//! Images from random processes and contrastive pretraining on them.
//!
//! Generators render H×W×3 images with values in [0, 1], stored row-major
//! with interleaved channels. The encoder is trained on two augmented views
//! of each generated image with the alignment/uniformity objective
//!
//! ```text
//! align   = mean_i ‖f(x_i) − f(x_i⁺)‖²
//! uniform = ln mean_{a<b} exp(−t‖z_a − z_b‖²)      over all 2n embeddings z
//! ```
//!
//! None of this touches private data, so it consumes no privacy budget.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp_optimizer::Augmenter;
use crate::error::{config, shape, CoreError, Result};
use crate::models::{Example, Model, ModelKind, ParameterVector};
use crate::rng::{self, Stream};
use crate::tensor_io::{self, Reader, Writer};

const DATASET_MAGIC: &[u8; 4] = b"DPRI";

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub size: usize,
    pub channels: usize,
    /// (y·W + x)·C + c
    pub data: Vec<f64>,
}

impl ImageTensor {
    pub fn filled(size: usize, channels: usize, value: f64) -> Self {
        Self {
            size,
            channels,
            data: vec![value; size * size * channels],
        }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.size + x) * self.channels + c]
    }

    fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.size + x) * self.channels + c] = v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafShape {
    Disk,
    Rectangle,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorParams {
    /// Opaque shapes painted back to front; radii follow p(r) ∝ r^−exponent
    /// on [radius_min, radius_max] (in pixels).
    DeadLeaves {
        shape: LeafShape,
        radius_min: f64,
        radius_max: f64,
        exponent: f64,
        count_min: usize,
        count_max: usize,
    },
    /// Random-phase spectrum with magnitude f^−α, α drawn per image.
    SpectralNoise { alpha_min: f64, alpha_max: f64 },
    /// Smooth blend of Gaussian color blobs.
    ColorMixture {
        components_min: usize,
        components_max: usize,
        width_min: f64,
        width_max: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    pub params: GeneratorParams,
    pub seed: u64,
}

fn default_image_size() -> usize {
    16
}

fn default_channels() -> usize {
    3
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 2 {
            return config("image size must be at least 2");
        }
        if self.channels != 3 {
            return config("generators render three channels");
        }
        match &self.params {
            GeneratorParams::DeadLeaves {
                radius_min,
                radius_max,
                count_min,
                count_max,
                exponent,
                ..
            } => {
                if !(*radius_min > 0.0 && radius_min <= radius_max) || !exponent.is_finite() {
                    return config("dead leaves radii must satisfy 0 < min ≤ max");
                }
                if *count_min == 0 || count_min > count_max {
                    return config("dead leaves counts must satisfy 1 ≤ min ≤ max");
                }
            }
            GeneratorParams::SpectralNoise { alpha_min, alpha_max } => {
                if !(alpha_min <= alpha_max) || !alpha_min.is_finite() || !alpha_max.is_finite() {
                    return config("spectral exponents must satisfy min ≤ max");
                }
            }
            GeneratorParams::ColorMixture {
                components_min,
                components_max,
                width_min,
                width_max,
            } => {
                if *components_min == 0 || components_min > components_max {
                    return config("component counts must satisfy 1 ≤ min ≤ max");
                }
                if !(*width_min > 0.0 && width_min <= width_max) {
                    return config("blob widths must satisfy 0 < min ≤ max");
                }
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.image_size * self.image_size * self.channels
    }

    /// Image `index` of this generator's sequence.
    pub fn render(&self, index: u64) -> ImageTensor {
        let mut rng = rng::item_stream(self.seed, "generate", &[index]);
        match &self.params {
            GeneratorParams::DeadLeaves {
                shape,
                radius_min,
                radius_max,
                exponent,
                count_min,
                count_max,
            } => dead_leaves(
                self.image_size,
                *shape,
                (*radius_min, *radius_max),
                *exponent,
                (*count_min, *count_max),
                &mut rng,
            ),
            GeneratorParams::SpectralNoise { alpha_min, alpha_max } => {
                let alpha = if alpha_min < alpha_max {
                    rng.gen_range(*alpha_min..*alpha_max)
                } else {
                    *alpha_min
                };
                spectral_noise(self.image_size, alpha, &mut rng)
            }
            GeneratorParams::ColorMixture {
                components_min,
                components_max,
                width_min,
                width_max,
            } => color_mixture(
                self.image_size,
                (*components_min, *components_max),
                (*width_min, *width_max),
                &mut rng,
            ),
        }
    }
}

pub fn generate(spec: &GeneratorSpec, n: usize) -> Result<Vec<ImageTensor>> {
    spec.validate()?;
    if n == 0 {
        return config("number of images must be at least 1");
    }
    Ok((0..n as u64).map(|i| spec.render(i)).collect())
}

fn power_law_radius(rng: &mut Stream, lo: f64, hi: f64, exponent: f64) -> f64 {
    let u: f64 = rng.gen();
    if lo == hi {
        return lo;
    }
    if (exponent - 1.0).abs() < 1e-12 {
        return lo * (hi / lo).powf(u);
    }
    let e = 1.0 - exponent;
    (lo.powf(e) + u * (hi.powf(e) - lo.powf(e))).powf(1.0 / e)
}

fn dead_leaves(
    n: usize,
    shape: LeafShape,
    radius: (f64, f64),
    exponent: f64,
    count: (usize, usize),
    rng: &mut Stream,
) -> ImageTensor {
    let mut img = ImageTensor::filled(n, 3, 0.0);
    let background: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
    for y in 0..n {
        for x in 0..n {
            for (c, v) in background.iter().enumerate() {
                img.set(y, x, c, *v);
            }
        }
    }
    let leaves = rng.gen_range(count.0..=count.1);
    let size = n as f64;
    for _ in 0..leaves {
        let r = power_law_radius(rng, radius.0, radius.1, exponent);
        let (cx, cy) = (rng.gen::<f64>() * size, rng.gen::<f64>() * size);
        let color: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let rect = match shape {
            LeafShape::Disk => false,
            LeafShape::Rectangle => true,
            LeafShape::Mixed => rng.gen::<bool>(),
        };
        let aspect = if rect { rng.gen_range(0.5..2.0) } else { 1.0 };
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = if rect {
                    dx.abs() <= r && dy.abs() <= r * aspect
                } else {
                    dx * dx + dy * dy <= r * r
                };
                if inside {
                    for (c, v) in color.iter().enumerate() {
                        img.set(y, x, c, *v);
                    }
                }
            }
        }
    }
    img
}

/// Twiddle-table DFT along one axis of an n×n complex field.
fn dft_axis(re: &mut [f64], im: &mut [f64], n: usize, rows: bool, inverse: bool) {
    let sign = if inverse { 1.0 } else { -1.0 };
    let cos: Vec<f64> = (0..n).map(|k| (2.0 * PI * k as f64 / n as f64).cos()).collect();
    let sin: Vec<f64> = (0..n).map(|k| sign * (2.0 * PI * k as f64 / n as f64).sin()).collect();
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for line in 0..n {
        let idx = |i: usize| if rows { line * n + i } else { i * n + line };
        for (k, (ore, oim)) in out_re.iter_mut().zip(out_im.iter_mut()).enumerate() {
            let (mut sr, mut si) = (0.0, 0.0);
            for j in 0..n {
                let t = (j * k) % n;
                let (xr, xi) = (re[idx(j)], im[idx(j)]);
                sr += xr * cos[t] - xi * sin[t];
                si += xr * sin[t] + xi * cos[t];
            }
            *ore = sr;
            *oim = si;
        }
        for i in 0..n {
            re[idx(i)] = out_re[i];
            im[idx(i)] = out_im[i];
        }
    }
}

/// 2-D DFT of a real n×n field; returns (re, im).
pub fn dft2(field: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut re = field.to_vec();
    let mut im = vec![0.0; n * n];
    dft_axis(&mut re, &mut im, n, true, false);
    dft_axis(&mut re, &mut im, n, false, false);
    (re, im)
}

fn radial_frequency(u: usize, v: usize, n: usize) -> f64 {
    let fu = u.min(n - u) as f64;
    let fv = v.min(n - v) as f64;
    (fu * fu + fv * fv).sqrt()
}

fn spectral_noise(n: usize, alpha: f64, rng: &mut Stream) -> ImageTensor {
    let mut img = ImageTensor::filled(n, 3, 0.0);
    for c in 0..3 {
        let mut re = vec![0.0; n * n];
        let mut im = vec![0.0; n * n];
        for v in 0..n {
            for u in 0..n {
                let f = radial_frequency(u, v, n);
                let phase = rng.gen::<f64>() * 2.0 * PI;
                if f > 0.0 {
                    let amp = f.powf(-alpha);
                    re[v * n + u] = amp * phase.cos();
                    im[v * n + u] = amp * phase.sin();
                }
            }
        }
        dft_axis(&mut re, &mut im, n, true, true);
        dft_axis(&mut re, &mut im, n, false, true);
        let lo = re.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = re.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        for y in 0..n {
            for x in 0..n {
                img.set(y, x, c, (re[y * n + x] - lo) / span);
            }
        }
    }
    img
}

fn color_mixture(n: usize, components: (usize, usize), width: (f64, f64), rng: &mut Stream) -> ImageTensor {
    let k = rng.gen_range(components.0..=components.1);
    let size = n as f64;
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..k)
        .map(|_| {
            let centre = [rng.gen::<f64>() * size, rng.gen::<f64>() * size];
            let w = if width.0 < width.1 {
                rng.gen_range(width.0..width.1)
            } else {
                width.0
            } * size;
            (centre, w, [rng.gen(), rng.gen(), rng.gen()])
        })
        .collect();
    let mut img = ImageTensor::filled(n, 3, 0.0);
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut weights: Vec<f64> = blobs
                .iter()
                .map(|(c, w, _)| {
                    let d2 = (px - c[0]).powi(2) + (py - c[1]).powi(2);
                    -d2 / (2.0 * w * w)
                })
                .collect();
            let m = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            weights.iter_mut().for_each(|v| *v = (*v - m).exp());
            let total: f64 = weights.iter().sum();
            for c in 0..3 {
                let v: f64 = weights.iter().zip(&blobs).map(|(w, b)| w * b.2[c]).sum::<f64>() / total;
                img.set(y, x, c, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSettings {
    /// Area fraction range of the square crop.
    pub crop_scale_min: f64,
    pub crop_scale_max: f64,
    pub flip_prob: f64,
    /// Per-channel additive shift drawn from [−brightness, brightness].
    pub brightness: f64,
    /// Per-channel contrast factor drawn from [1 − contrast, 1 + contrast].
    pub contrast: f64,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self {
            crop_scale_min: 0.4,
            crop_scale_max: 1.0,
            flip_prob: 0.5,
            brightness: 0.2,
            contrast: 0.2,
        }
    }
}

impl AugmentSettings {
    pub fn identity() -> Self {
        Self {
            crop_scale_min: 1.0,
            crop_scale_max: 1.0,
            flip_prob: 0.0,
            brightness: 0.0,
            contrast: 0.0,
        }
    }
}

fn uniform(rng: &mut Stream, lo: f64, hi: f64) -> f64 {
    if lo < hi {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Random resized crop, horizontal flip and per-channel jitter, clamped to
/// [0, 1].
pub fn augment(image: &ImageTensor, settings: &AugmentSettings, rng: &mut Stream) -> ImageTensor {
    let n = image.size;
    let ch = image.channels;
    let scale = uniform(rng, settings.crop_scale_min, settings.crop_scale_max);
    let side = (scale.sqrt() * n as f64).clamp(1.0, n as f64);
    let x0 = uniform(rng, 0.0, n as f64 - side);
    let y0 = uniform(rng, 0.0, n as f64 - side);
    let flip = rng.gen::<f64>() < settings.flip_prob;
    let ratio = side / n as f64;
    let mut out = ImageTensor::filled(n, ch, 0.0);
    for y in 0..n {
        let sy = (y0 + (y as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n - 1) as f64);
        let (yi, fy) = (sy.floor() as usize, sy - sy.floor());
        let yj = (yi + 1).min(n - 1);
        for x in 0..n {
            let xs = if flip { n - 1 - x } else { x };
            let sx = (x0 + (xs as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n - 1) as f64);
            let (xi, fx) = (sx.floor() as usize, sx - sx.floor());
            let xj = (xi + 1).min(n - 1);
            for c in 0..ch {
                let v = if fx == 0.0 && fy == 0.0 {
                    image.at(yi, xi, c)
                } else {
                    (1.0 - fy) * ((1.0 - fx) * image.at(yi, xi, c) + fx * image.at(yi, xj, c))
                        + fy * ((1.0 - fx) * image.at(yj, xi, c) + fx * image.at(yj, xj, c))
                };
                out.set(y, x, c, v);
            }
        }
    }
    if settings.brightness > 0.0 || settings.contrast > 0.0 {
        for c in 0..ch {
            let a = uniform(rng, 1.0 - settings.contrast, 1.0 + settings.contrast);
            let b = uniform(rng, -settings.brightness, settings.brightness);
            let mean = (0..n * n).map(|p| out.data[p * ch + c]).sum::<f64>() / (n * n) as f64;
            for p in 0..n * n {
                let v = &mut out.data[p * ch + c];
                *v = ((*v - mean) * a + mean + b).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// [`augment`] over flattened images, for DP-SGD augmentation multiplicity.
#[derive(Debug, Clone, Copy)]
pub struct ImageAugmenter {
    pub size: usize,
    pub channels: usize,
    pub settings: AugmentSettings,
}

impl Augmenter for ImageAugmenter {
    fn augment(&self, input: &[f64], rng: &mut Stream) -> Vec<f64> {
        let img = ImageTensor {
            size: self.size,
            channels: self.channels,
            data: input.to_vec(),
        };
        augment(&img, &self.settings, rng).data
    }
}

fn check_unit(v: &[f64]) -> Result<()> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-9 {
        return shape(format!("embedding has norm {n}, expected 1"));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Alignment and uniformity of positive pairs with kernel parameter `t`.
pub fn alignment_uniformity_loss(pairs: &[(Vec<f64>, Vec<f64>)], t: f64) -> Result<(f64, f64)> {
    alignment_uniformity_grad(pairs, t).map(|(a, u, _, _)| (a, u))
}

type PairGrads = Vec<(Vec<f64>, Vec<f64>)>;

/// Losses plus gradients of align and of uniform with respect to every
/// embedding.
pub fn alignment_uniformity_grad(
    pairs: &[(Vec<f64>, Vec<f64>)],
    t: f64,
) -> Result<(f64, f64, PairGrads, PairGrads)> {
    if pairs.len() < 2 {
        return config("alignment/uniformity needs at least two pairs");
    }
    let dim = pairs[0].0.len();
    for (u, v) in pairs {
        if u.len() != dim || v.len() != dim {
            return shape("embeddings differ in dimension");
        }
        check_unit(u)?;
        check_unit(v)?;
    }
    let n = pairs.len();
    let mut align = 0.0;
    let mut d_align: PairGrads = Vec::with_capacity(n);
    for (u, v) in pairs {
        align += sq_dist(u, v);
        let g: Vec<f64> = u.iter().zip(v).map(|(a, b)| 2.0 * (a - b) / n as f64).collect();
        let neg = g.iter().map(|x| -x).collect();
        d_align.push((g, neg));
    }
    align /= n as f64;

    let z: Vec<&Vec<f64>> = pairs.iter().flat_map(|(u, v)| [u, v]).collect();
    let m = z.len();
    let mut kernel = vec![0.0; m * m];
    let mut sum = 0.0;
    for a in 0..m {
        for b in a + 1..m {
            let k = (-t * sq_dist(z[a], z[b])).exp();
            kernel[a * m + b] = k;
            kernel[b * m + a] = k;
            sum += k;
        }
    }
    let count = (m * (m - 1) / 2) as f64;
    let uniform = (sum / count).ln();
    let mut dz = vec![vec![0.0; dim]; m];
    for a in 0..m {
        for b in 0..m {
            let k = kernel[a * m + b];
            if a == b || k == 0.0 {
                continue;
            }
            for (d, (x, y)) in dz[a].iter_mut().zip(z[a].iter().zip(z[b].iter())) {
                *d += -2.0 * t * k * (x - y) / sum;
            }
        }
    }
    let mut it = dz.into_iter();
    let d_uniform: PairGrads = (0..n)
        .map(|_| (it.next().expect("2n"), it.next().expect("2n")))
        .collect();
    Ok((align, uniform, d_align, d_uniform))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    #[serde(default = "one")]
    pub align_weight: f64,
    #[serde(default = "one")]
    pub uniform_weight: f64,
    #[serde(default = "two")]
    pub temperature: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub augment: AugmentSettings,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return config("contrastive batches need at least two images");
        }
        for (name, v) in [
            ("learning rate", self.learning_rate),
            ("align weight", self.align_weight),
            ("uniform weight", self.uniform_weight),
            ("temperature", self.temperature),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return config(format!("{name} must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return config("momentum must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainMetrics {
    pub step: usize,
    pub align: f64,
    pub uniform: f64,
}

/// Embeds two augmented views of each image.
pub fn embed_pairs(
    model: &Model,
    params: &ParameterVector,
    images: &[ImageTensor],
    settings: &AugmentSettings,
    seed: u64,
    step: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = rng::item_stream(seed, "views", &[step, i as u64]);
            let a = augment(img, settings, &mut rng);
            let b = augment(img, settings, &mut rng);
            Ok((model.forward(params, &a.data)?, model.forward(params, &b.data)?))
        })
        .collect()
}

/// Images for one pretraining step, cycling through the generator list.
fn pretrain_batch(gens: &[GeneratorSpec], batch: usize, step: usize) -> Vec<ImageTensor> {
    (0..batch)
        .map(|j| {
            let g = &gens[j % gens.len()];
            g.render((step * batch + j) as u64)
        })
        .collect()
}

/// Held-out synthetic pairs for before/after comparisons.
pub fn evaluate_contrastive(
    model: &Model,
    params: &ParameterVector,
    gens: &[GeneratorSpec],
    cfg: &ContrastiveConfig,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let images: Vec<ImageTensor> = (0..n)
        .map(|j| gens[j % gens.len()].render(u64::MAX / 2 + j as u64))
        .collect();
    let pairs = embed_pairs(model, params, &images, &cfg.augment, seed, u64::MAX)?;
    alignment_uniformity_loss(&pairs, cfg.temperature)
}

/// Phase I: plain SGD on the alignment/uniformity objective.
pub fn pretrain_encoder(
    gens: &[GeneratorSpec],
    model: &Model,
    params0: ParameterVector,
    cfg: &ContrastiveConfig,
    seed: u64,
) -> Result<(ParameterVector, Vec<PretrainMetrics>)> {
    if model.spec().kind != ModelKind::Encoder {
        return config("pretraining needs an encoder model");
    }
    if gens.is_empty() {
        return config("pretraining needs at least one generator");
    }
    cfg.validate()?;
    for g in gens {
        g.validate()?;
        if g.input_dim() != model.spec().input_dim {
            return shape("generator image size does not match the encoder input");
        }
    }
    let mut params = params0;
    let mut velocity = params.zeros_like();
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let images = pretrain_batch(gens, cfg.batch_size, step);
        let mut traces = Vec::with_capacity(2 * images.len());
        let mut pairs = Vec::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            let mut rng = rng::item_stream(seed, "views", &[step as u64, i as u64]);
            let a = model.trace(&params, &augment(img, &cfg.augment, &mut rng).data)?;
            let b = model.trace(&params, &augment(img, &cfg.augment, &mut rng).data)?;
            pairs.push((a.output().to_vec(), b.output().to_vec()));
            traces.push(a);
            traces.push(b);
        }
        let (align, uniform, d_align, d_uniform) = alignment_uniformity_grad(&pairs, cfg.temperature)?;
        if !(align + uniform).is_finite() {
            return Err(CoreError::NonFinite { step });
        }
        let mut grad = params.zeros_like();
        for (i, ((da_u, da_v), (du_u, du_v))) in d_align.iter().zip(&d_uniform).enumerate() {
            for (k, (da, du)) in [(da_u, du_u), (da_v, du_v)].into_iter().enumerate() {
                let d: Vec<f64> = da
                    .iter()
                    .zip(du)
                    .map(|(a, u)| cfg.align_weight * a + cfg.uniform_weight * u)
                    .collect();
                model.backward_into(&params, &traces[2 * i + k], &d, &mut grad);
            }
        }
        velocity.scale(cfg.momentum);
        velocity.axpy(1.0, &grad);
        params.axpy(-cfg.learning_rate, &velocity);
        if !params.all_finite() {
            return Err(CoreError::NonFinite { step });
        }
        log.push(PretrainMetrics { step, align, uniform });
    }
    Ok((params, log))
}

/// Labeled images, one generator per class, with per-image brightness and
/// contrast nuisance. Classes alternate so any prefix is balanced.
pub fn labeled_dataset(class_generators: &[GeneratorSpec], n: usize, nuisance: f64, seed: u64) -> Result<Vec<Example>> {
    if class_generators.is_empty() {
        return config("need at least one class generator");
    }
    for g in class_generators {
        g.validate()?;
    }
    let k = class_generators.len();
    let settings = AugmentSettings {
        brightness: nuisance,
        contrast: nuisance,
        ..AugmentSettings::identity()
    };
    Ok((0..n)
        .map(|i| {
            let label = i % k;
            let img = class_generators[label].render((i / k) as u64);
            let mut rng = rng::item_stream(seed, "nuisance", &[i as u64]);
            Example {
                input: augment(&img, &settings, &mut rng).data,
                label,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generators: Vec<GeneratorSpec>,
    pub seed: u64,
    #[serde(default)]
    pub labels: Option<Vec<usize>>,
    #[serde(default)]
    pub nuisance: f64,
}

pub fn save_dataset(path: &Path, images: &[Vec<f64>], size: usize, channels: usize, meta: &DatasetMeta) -> Result<()> {
    let mut w = Writer::new(DATASET_MAGIC);
    for v in [images.len(), size, size, channels] {
        w.u32(v)?;
    }
    for img in images {
        if img.len() != size * size * channels {
            return shape("image size disagrees with the header");
        }
        w.f64s(img);
    }
    w.finish(path)?;
    tensor_io::write_sidecar(path, meta)
}

/// Returns the images (flattened), image size, channels and sidecar.
pub fn load_dataset(path: &Path) -> Result<(Vec<Vec<f64>>, usize, usize, DatasetMeta)> {
    let mut r = Reader::open(path, DATASET_MAGIC)?;
    let (n, h, w, c) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    if h != w {
        return Err(CoreError::Format("images must be square".into()));
    }
    let per = h * w * c;
    let images = (0..n).map(|_| r.f64s(per)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let meta: DatasetMeta = tensor_io::read_sidecar(path)?;
    if let Some(labels) = &meta.labels {
        if labels.len() != n {
            return Err(CoreError::Format("label count disagrees with the image count".into()));
        }
    }
    Ok((images, h, c, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dead_leaves_spec(count: usize, radius: f64) -> GeneratorSpec {
        GeneratorSpec {
            image_size: 16,
            channels: 3,
            params: GeneratorParams::DeadLeaves {
                shape: LeafShape::Disk,
                radius_min: radius,
                radius_max: radius,
                exponent: 3.0,
                count_min: count,
                count_max: count,
            },
            seed: 11,
        }
    }

    #[test]
    fn single_covering_leaf_is_constant() {
        let img = &generate(&dead_leaves_spec(1, 100.0), 1).unwrap()[0];
        for c in 0..3 {
            let v = img.at(0, 0, c);
            assert!(img.data.iter().skip(c).step_by(3).all(|x| *x == v));
        }
    }

    #[test]
    fn generators_are_deterministic_and_in_range() {
        let specs = [
            dead_leaves_spec(20, 2.0),
            GeneratorSpec {
                params: GeneratorParams::SpectralNoise {
                    alpha_min: 1.0,
                    alpha_max: 2.0,
                },
                ..dead_leaves_spec(1, 1.0)
            },
            GeneratorSpec {
                params: GeneratorParams::ColorMixture {
                    components_min: 2,
                    components_max: 5,
                    width_min: 0.1,
                    width_max: 0.4,
                },
                ..dead_leaves_spec(1, 1.0)
            },
        ];
        for s in &specs {
            let a = generate(s, 4).unwrap();
            assert_eq!(a, generate(s, 4).unwrap());
            assert!(a.iter().all(|img| img.data.iter().all(|v| (0.0..=1.0).contains(v))));
            assert_ne!(a[0], a[1]);
        }
    }

    #[test]
    fn identity_augmentation_and_double_flip() {
        let img = generate(&dead_leaves_spec(10, 3.0), 1).unwrap().remove(0);
        let mut rng = rng::stream(0, "t");
        assert_eq!(augment(&img, &AugmentSettings::identity(), &mut rng), img);
        let flip = AugmentSettings {
            flip_prob: 1.0,
            ..AugmentSettings::identity()
        };
        let once = augment(&img, &flip, &mut rng);
        assert_ne!(once, img);
        assert_eq!(augment(&once, &flip, &mut rng), img);
    }

    #[test]
    fn antipodal_uniformity_closed_form() {
        let v = vec![1.0, 0.0];
        let w = vec![-1.0, 0.0];
        let pairs = vec![(v.clone(), v), (w.clone(), w)];
        let (align, uniform) = alignment_uniformity_loss(&pairs, 2.0).unwrap();
        assert_eq!(align, 0.0);
        let want = ((1.0 + 2.0 * (-8.0f64).exp()) / 3.0).ln();
        assert!((uniform - want).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_embeddings() {
        let pairs = vec![(vec![2.0, 0.0], vec![1.0, 0.0]), (vec![1.0, 0.0], vec![1.0, 0.0])];
        assert!(alignment_uniformity_loss(&pairs, 2.0).is_err());
        assert!(alignment_uniformity_loss(&pairs[..1], 2.0).is_err());
    }
}
