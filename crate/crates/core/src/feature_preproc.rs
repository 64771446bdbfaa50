//! Frozen-encoder features for linear probing: extraction, fixed-norm
//! scaling and centering by a privately estimated mean.
//!
//! With every row scaled to norm C and N treated as public, one row moves
//! the mean by at most C/N in L2, so adding N(0, (σ₁C/N)²) per coordinate is
//! a Gaussian mechanism with noise multiplier σ₁.

use std::path::Path;

use dprandp_privacy::GaussianMechanismSpec;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, shape, CoreError, Result};
use crate::models::{Model, ParameterVector};
use crate::rng::Stream;
use crate::tensor_io::{self, Reader, Writer};

const FEATURE_MAGIC: &[u8; 4] = b"DPRF";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocConfig {
    #[serde(default = "default_norm")]
    pub norm_c: f64,
    /// Noise multiplier of the mean estimate; 0 skips centering.
    #[serde(default)]
    pub sigma1: f64,
    #[serde(default)]
    pub block_concat: bool,
    #[serde(default = "default_stride")]
    pub pool_stride: usize,
    /// Rescale rows to norm C again after centering.
    #[serde(default)]
    pub renormalize_after_centering: bool,
}

fn default_norm() -> f64 {
    50.0
}

fn default_stride() -> usize {
    1
}

impl Default for PreprocConfig {
    fn default() -> Self {
        Self {
            norm_c: default_norm(),
            sigma1: 0.0,
            block_concat: false,
            pool_stride: default_stride(),
            renormalize_after_centering: false,
        }
    }
}

impl PreprocConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.norm_c > 0.0) || !self.norm_c.is_finite() {
            return config("feature norm C must be positive");
        }
        if !(self.sigma1 >= 0.0) || !self.sigma1.is_finite() {
            return config("sigma1 must be nonnegative");
        }
        if self.pool_stride == 0 {
            return config("pool stride must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f64>>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return shape("feature rows differ in length");
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return shape("feature matrix has non-finite entries");
        }
        Ok(Self {
            rows,
            provenance: serde_json::Value::Null,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

/// Strided mean pooling: consecutive groups of `stride` units averaged.
fn pool(v: &[f64], stride: usize) -> impl Iterator<Item = f64> + '_ {
    v.chunks(stride).map(|c| c.iter().sum::<f64>() / c.len() as f64)
}

/// Width of one extracted row.
pub fn feature_dim(model: &Model, cfg: &PreprocConfig) -> usize {
    let spec = model.spec();
    if cfg.block_concat && !spec.hidden_dims.is_empty() {
        spec.hidden_dims.iter().map(|h| h.div_ceil(cfg.pool_stride)).sum()
    } else {
        spec.penultimate_dim()
    }
}

/// Penultimate activations, or with `block_concat` every hidden layer pooled
/// and concatenated.
pub fn extract_features(
    model: &Model,
    params: &ParameterVector,
    inputs: &[&[f64]],
    cfg: &PreprocConfig,
) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let rows = inputs
        .iter()
        .map(|x| {
            let t = model.trace(params, x)?;
            let hidden = t.hidden();
            Ok(match hidden.last() {
                None => t.frontend_features().to_vec(),
                Some(last) if !cfg.block_concat => last.clone(),
                Some(_) => hidden.iter().flat_map(|h| pool(h, cfg.pool_stride)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut m = FeatureMatrix::new(rows)?;
    m.provenance = serde_json::json!({ "model": model.spec(), "preproc": cfg });
    Ok(m)
}

/// x·C/‖x‖ for every row.
pub fn normalize_to_norm(features: &FeatureMatrix, c: f64) -> Result<FeatureMatrix> {
    if !(c > 0.0) {
        return config("target norm must be positive");
    }
    let rows = features
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return shape(format!("feature row {i} is zero and has no direction"));
            }
            Ok(r.iter().map(|v| v * c / n).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix {
        rows,
        provenance: features.provenance.clone(),
    })
}

/// Mean of rows on the sphere of radius `c` plus N(0, (σ₁C/N)²) per
/// coordinate. With `accounting` the release is recorded as a one-shot
/// Gaussian mechanism, and σ₁ = 0 is refused.
pub fn private_mean(
    features: &FeatureMatrix,
    c: f64,
    sigma1: f64,
    accounting: bool,
    rng: &mut Stream,
) -> Result<(Vec<f64>, Option<GaussianMechanismSpec>)> {
    if features.is_empty() {
        return config("mean of an empty feature matrix");
    }
    if !(sigma1 >= 0.0) || !sigma1.is_finite() {
        return config("sigma1 must be nonnegative");
    }
    if accounting && sigma1 == 0.0 {
        return config("a noiseless mean is not a private release");
    }
    for (i, r) in features.rows.iter().enumerate() {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - c).abs() > 1e-9 * c.max(1.0) {
            return shape(format!("row {i} has norm {n}, expected {c}"));
        }
    }
    let n = features.len() as f64;
    let mut mean = vec![0.0; features.dim()];
    for r in &features.rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    let std = sigma1 * c / n;
    for m in &mut mean {
        *m /= n;
        if std > 0.0 {
            *m += std * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mech = if accounting {
        Some(GaussianMechanismSpec::new(sigma1, 1).map_err(CoreError::from)?)
    } else {
        None
    };
    Ok((mean, mech))
}

/// rowᵢ − mean.
pub fn center(features: &FeatureMatrix, mean: &[f64]) -> Result<FeatureMatrix> {
    if features.dim() != mean.len() && !features.is_empty() {
        return shape(format!(
            "mean has {} entries but rows have {}",
            mean.len(),
            features.dim()
        ));
    }
    let rows = features
        .rows
        .iter()
        .map(|r| r.iter().zip(mean).map(|(v, m)| v - m).collect())
        .collect();
    Ok(FeatureMatrix {
        rows,
        provenance: features.provenance.clone(),
    })
}

/// Normalize, then (if σ₁ > 0) center by the private mean. Returns the
/// processed matrix, the released mean and the mechanism consumed.
pub fn preprocess(
    features: &FeatureMatrix,
    cfg: &PreprocConfig,
    rng: &mut Stream,
) -> Result<(FeatureMatrix, Option<Vec<f64>>, Option<GaussianMechanismSpec>)> {
    cfg.validate()?;
    let normed = normalize_to_norm(features, cfg.norm_c)?;
    if cfg.sigma1 == 0.0 {
        return Ok((normed, None, None));
    }
    let (mean, mech) = private_mean(&normed, cfg.norm_c, cfg.sigma1, true, rng)?;
    let mut out = center(&normed, &mean)?;
    if cfg.renormalize_after_centering {
        out = normalize_to_norm(&out, cfg.norm_c)?;
    }
    Ok((out, Some(mean), mech))
}

/// Applies a mean released elsewhere (e.g. on the training split) to other
/// rows, without spending budget.
pub fn apply_preprocessing(features: &FeatureMatrix, mean: Option<&[f64]>, cfg: &PreprocConfig) -> Result<FeatureMatrix> {
    let normed = normalize_to_norm(features, cfg.norm_c)?;
    match mean {
        None => Ok(normed),
        Some(m) => {
            let out = center(&normed, m)?;
            if cfg.renormalize_after_centering {
                normalize_to_norm(&out, cfg.norm_c)
            } else {
                Ok(out)
            }
        }
    }
}

pub fn save_features(path: &Path, features: &FeatureMatrix) -> Result<()> {
    let mut w = Writer::new(FEATURE_MAGIC);
    w.u32(features.len())?;
    w.u32(features.dim())?;
    for r in &features.rows {
        w.f64s(r);
    }
    w.finish(path)?;
    tensor_io::write_sidecar(path, &features.provenance)
}

pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    let mut r = Reader::open(path, FEATURE_MAGIC)?;
    let (n, d) = (r.u32()?, r.u32()?);
    let rows = (0..n).map(|_| r.f64s(d)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let mut m = FeatureMatrix::new(rows)?;
    m.provenance = tensor_io::read_sidecar(path)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, ModelKind, ModelSpec};
    use crate::rng;

    fn encoder(hidden: Vec<usize>) -> Model {
        Model::new(ModelSpec {
            kind: ModelKind::Encoder,
            input_dim: 5,
            output_dim: 4,
            hidden_dims: hidden,
            activation: Activation::Relu,
            frontend: None,
        })
        .unwrap()
    }

    #[test]
    fn extracted_dimensions() {
        let inputs = [vec![0.1, -0.2, 0.3, 0.4, 0.5]];
        let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let m = encoder(vec![7]);
        let p = m.init_params(&mut rng::stream(0, "init"));
        let f = extract_features(&m, &p, &refs, &PreprocConfig::default()).unwrap();
        assert_eq!(f.dim(), 7);

        let m = encoder(vec![32, 64]);
        let p = m.init_params(&mut rng::stream(0, "init"));
        let cfg = PreprocConfig {
            block_concat: true,
            ..PreprocConfig::default()
        };
        let f = extract_features(&m, &p, &refs, &cfg).unwrap();
        assert_eq!(f.dim(), 96);
        assert_eq!(feature_dim(&m, &cfg), 96);
        assert_eq!(f, extract_features(&m, &p, &refs, &cfg).unwrap());
        let cfg3 = PreprocConfig { pool_stride: 3, ..cfg };
        assert_eq!(extract_features(&m, &p, &refs, &cfg3).unwrap().dim(), 11 + 22);
    }

    #[test]
    fn normalize_example_and_zero_row() {
        let f = FeatureMatrix::new(vec![vec![3.0, 4.0]]).unwrap();
        assert_eq!(normalize_to_norm(&f, 50.0).unwrap().rows[0], vec![30.0, 40.0]);
        let z = FeatureMatrix::new(vec![vec![0.0, 0.0]]).unwrap();
        assert!(normalize_to_norm(&z, 50.0).is_err());
    }

    #[test]
    fn mean_rules() {
        let f = FeatureMatrix::new(vec![vec![30.0, 40.0]]).unwrap();
        let mut r = rng::stream(0, "mean");
        let (m, mech) = private_mean(&f, 50.0, 0.0, false, &mut r).unwrap();
        assert_eq!(m, vec![30.0, 40.0]);
        assert!(mech.is_none());
        assert!(private_mean(&f, 50.0, 0.0, true, &mut r).is_err());
        let (_, mech) = private_mean(&f, 50.0, 71.0, true, &mut r).unwrap();
        let mech = mech.unwrap();
        assert_eq!((mech.noise_multiplier, mech.count), (71.0, 1));
        assert!(private_mean(&FeatureMatrix::new(vec![vec![1.0, 0.0]]).unwrap(), 50.0, 1.0, true, &mut r).is_err());
    }

    #[test]
    fn centering_is_linear() {
        let f = FeatureMatrix::new(vec![vec![1.0, 2.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(center(&f, &[0.0, 0.0]).unwrap(), f);
        let once = center(&f, &[1.0, 1.0]).unwrap();
        let twice = center(&once, &[1.0, 1.0]).unwrap();
        assert_eq!(twice.rows, vec![vec![-1.0, 0.0], vec![1.0, 3.0]]);
        assert!(center(&f, &[1.0]).is_err());
    }
}
