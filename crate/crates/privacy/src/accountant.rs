//! ε of a DP-SGD run and noise calibration on the 0.1 grid.
//!
//! `epsilon_of` reports `ε̂(δ − η) + eps_error`, where ε̂ comes from the
//! composed discretized PLD (see [`crate::pld`]) and the grid spacing is
//! chosen so that the accumulated discretization error exceeds `eps_error`
//! with probability at most η = `delta_error_fraction · δ`. The result is an
//! upper bound on the true ε.

use serde::{Deserialize, Serialize};

use crate::error::{domain, PrivacyError, Result};
use crate::pld::PrivacyLossDistribution;
use crate::rdp;

/// Noise multipliers are reported on this grid.
pub const SIGMA_GRID: f64 = 0.1;
const GRID_STEPS_PER_UNIT: f64 = 10.0;

/// Largest noise multiplier `calibrate_sigma` will consider.
pub const MAX_SIGMA: f64 = 1e6;

/// Poisson subsampled Gaussian mechanism run for `steps` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsampledGaussianSpec {
    pub sigma: f64,
    pub q: f64,
    pub steps: u64,
}

impl SubsampledGaussianSpec {
    pub fn new(sigma: f64, q: f64, steps: u64) -> Result<Self> {
        let spec = Self { sigma, q, steps };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return domain(format!("sigma must be positive and finite, got {}", self.sigma));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return domain(format!("sampling rate must lie in (0, 1], got {}", self.q));
        }
        if self.steps == 0 {
            return domain("number of steps must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccountingConfig {
    /// Largest spacing of the privacy-loss grid.
    pub grid_spacing: f64,
    /// Additive ε margin covering discretization error.
    pub eps_error: f64,
    /// Loss mass below which the support is cut.
    pub tail_bound: f64,
    /// η/δ, the failure probability of the discretization bound.
    pub delta_error_fraction: f64,
    pub max_grid_points: usize,
}

impl Default for AccountingConfig {
    fn default() -> Self {
        Self {
            grid_spacing: 1e-4,
            eps_error: 0.01,
            tail_bound: 1e-12,
            delta_error_fraction: 1e-3,
            max_grid_points: 1 << 22,
        }
    }
}

impl AccountingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.grid_spacing, self.eps_error, self.tail_bound];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return domain("grid_spacing, eps_error and tail_bound must be positive");
        }
        if self.tail_bound >= 0.5 {
            return domain("tail_bound must be below 1/2");
        }
        if !(self.delta_error_fraction > 0.0 && self.delta_error_fraction < 1.0) {
            return domain("delta_error_fraction must lie in (0, 1)");
        }
        if self.max_grid_points < 2 {
            return domain("max_grid_points must be at least 2");
        }
        Ok(())
    }

    /// Grid spacing that keeps the T-step discretization error below
    /// `eps_error` except with probability `eta`.
    pub fn spacing_for(&self, steps: u64, eta: f64) -> f64 {
        let spread = (steps as f64 * (2.0 / eta).ln() / 2.0).sqrt();
        self.grid_spacing.min(self.eps_error / spread)
    }
}

/// Single-step PLD on the configured grid. `spec.steps` is ignored.
pub fn pld_of_subsampled_gaussian(
    spec: &SubsampledGaussianSpec,
    cfg: &AccountingConfig,
) -> Result<PrivacyLossDistribution> {
    spec.validate()?;
    cfg.validate()?;
    PrivacyLossDistribution::subsampled_gaussian(
        spec.sigma,
        spec.q,
        cfg.grid_spacing,
        cfg.tail_bound,
        cfg.max_grid_points,
    )
}

/// `steps`-fold self-composition.
pub fn pld_compose(pld: &PrivacyLossDistribution, steps: u64) -> Result<PrivacyLossDistribution> {
    pld.self_compose(steps)
}

/// Upper bound on ε at `delta` for the whole run, within `eps_error`.
pub fn epsilon_of(spec: &SubsampledGaussianSpec, delta: f64, cfg: &AccountingConfig) -> Result<f64> {
    spec.validate()?;
    cfg.validate()?;
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    let eta = cfg.delta_error_fraction * delta;
    let h = cfg.spacing_for(spec.steps, eta);
    let pld = PrivacyLossDistribution::subsampled_gaussian(
        spec.sigma,
        spec.q,
        h,
        cfg.tail_bound,
        cfg.max_grid_points,
    )?
    .self_compose(spec.steps)?;
    Ok(pld.epsilon_for_delta(delta - eta)? + cfg.eps_error)
}

fn grid_epsilon(k: u64, q: f64, steps: u64, delta: f64, cfg: &AccountingConfig) -> Result<f64> {
    let spec = SubsampledGaussianSpec::new(k as f64 / GRID_STEPS_PER_UNIT, q, steps)?;
    epsilon_of(&spec, delta, cfg)
}

/// Whether grid point `k` meets the target. Noise levels so small that the
/// loss grid overflows or δ falls into the truncated tail count as misses.
fn grid_point_meets(
    k: u64,
    target: f64,
    q: f64,
    steps: u64,
    delta: f64,
    cfg: &AccountingConfig,
) -> Result<bool> {
    match grid_epsilon(k, q, steps, delta, cfg) {
        Ok(eps) => Ok(eps <= target),
        Err(PrivacyError::GridOverflow { .. }) | Err(PrivacyError::DeltaUnreachable { .. }) => {
            Ok(false)
        }
        Err(e) => Err(e),
    }
}

/// Continuous σ at which the RDP bound reaches `epsilon`; a cheap starting
/// point for the grid search.
fn rdp_sigma(epsilon: f64, delta: f64, q: f64, steps: u64) -> Result<f64> {
    let orders = rdp::default_orders();
    let eps_at = |sigma: f64| -> Result<f64> {
        rdp::rdp_epsilon(&SubsampledGaussianSpec::new(sigma, q, steps)?, delta, &orders)
    };
    let (mut lo, mut hi) = (1e-2, MAX_SIGMA);
    if eps_at(hi)? > epsilon {
        return Ok(MAX_SIGMA);
    }
    while hi / lo > 1.0 + 1e-4 {
        let mid = (lo * hi).sqrt();
        if eps_at(mid)? > epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Smallest σ on the 0.1 grid with `epsilon_of(σ) ≤ epsilon`.
pub fn calibrate_sigma(
    epsilon: f64,
    delta: f64,
    q: f64,
    steps: u64,
    cfg: &AccountingConfig,
) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return domain(format!("epsilon must be positive and finite, got {epsilon}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    SubsampledGaussianSpec::new(1.0, q, steps)?;
    cfg.validate()?;
    let failed = PrivacyError::CalibrationFailed {
        epsilon,
        delta,
        max_sigma: MAX_SIGMA,
    };
    let k_max = (MAX_SIGMA * GRID_STEPS_PER_UNIT).round() as u64;
    if !grid_point_meets(k_max, epsilon, q, steps, delta, cfg)? {
        return Err(failed);
    }

    // Bracket: hi meets the target, lo does not (or lo = 0).
    let start = ((rdp_sigma(epsilon, delta, q, steps)? * GRID_STEPS_PER_UNIT).ceil() as u64).clamp(1, k_max);
    let mut hi = start;
    while !grid_point_meets(hi, epsilon, q, steps, delta, cfg)? {
        hi = (hi + hi / 16 + 1).min(k_max);
    }
    let mut lo = hi;
    loop {
        let step = (lo / 8).max(1);
        lo = lo.saturating_sub(step);
        if lo == 0 || !grid_point_meets(lo, epsilon, q, steps, delta, cfg)? {
            break;
        }
        hi = lo;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if grid_point_meets(mid, epsilon, q, steps, delta, cfg)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi as f64 / GRID_STEPS_PER_UNIT)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_shrinks_with_steps() {
        let cfg = AccountingConfig::default();
        assert_eq!(cfg.spacing_for(1, 1e-8), 1e-4);
        let h = cfg.spacing_for(2468, 1e-8);
        assert!(h < 1e-4 && h > 5e-5);
    }

    #[test]
    fn validation() {
        assert!(SubsampledGaussianSpec::new(0.0, 0.5, 1).is_err());
        assert!(SubsampledGaussianSpec::new(1.0, 0.0, 1).is_err());
        assert!(SubsampledGaussianSpec::new(1.0, 1.5, 1).is_err());
        assert!(SubsampledGaussianSpec::new(1.0, 0.5, 0).is_err());
        let bad = AccountingConfig {
            eps_error: 0.0,
            ..AccountingConfig::default()
        };
        assert!(bad.validate().is_err());
        let spec = SubsampledGaussianSpec::new(1.0, 1.0, 1).unwrap();
        assert!(epsilon_of(&spec, 0.0, &AccountingConfig::default()).is_err());
        assert!(calibrate_sigma(0.0, 1e-5, 1.0, 1, &AccountingConfig::default()).is_err());
    }

    #[test]
    fn unreachable_target_fails() {
        let cfg = AccountingConfig::default();
        let err = calibrate_sigma(0.005, 1e-5, 1.0, 1, &cfg).unwrap_err();
        assert!(matches!(err, PrivacyError::CalibrationFailed { .. }));
    }

    #[test]
    fn vanishing_mechanism() {
        let cfg = AccountingConfig::default();
        let spec = SubsampledGaussianSpec::new(1e6, 0.3, 1).unwrap();
        assert!(epsilon_of(&spec, 1e-5, &cfg).unwrap() <= cfg.eps_error);
    }
}
