//! The Gaussian mechanism in Gaussian-DP form.
//!
//! A Gaussian mechanism with L2 sensitivity 1 and noise multiplier σ is
//! μ-GDP with μ = 1/σ, and a list of such mechanisms run on the same data
//! composes to μ = sqrt(Σ countᵢ / σᵢ²). The (ε, δ) curve of a μ-GDP
//! mechanism is
//!
//! ```text
//! δ(ε) = Φ(μ/2 − ε/μ) − e^ε Φ(−μ/2 − ε/μ)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::normal;

/// Bisection tolerance for [`gdp_epsilon`].
const EPSILON_TOLERANCE: f64 = 1e-9;

/// Width of the initial bracket in [`gdp_epsilon`], in units of μ.
const BRACKET_Z: f64 = 40.0;

/// An (ε, δ) target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        let budget = Self { epsilon, delta };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) {
            return domain(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return domain(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        Ok(())
    }
}

/// `count` invocations of a Gaussian mechanism with noise multiplier σ on a
/// statistic of L2 sensitivity 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMechanismSpec {
    pub noise_multiplier: f64,
    pub count: u64,
}

impl GaussianMechanismSpec {
    pub fn new(noise_multiplier: f64, count: u64) -> Result<Self> {
        let spec = Self {
            noise_multiplier,
            count,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_multiplier > 0.0) || !self.noise_multiplier.is_finite() {
            return domain(format!(
                "noise multiplier must be positive and finite, got {}",
                self.noise_multiplier
            ));
        }
        if self.count == 0 {
            return domain("mechanism count must be at least 1");
        }
        Ok(())
    }

    fn mu_squared(&self) -> f64 {
        self.count as f64 / (self.noise_multiplier * self.noise_multiplier)
    }
}

/// Gaussian-DP parameter μ.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GdpParameter(f64);

impl GdpParameter {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return domain(format!("mu must be positive and finite, got {mu}"));
        }
        Ok(Self(mu))
    }

    pub fn mu(self) -> f64 {
        self.0
    }

    /// Noise multiplier of the equivalent single Gaussian mechanism, 1/μ.
    pub fn effective_sigma(self) -> f64 {
        1.0 / self.0
    }
}

/// δ(ε) of a μ-GDP mechanism.
///
/// The two Φ terms nearly cancel for small δ (around 7e-7 out of 1.5e-5 for
/// the ImageNet probe parameters), so the difference is formed as
/// `Φ(a) · (1 − exp(ε + ln Φ(b) − ln Φ(a)))` with `expm1`.
pub fn gdp_delta(mu: GdpParameter, epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return domain(format!("epsilon must be nonnegative, got {epsilon}"));
    }
    Ok(gdp_delta_unchecked(mu.mu(), epsilon))
}

pub(crate) fn gdp_delta_unchecked(mu: f64, epsilon: f64) -> f64 {
    if epsilon.is_infinite() {
        return 0.0;
    }
    let a = 0.5 * mu - epsilon / mu;
    let b = -0.5 * mu - epsilon / mu;
    let log_pa = normal::log_cdf(a);
    let log_pb = normal::log_cdf(b);
    let ratio = epsilon + log_pb - log_pa;
    if ratio >= 0.0 {
        return 0.0;
    }
    (log_pa.exp() * -ratio.exp_m1()).max(0.0)
}

/// Smallest ε with δ(ε) ≤ `delta`, to within 1e-9.
///
/// Returns 0 when `delta` already dominates δ(0). The returned ε always
/// satisfies `gdp_delta(mu, ε) <= delta`.
pub fn gdp_epsilon(mu: GdpParameter, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    let mu = mu.mu();
    if gdp_delta_unchecked(mu, 0.0) <= delta {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 0.5 * mu * mu + mu * BRACKET_Z;
    while gdp_delta_unchecked(mu, hi) > delta {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return domain("epsilon bracket overflowed");
        }
    }
    while hi - lo > EPSILON_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gdp_delta_unchecked(mu, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Composes Gaussian mechanisms into a single μ.
pub fn compose_gaussians(mechanisms: &[GaussianMechanismSpec]) -> Result<GdpParameter> {
    if mechanisms.is_empty() {
        return domain("cannot compose an empty list of mechanisms");
    }
    let mut mu_sq = 0.0;
    for m in mechanisms {
        m.validate()?;
        mu_sq += m.mu_squared();
    }
    GdpParameter::new(mu_sq.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mu(v: f64) -> GdpParameter {
        GdpParameter::new(v).unwrap()
    }

    #[test]
    fn delta_at_zero_epsilon_is_central_mass() {
        // Φ(0.5) − Φ(−0.5)
        let d = gdp_delta(mu(1.0), 0.0).unwrap();
        assert!((d - 0.382_924_922_548_026_2).abs() < 1e-15);
    }

    #[test]
    fn vanishing_mechanism() {
        assert!(gdp_delta(mu(1e-9), 0.1).unwrap() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(GdpParameter::new(0.0).is_err());
        assert!(GdpParameter::new(-1.0).is_err());
        assert!(gdp_delta(mu(1.0), -0.1).is_err());
        assert!(gdp_epsilon(mu(1.0), 0.0).is_err());
        assert!(gdp_epsilon(mu(1.0), 1.0).is_err());
        assert!(compose_gaussians(&[]).is_err());
        assert!(GaussianMechanismSpec::new(0.0, 1).is_err());
        assert!(GaussianMechanismSpec::new(1.0, 0).is_err());
        assert!(PrivacyBudget::new(-1.0, 1e-5).is_err());
        assert!(PrivacyBudget::new(1.0, 1.0).is_err());
    }

    #[test]
    fn epsilon_is_zero_when_delta_is_large() {
        let m = mu(1.0);
        let d0 = gdp_delta(m, 0.0).unwrap();
        assert_eq!(gdp_epsilon(m, d0).unwrap(), 0.0);
        assert_eq!(gdp_epsilon(m, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn composition_examples() {
        let single = compose_gaussians(&[GaussianMechanismSpec::new(5.0, 1).unwrap()]).unwrap();
        assert!((single.mu() - 0.2).abs() < 1e-15);

        let lp = compose_gaussians(&[GaussianMechanismSpec::new(7.0, 100).unwrap()]).unwrap();
        assert!((lp.mu() - 10.0 / 7.0).abs() < 1e-14);

        let imagenet = compose_gaussians(&[
            GaussianMechanismSpec::new(71.0, 1).unwrap(),
            GaussianMechanismSpec::new(43.0, 100).unwrap(),
        ])
        .unwrap();
        let direct = (1.0 / (71.0_f64 * 71.0) + 100.0 / (43.0 * 43.0)).sqrt();
        assert!((imagenet.mu() - direct).abs() < 1e-15);
        assert!((imagenet.mu() - 0.232_984_251_833_787_5).abs() < 1e-15);
        assert!((imagenet.effective_sigma() - 1.0 / direct).abs() < 1e-12);
    }
}
