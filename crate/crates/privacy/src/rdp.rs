//! Rényi-DP accounting for the Poisson subsampled Gaussian mechanism.
//!
//! Used only as an independent, looser upper bound next to the PLD
//! accountant. Integer orders use the binomial expansion of
//! E_Q[(P/Q)^α]; fractional orders use the two-sided series with erfc
//! weights. Conversion to (ε, δ) uses
//! `ε = rdp + ln((α−1)/α) − (ln δ + ln α)/(α−1)`.

use crate::accountant::SubsampledGaussianSpec;
use crate::error::{domain, Result};
use crate::normal;

/// Terms below e^-30 relative to the running sum end the fractional series.
const SERIES_CUTOFF: f64 = -30.0;

/// Orders 1.25..=512 in the usual spacing.
pub fn default_orders() -> Vec<f64> {
    let mut orders = vec![1.25, 1.5, 1.75];
    orders.extend((2..64).map(f64::from));
    orders.extend([
        64.0, 80.0, 96.0, 128.0, 160.0, 192.0, 256.0, 320.0, 384.0, 448.0, 512.0,
    ]);
    orders
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + (-(a - b).abs()).exp().ln_1p()
}

fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

fn log_a_integer(q: f64, sigma: f64, alpha: u32) -> f64 {
    let a = f64::from(alpha);
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let mut acc = f64::NEG_INFINITY;
    for i in 0..=alpha {
        let fi = f64::from(i);
        let log_coef = ln_gamma(a + 1.0) - ln_gamma(fi + 1.0) - ln_gamma(a - fi + 1.0);
        let term = log_coef + fi * lq + (a - fi) * l1q + (fi * fi - fi) / (2.0 * sigma * sigma);
        acc = log_add(acc, term);
    }
    acc
}

fn log_a_fractional(q: f64, sigma: f64, alpha: f64) -> f64 {
    let s2 = sigma * sigma;
    let (lq, l1q) = (q.ln(), (-q).ln_1p());
    let z0 = s2 * (1.0 / q - 1.0).ln() + 0.5;
    let mut log_a0 = f64::NEG_INFINITY;
    let mut log_a1 = f64::NEG_INFINITY;
    // Generalized binomial coefficient C(α, i) as (ln |c|, sign).
    let mut log_coef = 0.0;
    let mut positive = true;
    let mut i = 0u32;
    loop {
        let fi = f64::from(i);
        let j = alpha - fi;
        let log_t0 = log_coef + fi * lq + j * l1q;
        let log_t1 = log_coef + j * lq + fi * l1q;
        let log_e0 = 0.5f64.ln() + normal::log_erfc((fi - z0) / (2.0f64.sqrt() * sigma));
        let log_e1 = 0.5f64.ln() + normal::log_erfc((z0 - j) / (2.0f64.sqrt() * sigma));
        let log_s0 = log_t0 + (fi * fi - fi) / (2.0 * s2) + log_e0;
        let log_s1 = log_t1 + (j * j - j) / (2.0 * s2) + log_e1;
        if positive {
            log_a0 = log_add(log_a0, log_s0);
            log_a1 = log_add(log_a1, log_s1);
        } else {
            log_a0 = log_sub(log_a0, log_s0);
            log_a1 = log_sub(log_a1, log_s1);
        }
        if log_s0.max(log_s1) < SERIES_CUTOFF || i > 10_000 {
            break;
        }
        let factor = (alpha - fi) / (fi + 1.0);
        if factor == 0.0 {
            break;
        }
        log_coef += factor.abs().ln();
        if factor < 0.0 {
            positive = !positive;
        }
        i += 1;
    }
    log_add(log_a0, log_a1)
}

/// Per-step Rényi divergence of order `alpha`.
pub fn rdp_per_step(sigma: f64, q: f64, alpha: f64) -> f64 {
    if q == 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    let log_a = if alpha.fract() == 0.0 && alpha <= f64::from(u32::MAX) {
        log_a_integer(q, sigma, alpha as u32)
    } else {
        log_a_fractional(q, sigma, alpha)
    };
    (log_a / (alpha - 1.0)).max(0.0)
}

/// (ε, δ) bound from the best of `orders`.
pub fn rdp_epsilon(spec: &SubsampledGaussianSpec, delta: f64, orders: &[f64]) -> Result<f64> {
    spec.validate()?;
    if orders.is_empty() {
        return domain("RDP orders must not be empty");
    }
    if !(delta > 0.0 && delta < 1.0) {
        return domain(format!("delta must lie in (0, 1), got {delta}"));
    }
    let mut best = f64::INFINITY;
    for &alpha in orders {
        if !(alpha > 1.0) {
            return domain(format!("RDP orders must exceed 1, got {alpha}"));
        }
        let rdp = spec.steps as f64 * rdp_per_step(spec.sigma, spec.q, alpha);
        if !rdp.is_finite() {
            continue;
        }
        let eps = rdp + ((alpha - 1.0) / alpha).ln() - (delta.ln() + alpha.ln()) / (alpha - 1.0);
        best = best.min(eps);
    }
    Ok(best.max(0.0))
}
