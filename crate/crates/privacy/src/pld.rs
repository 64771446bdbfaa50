//! Discretized privacy loss distributions (PLDs) of the Poisson subsampled
//! Gaussian mechanism.
//!
//! For sampling rate q and noise multiplier σ the add/remove neighbouring
//! relation is dominated by the pair
//!
//! ```text
//! P = (1 − q)·N(0, σ²) + q·N(1, σ²)      Q = N(0, σ²)
//! ```
//!
//! and its reverse. Each direction is kept as its own [`LossPmf`] and
//! composed separately; δ(ε) is the larger of the two at the end.
//!
//! Discretization places the loss mass of each cell ((k−½)h, (k+½)h] on the
//! cell centre and then shifts the whole grid so that the discrete mean
//! equals the mean of the (tail-clamped) continuous loss. The per-step
//! coupling error is then zero-mean and confined to an interval of width h,
//! so after T steps it exceeds `h·sqrt(T·ln(2/η)/2)` with probability at
//! most η (Hoeffding). [`crate::accountant`] picks h so that this bound stays
//! below `eps_error` and adds `eps_error` to the reported ε. Tail handling
//! is one-sided: loss mass above the support goes to +∞ and mass below it
//! is moved up into the lowest cell.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{domain, PrivacyError, Result};
use crate::normal;

/// Below this length the direct O(nm) convolution beats the FFT.
const DIRECT_CONVOLUTION_LIMIT: usize = 48;

/// Panels of the composite Gauss–Legendre rule used for the loss mean.
const MEAN_QUADRATURE_PANELS: usize = 512;

const GAUSS_LEGENDRE_8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

/// One direction of a discretized privacy loss distribution.
///
/// Cell `i` carries loss value `origin + i·h`; `truncation_mass` sits at +∞.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPmf {
    pub origin: f64,
    pub masses: Vec<f64>,
    pub truncation_mass: f64,
}

impl LossPmf {
    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.truncation_mass
    }

    /// Hockey-stick divergence E[(1 − e^{ε−L})₊] including the mass at +∞.
    pub fn delta_for_epsilon(&self, spacing: f64, epsilon: f64) -> f64 {
        let mut delta = self.truncation_mass;
        for (i, &p) in self.masses.iter().enumerate().rev() {
            let loss = self.origin + i as f64 * spacing;
            if loss <= epsilon {
                break;
            }
            delta += p * -(epsilon - loss).exp_m1();
        }
        delta
    }

    /// Smallest ε ≥ 0 with δ(ε) ≤ `delta`, solved exactly on the piecewise
    /// closed form `δ(ε) = t + Σ p − e^ε Σ p·e^{−l}` between grid points.
    pub fn epsilon_for_delta(&self, spacing: f64, delta: f64) -> Result<f64> {
        if self.truncation_mass > delta {
            return Err(PrivacyError::DeltaUnreachable {
                delta,
                truncated: self.truncation_mass,
            });
        }
        let t = self.truncation_mass;
        let mut mass_above = 0.0;
        let mut weighted_above = 0.0;
        for (i, &p) in self.masses.iter().enumerate().rev() {
            let loss = self.origin + i as f64 * spacing;
            if loss <= 0.0 {
                break;
            }
            let delta_here = t + mass_above - loss.exp() * weighted_above;
            if delta_here > delta {
                let eps = ((t + mass_above - delta) / weighted_above).ln();
                return Ok(eps.max(loss));
            }
            mass_above += p;
            weighted_above += p * (-loss).exp();
        }
        if t + mass_above - weighted_above <= delta || weighted_above == 0.0 {
            return Ok(0.0);
        }
        Ok(((t + mass_above - delta) / weighted_above).ln().max(0.0))
    }

    fn convolve(&self, other: &Self, spacing: f64, tail_bound: f64, limit: usize) -> Result<Self> {
        let required = self.masses.len() + other.masses.len() - 1;
        if required > limit {
            return Err(PrivacyError::GridOverflow { required, limit });
        }
        let same = std::ptr::eq(self, other);
        let mut masses = convolve_masses(&self.masses, &other.masses, same);
        for m in masses.iter_mut() {
            if *m < 0.0 {
                *m = 0.0;
            }
        }
        let mut out = Self {
            origin: self.origin + other.origin,
            masses,
            truncation_mass: self.truncation_mass + other.truncation_mass
                - self.truncation_mass * other.truncation_mass,
        };
        out.truncate_tails(spacing, tail_bound);
        Ok(out)
    }

    /// Moves the upper tail to +∞ and folds the lower tail into the lowest
    /// kept cell.
    fn truncate_tails(&mut self, spacing: f64, tail_bound: f64) {
        let n = self.masses.len();
        let mut cum = 0.0;
        let mut first = 0;
        while first + 1 < n && cum + self.masses[first] <= tail_bound {
            cum += self.masses[first];
            first += 1;
        }
        let mut upper = 0.0;
        let mut last = n - 1;
        while last > first && upper + self.masses[last] <= tail_bound {
            upper += self.masses[last];
            last -= 1;
        }
        if first == 0 && last == n - 1 {
            return;
        }
        let mut kept = self.masses[first..=last].to_vec();
        kept[0] += cum;
        self.masses = kept;
        self.origin += first as f64 * spacing;
        self.truncation_mass += upper;
    }
}

/// Privacy loss distribution of a subsampled Gaussian mechanism, both
/// directions of the add/remove relation.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLossDistribution {
    grid_spacing: f64,
    tail_bound: f64,
    max_grid_points: usize,
    remove: LossPmf,
    add: LossPmf,
}

impl PrivacyLossDistribution {
    /// Single-step PLD for noise multiplier `sigma` and sampling rate `q`.
    pub fn subsampled_gaussian(
        sigma: f64,
        q: f64,
        grid_spacing: f64,
        tail_bound: f64,
        max_grid_points: usize,
    ) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return domain(format!("sigma must be positive and finite, got {sigma}"));
        }
        if !(q > 0.0 && q <= 1.0) {
            return domain(format!("sampling rate must lie in (0, 1], got {q}"));
        }
        if !(grid_spacing > 0.0) || !(tail_bound > 0.0 && tail_bound < 0.5) {
            return domain("grid spacing must be positive and tail bound in (0, 1/2)");
        }
        let remove = LossModel::new(sigma, q, Direction::Remove).discretize(
            grid_spacing,
            tail_bound,
            max_grid_points,
        )?;
        let add = LossModel::new(sigma, q, Direction::Add).discretize(
            grid_spacing,
            tail_bound,
            max_grid_points,
        )?;
        Ok(Self {
            grid_spacing,
            tail_bound,
            max_grid_points,
            remove,
            add,
        })
    }

    pub fn grid_spacing(&self) -> f64 {
        self.grid_spacing
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// The "remove" direction (P = mixture, Q = N(0, σ²)).
    pub fn remove_branch(&self) -> &LossPmf {
        &self.remove
    }

    /// The "add" direction (P = N(0, σ²), Q = mixture).
    pub fn add_branch(&self) -> &LossPmf {
        &self.add
    }

    /// Total mass of each branch; both are 1 up to rounding.
    pub fn total_masses(&self) -> [f64; 2] {
        [self.remove.total_mass(), self.add.total_mass()]
    }

    /// Composition with a different mechanism on the same grid.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        if (self.grid_spacing - other.grid_spacing).abs() > 1e-15 * self.grid_spacing {
            return domain("cannot compose PLDs with different grid spacings");
        }
        let (h, tb, lim) = (self.grid_spacing, self.tail_bound, self.max_grid_points);
        Ok(Self {
            grid_spacing: h,
            tail_bound: tb,
            max_grid_points: lim,
            remove: self.remove.convolve(&other.remove, h, tb, lim)?,
            add: self.add.convolve(&other.add, h, tb, lim)?,
        })
    }

    /// `steps`-fold self-composition by repeated squaring.
    pub fn self_compose(&self, steps: u64) -> Result<Self> {
        if steps == 0 {
            return domain("number of compositions must be at least 1");
        }
        let mut result: Option<Self> = None;
        let mut base = self.clone();
        let mut remaining = steps;
        loop {
            if remaining & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(acc) => acc.compose(&base)?,
                });
            }
            remaining >>= 1;
            if remaining == 0 {
                break;
            }
            base = base.square()?;
        }
        Ok(result.expect("steps >= 1"))
    }

    fn square(&self) -> Result<Self> {
        let (h, tb, lim) = (self.grid_spacing, self.tail_bound, self.max_grid_points);
        Ok(Self {
            grid_spacing: h,
            tail_bound: tb,
            max_grid_points: lim,
            remove: self.remove.convolve(&self.remove, h, tb, lim)?,
            add: self.add.convolve(&self.add, h, tb, lim)?,
        })
    }

    /// δ(ε) of the discretized distribution, worst case over both directions.
    pub fn delta_for_epsilon(&self, epsilon: f64) -> f64 {
        let h = self.grid_spacing;
        self.remove
            .delta_for_epsilon(h, epsilon)
            .max(self.add.delta_for_epsilon(h, epsilon))
    }

    /// Smallest ε with δ(ε) ≤ `delta` for the discretized distribution.
    pub fn epsilon_for_delta(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return domain(format!("delta must lie in (0, 1), got {delta}"));
        }
        let h = self.grid_spacing;
        Ok(self
            .remove
            .epsilon_for_delta(h, delta)?
            .max(self.add.epsilon_for_delta(h, delta)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Remove,
    Add,
}

/// The privacy loss as an increasing function of a scalar Gaussian-mixture
/// variable v: v = x for the remove direction, v = −x for the add direction.
struct LossModel {
    sigma: f64,
    q: f64,
    direction: Direction,
}

impl LossModel {
    fn new(sigma: f64, q: f64, direction: Direction) -> Self {
        Self {
            sigma,
            q,
            direction,
        }
    }

    /// ln(1 − q + q·e^t)
    fn log_mixture(&self, t: f64) -> f64 {
        if self.q == 1.0 {
            return t;
        }
        let a = (-self.q).ln_1p();
        let b = self.q.ln() + t;
        let hi = a.max(b);
        hi + (-(a - b).abs()).exp().ln_1p()
    }

    fn loss(&self, v: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        match self.direction {
            Direction::Remove => self.log_mixture((2.0 * v - 1.0) / (2.0 * s2)),
            Direction::Add => -self.log_mixture((-2.0 * v - 1.0) / (2.0 * s2)),
        }
    }

    /// Inverse of [`Self::loss`]; ±∞ outside the attainable loss range.
    fn v_at_loss(&self, loss: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        match self.direction {
            Direction::Remove => {
                let inner = loss.exp_m1() + self.q;
                if inner <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    s2 * (inner.ln() - self.q.ln()) + 0.5
                }
            }
            Direction::Add => {
                let inner = (-loss).exp_m1() + self.q;
                if inner <= 0.0 {
                    f64::INFINITY
                } else {
                    -(s2 * (inner.ln() - self.q.ln()) + 0.5)
                }
            }
        }
    }

    fn cdf(&self, v: f64) -> f64 {
        let s = self.sigma;
        match self.direction {
            Direction::Remove => {
                (1.0 - self.q) * normal::cdf(v / s) + self.q * normal::cdf((v - 1.0) / s)
            }
            Direction::Add => normal::cdf(v / s),
        }
    }

    fn sf(&self, v: f64) -> f64 {
        let s = self.sigma;
        match self.direction {
            Direction::Remove => {
                (1.0 - self.q) * normal::sf(v / s) + self.q * normal::sf((v - 1.0) / s)
            }
            Direction::Add => normal::sf(v / s),
        }
    }

    fn pdf(&self, v: f64) -> f64 {
        let s = self.sigma;
        match self.direction {
            Direction::Remove => {
                ((1.0 - self.q) * normal::pdf(v / s) + self.q * normal::pdf((v - 1.0) / s)) / s
            }
            Direction::Add => normal::pdf(v / s) / s,
        }
    }

    /// Mass of (a, b], taken from whichever tail keeps precision.
    fn interval_mass(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let cb = self.cdf(b);
        if cb < 0.5 {
            (cb - self.cdf(a)).max(0.0)
        } else {
            (self.sf(a) - self.sf(b)).max(0.0)
        }
    }

    fn support(&self, z: f64) -> (f64, f64) {
        let s = self.sigma;
        match self.direction {
            Direction::Remove => (-s * z, 1.0 + s * z),
            Direction::Add => (-s * z, s * z),
        }
    }

    /// Mean of the loss with v clamped below at `lo`, over v ≤ `hi`.
    fn clamped_mean(&self, lo: f64, hi: f64) -> f64 {
        let mut acc = self.loss(lo) * self.cdf(lo);
        let width = (hi - lo) / MEAN_QUADRATURE_PANELS as f64;
        for panel in 0..MEAN_QUADRATURE_PANELS {
            let mid = lo + (panel as f64 + 0.5) * width;
            let half = 0.5 * width;
            for &(node, weight) in GAUSS_LEGENDRE_8.iter() {
                for v in [mid - half * node, mid + half * node] {
                    acc += half * weight * self.loss(v) * self.pdf(v);
                }
            }
        }
        acc
    }

    fn discretize(&self, h: f64, tail_bound: f64, limit: usize) -> Result<LossPmf> {
        let z = normal::sf_inverse(tail_bound);
        let (v_lo, v_hi) = self.support(z);
        let l_lo = self.loss(v_lo);
        let l_hi = self.loss(v_hi);
        let k_lo = (l_lo / h - 0.5).ceil();
        let k_hi = (l_hi / h - 0.5).ceil().max(k_lo);
        let required = (k_hi - k_lo) as usize + 1;
        if required > limit {
            return Err(PrivacyError::GridOverflow { required, limit });
        }
        let mut masses = Vec::with_capacity(required);
        let mut prev_v = f64::NEG_INFINITY;
        let mut centred_sum = 0.0;
        for i in 0..required {
            let k = k_lo + i as f64;
            let v_up = if i + 1 == required {
                v_hi
            } else {
                self.v_at_loss((k + 0.5) * h).clamp(v_lo, v_hi).max(prev_v)
            };
            let p = if prev_v == f64::NEG_INFINITY {
                self.cdf(v_up)
            } else {
                self.interval_mass(prev_v, v_up)
            };
            masses.push(p);
            centred_sum += p * k * h;
            prev_v = v_up;
        }
        let finite_mass: f64 = masses.iter().sum();
        let mean = self.clamped_mean(v_lo, v_hi);
        let shift = if finite_mass > 0.0 {
            (mean - centred_sum) / finite_mass
        } else {
            0.0
        };
        debug_assert!(shift.abs() <= 0.5 * h * (1.0 + 1e-6) + 1e-12, "shift {shift} h {h}");
        Ok(LossPmf {
            origin: k_lo * h + shift,
            masses,
            truncation_mass: self.sf(v_hi),
        })
    }
}

fn convolve_masses(a: &[f64], b: &[f64], same: bool) -> Vec<f64> {
    let len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= DIRECT_CONVOLUTION_LIMIT {
        let mut out = vec![0.0; len];
        for (i, &x) in a.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let n = len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward: Arc<dyn Fft<f64>> = planner.plan_fft_forward(n);
    let inverse: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(n);

    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    if same {
        for (slot, &x) in buf.iter_mut().zip(a) {
            slot.re = x;
        }
        forward.process(&mut buf);
        for v in buf.iter_mut() {
            *v = *v * *v;
        }
    } else {
        // Pack both real inputs into one complex transform.
        for (i, slot) in buf.iter_mut().enumerate() {
            slot.re = a.get(i).copied().unwrap_or(0.0);
            slot.im = b.get(i).copied().unwrap_or(0.0);
        }
        forward.process(&mut buf);
        let packed = buf.clone();
        for k in 0..n {
            let zk = packed[k];
            let zc = packed[(n - k) % n].conj();
            let fa = (zk + zc) * 0.5;
            let fb = (zk - zc) * Complex64::new(0.0, -0.5);
            buf[k] = fa * fb;
        }
    }
    inverse.process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().take(len).map(|c| c.re * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::gdp_delta_unchecked;

    const TB: f64 = 1e-12;
    const LIMIT: usize = 1 << 24;

    #[test]
    fn fft_convolution_matches_direct() {
        let a: Vec<f64> = (0..300).map(|i| ((i * 7919) % 101) as f64 / 101.0).collect();
        let b: Vec<f64> = (0..200).map(|i| ((i * 104_729) % 37) as f64 / 37.0).collect();
        let fast = convolve_masses(&a, &b, false);
        let mut slow = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                slow[i + j] += x * y;
            }
        }
        for (f, s) in fast.iter().zip(&slow) {
            assert!((f - s).abs() < 1e-10);
        }
        let sq = convolve_masses(&a, &a, true);
        let sq2 = convolve_masses(&a, &a.clone(), false);
        for (x, y) in sq.iter().zip(&sq2) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn masses_sum_to_one_and_mean_is_preserved() {
        for (sigma, q) in [(1.0, 1.0), (9.3, 0.08192), (2.6, 0.08192), (0.8, 0.3)] {
            let pld = PrivacyLossDistribution::subsampled_gaussian(sigma, q, 1e-4, TB, LIMIT)
                .unwrap();
            for m in pld.total_masses() {
                assert!((m - 1.0).abs() < 1e-9, "sigma={sigma} q={q} mass={m}");
            }
            let pmf = pld.remove_branch();
            assert!(pmf.masses.iter().all(|&p| p >= 0.0 && p.is_finite()));
        }
    }

    #[test]
    fn gaussian_loss_mean_matches_closed_form() {
        // q = 1: L ~ N(1/(2σ²), 1/σ²) in both directions.
        let sigma: f64 = 2.0;
        let pld = PrivacyLossDistribution::subsampled_gaussian(sigma, 1.0, 1e-3, TB, LIMIT)
            .unwrap();
        for pmf in [pld.remove_branch(), pld.add_branch()] {
            let mean: f64 = pmf
                .masses
                .iter()
                .enumerate()
                .map(|(i, p)| p * (pmf.origin + i as f64 * 1e-3))
                .sum();
            assert!((mean - 1.0 / (2.0 * sigma * sigma)).abs() < 1e-9, "{mean}");
        }
    }

    #[test]
    fn single_step_gaussian_delta_tracks_analytic_curve() {
        let pld = PrivacyLossDistribution::subsampled_gaussian(1.0, 1.0, 1e-4, TB, LIMIT).unwrap();
        for eps in [0.0, 0.5, 1.0, 2.0] {
            let d = pld.delta_for_epsilon(eps);
            let lo = gdp_delta_unchecked(1.0, eps + 1e-3);
            let hi = gdp_delta_unchecked(1.0, (eps - 1e-3).max(0.0));
            assert!(d >= lo && d <= hi, "eps={eps}: {d} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn epsilon_for_delta_inverts_delta_for_epsilon() {
        let pld = PrivacyLossDistribution::subsampled_gaussian(1.5, 0.2, 1e-4, TB, LIMIT)
            .unwrap()
            .self_compose(20)
            .unwrap();
        for delta in [1e-2, 1e-4, 1e-6] {
            let eps = pld.epsilon_for_delta(delta).unwrap();
            let back = pld.delta_for_epsilon(eps);
            assert!((back - delta).abs() < 1e-9 * delta.max(1e-3), "{back} vs {delta}");
        }
    }

    #[test]
    fn unreachable_delta_is_reported() {
        let pld = PrivacyLossDistribution::subsampled_gaussian(1.0, 1.0, 1e-3, 1e-3, LIMIT).unwrap();
        assert!(matches!(
            pld.epsilon_for_delta(1e-6),
            Err(PrivacyError::DeltaUnreachable { .. })
        ));
    }

    #[test]
    fn grid_limit_is_enforced() {
        let err = PrivacyLossDistribution::subsampled_gaussian(0.5, 1.0, 1e-4, TB, 1000);
        assert!(matches!(err, Err(PrivacyError::GridOverflow { .. })));
    }

    #[test]
    fn repeated_squaring_is_associative() {
        let pld = PrivacyLossDistribution::subsampled_gaussian(2.0, 0.1, 1e-3, TB, LIMIT).unwrap();
        let four = pld.self_compose(4).unwrap();
        let two_two = pld.self_compose(2).unwrap().self_compose(2).unwrap();
        let direct = pld.compose(&pld).unwrap().compose(&pld).unwrap().compose(&pld).unwrap();
        // Tail truncation happens at different stages, so compare the curves.
        for other in [&two_two, &direct] {
            for eps in [0.0, 0.1, 0.3, 0.6, 1.0] {
                let (x, y) = (four.delta_for_epsilon(eps), other.delta_for_epsilon(eps));
                assert!((x - y).abs() < 1e-10, "eps={eps}: {x} vs {y}");
            }
        }
        assert_eq!(pld.self_compose(1).unwrap(), pld);
    }
}
