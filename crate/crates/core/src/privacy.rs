//! zCDP accounting and the two mechanisms the synthesizer uses.
//!
//! The [`Accountant`] is a privacy filter: it accepts adaptively chosen
//! spends as long as the running total stays within the budget, and refuses
//! anything beyond it. Marginal count vectors have L2 sensitivity 1 under
//! add/remove neighbors, so the Gaussian mechanism with `sigma = 1/sqrt(2 rho)`
//! is `rho`-zCDP. The exponential mechanism run with `epsilon` is
//! `epsilon^2 / 8`-zCDP.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Slack allowed by the accountant's hard stop.
pub const BUDGET_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub label: String,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accountant {
    rho_budget: f64,
    rho_used: f64,
    ledger: Vec<LedgerEntry>,
}

impl Accountant {
    pub fn new(rho_budget: f64) -> Result<Self> {
        if !(rho_budget >= 0.0) || !rho_budget.is_finite() {
            return Err(Error::InvalidRho(rho_budget));
        }
        Ok(Self {
            rho_budget,
            rho_used: 0.0,
            ledger: Vec::new(),
        })
    }

    pub fn budget(&self) -> f64 {
        self.rho_budget
    }

    pub fn used(&self) -> f64 {
        self.rho_used
    }

    pub fn remaining(&self) -> f64 {
        (self.rho_budget - self.rho_used).max(0.0)
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    /// Whether `rho` more could be spent without tripping the hard stop.
    pub fn can_afford(&self, rho: f64) -> bool {
        self.rho_used + rho <= self.rho_budget + BUDGET_SLACK
    }

    pub fn spend(&mut self, rho: f64, label: impl Into<String>) -> Result<()> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidRho(rho));
        }
        if !self.can_afford(rho) {
            return Err(Error::InsufficientBudget {
                used: self.rho_used,
                requested: rho,
                budget: self.rho_budget,
            });
        }
        self.rho_used += rho;
        self.ledger.push(LedgerEntry {
            label: label.into(),
            rho,
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub rho: f64,
    pub sigma: f64,
}

impl NoiseParams {
    pub fn from_rho(rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidRho(rho));
        }
        Ok(Self {
            rho,
            sigma: 1.0 / math::sqrt(2.0 * rho),
        })
    }
}

/// Add i.i.d. `N(0, 1/(2 rho))` noise to every count.
pub fn gaussian_mechanism<R: Rng + ?Sized>(counts: &[f64], rho: f64, rng: &mut R) -> Result<Vec<f64>> {
    let sigma = NoiseParams::from_rho(rho)?.sigma;
    Ok(counts
        .iter()
        .map(|&c| {
            let z: f64 = rng.sample(StandardNormal);
            c + sigma * z
        })
        .collect())
}

/// Sampling probabilities of the exponential mechanism.
pub fn exponential_probabilities(scores: &[f64], delta_q: f64, rho_s: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if !(delta_q > 0.0) {
        return Err(Error::InvalidConfig("score sensitivity must be positive".into()));
    }
    if !(rho_s > 0.0) || !rho_s.is_finite() {
        return Err(Error::InvalidRho(rho_s));
    }
    let epsilon = math::sqrt(8.0 * rho_s);
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores
        .iter()
        .map(|&q| math::exp(epsilon * (q - top) / (2.0 * delta_q)))
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Select an index with probability proportional to
/// `exp(epsilon * q / (2 delta_q))`, `epsilon = sqrt(8 rho_s)`.
pub fn exponential_mechanism<R: Rng + ?Sized>(
    scores: &[f64],
    delta_q: f64,
    rho_s: f64,
    rng: &mut R,
) -> Result<usize> {
    let probs = exponential_probabilities(scores, delta_q, rho_s)?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // u landed in the rounding gap above the cumulative sum
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(0))
}

/// `ln delta` achieved at Renyi order `alpha` when converting `rho`-zCDP to
/// `(epsilon, delta)`-DP.
fn log_delta_at(rho: f64, epsilon: f64, alpha: f64) -> f64 {
    (alpha - 1.0) * (alpha * rho - epsilon) + alpha * math::ln_1p(-1.0 / alpha) - math::ln(alpha - 1.0)
}

/// `min over alpha > 1` of [`log_delta_at`]: log-spaced grid over `alpha - 1`,
/// then golden-section refinement around the best grid point.
fn min_log_delta(rho: f64, epsilon: f64) -> f64 {
    const GRID: usize = 400;
    let alpha_max = f64::max(64.0, 2.0 * (epsilon + rho) / rho + 2.0);
    let (lo, hi) = (math::ln(1e-6), math::ln(alpha_max - 1.0));
    let at = |i: usize| 1.0 + math::exp(lo + (hi - lo) * i as f64 / (GRID - 1) as f64);
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..GRID {
        let v = log_delta_at(rho, epsilon, at(i));
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    let (mut a, mut b) = (at(best.saturating_sub(1)), at((best + 1).min(GRID - 1)));
    let f = |x: f64| log_delta_at(rho, epsilon, x);
    let g = 0.5 * (math::sqrt(5.0) - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if (b - a).abs() < 1e-12 * b {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    best_val.min(fc).min(fd)
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidDelta(delta))
    }
}

/// Smallest `epsilon` such that `rho`-zCDP implies `(epsilon, delta)`-DP
/// under the Renyi-order conversion bound, to within `1e-9`.
pub fn zcdp_to_dp_epsilon(rho: f64, delta: f64) -> Result<f64> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidRho(rho));
    }
    check_delta(delta)?;
    let target = math::ln(delta);
    let ok = |eps: f64| min_log_delta(rho, eps) <= target;
    let spread = math::sqrt(rho * math::ln(1.0 / delta));
    let mut hi = rho + 4.0 * spread;
    while !ok(hi) {
        hi *= 2.0;
    }
    let mut lo = rho;
    if ok(lo) {
        lo = 0.0;
    }
    while hi - lo > 1e-10 * f64::max(1.0, hi) {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Largest `rho` whose [`zcdp_to_dp_epsilon`] does not exceed `epsilon`.
pub fn dp_to_zcdp_rho(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    check_delta(delta)?;
    let (mut lo, mut hi) = (0.0, epsilon);
    while hi - lo > 1e-12 * f64::max(1.0, hi) {
        let mid = 0.5 * (lo + hi);
        if zcdp_to_dp_epsilon(mid, delta)? <= epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
