//! Fitting-error diagnostics for a trained generator.
//!
//! * [`selected_lower_bound`]: a soft batch of `b` rows can only produce
//!   two-way estimates of rank at most `b`, so the squared error on a
//!   measured marginal is at least its tail singular-value energy beyond `b`.
//! * [`selected_upper_bound`]: high-probability bound on the squared error of
//!   measured marginals from the combined noisy measurements and chi-square
//!   quantiles.
//! * [`unselected_bound`]: high-probability bound on the L1 error of never
//!   measured marginals, derived from the exponential mechanism's utility
//!   guarantee in the final selection round.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::generator::{soft_marginal, GeneratorModel};
use crate::marginal::{all_pairs, compute_marginal, frobenius_sq, l1_distance, Marginal, MarginalSpec};
use crate::math;
use crate::synthesis::{Measurement, SelectionTrace};

/// Thin SVD `A = U diag(s) V^T` of an `m x n` row-major matrix, singular
/// values sorted in descending order. `U` is `m x r`, `V` is `n x r` with
/// `r = min(m, n)`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub rows: usize,
    pub cols: usize,
    pub u: Vec<f64>,
    pub singular_values: Vec<f64>,
    pub v: Vec<f64>,
}

/// One-sided Jacobi SVD. Orthogonalizes the columns of `A` (or of `A^T` when
/// `A` is wide) by plane rotations until every pair is orthogonal to
/// working precision.
pub fn svd(a: &[f64], rows: usize, cols: usize) -> Svd {
    assert_eq!(a.len(), rows * cols);
    if rows < cols {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        let s = svd(&t, cols, rows);
        return Svd {
            rows,
            cols,
            u: s.v,
            singular_values: s.singular_values,
            v: s.u,
        };
    }
    let (m, n) = (rows, cols);
    // column-major working copy: column j is w[j*m..(j+1)*m]
    let mut w = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            w[j * m + i] = a[i * n + j];
        }
    }
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let (x, y) = (w[p * m + i], w[q * m + i]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= 1e-15 * math::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + math::sqrt(1.0 + zeta * zeta));
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / math::sqrt(1.0 + t * t);
                let s = c * t;
                for i in 0..m {
                    let (x, y) = (w[p * m + i], w[q * m + i]);
                    w[p * m + i] = c * x - s * y;
                    w[q * m + i] = s * x + c * y;
                }
                // V stored row-major n x n; rotate columns p and q
                for i in 0..n {
                    let (x, y) = (v[i * n + p], v[i * n + q]);
                    v[i * n + p] = c * x - s * y;
                    v[i * n + q] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n)
        .map(|j| math::sqrt(w[j * m..(j + 1) * m].iter().map(|x| x * x).sum()))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let mut u = vec![0.0; m * n];
    let mut vs = vec![0.0; n * n];
    let mut s = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        s.push(norms[j]);
        if norms[j] > 0.0 {
            for i in 0..m {
                u[i * n + k] = w[j * m + i] / norms[j];
            }
        }
        for i in 0..n {
            vs[i * n + k] = v[i * n + j];
        }
    }
    Svd {
        rows,
        cols,
        u,
        singular_values: s,
        v: vs,
    }
}

pub fn singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    svd(a, rows, cols).singular_values
}

/// Squared singular-value energy beyond index `b`.
pub fn tail_energy(singular_values: &[f64], b: usize) -> f64 {
    singular_values.iter().skip(b).fold(0.0, |acc, s| acc + s * s)
}

/// Lower bound on `sum_i ||M_i - M_hat_i||_F^2` for any generator with batch
/// size `b`. One-way marginals contribute nothing.
pub fn selected_lower_bound(exact: &[Marginal], b: usize) -> f64 {
    exact
        .iter()
        .filter(|m| m.spec.order() == 2)
        .map(|m| {
            let (r, c) = (m.spec.cards()[0], m.spec.cards()[1]);
            tail_energy(&singular_values(&m.counts, r, c), b)
        })
        .fold(0.0, |acc, x| acc + x)
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * math::ln(x) - x - math::ln_gamma(a);
    if x < a + 1.0 {
        // series: sum x^n / (a (a+1) ... (a+n))
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum * math::exp(log_prefix)).min(1.0)
    } else {
        // continued fraction for Q(a, x), modified Lentz
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (1.0 - math::exp(log_prefix) * h).max(0.0)
    }
}

pub fn chi_square_cdf(dof: f64, x: f64) -> f64 {
    regularized_gamma_p(0.5 * dof, 0.5 * x)
}

/// Quantile of the chi-square distribution by bisection, to `1e-8` in `x`.
pub fn chi_square_inv(dof: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidDelta(p));
    }
    let mut hi = f64::max(1.0, 2.0 * dof);
    while chi_square_cdf(dof, hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 * f64::max(1.0, hi) {
        let mid = 0.5 * (lo + hi);
        if chi_square_cdf(dof, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalBound {
    pub attrs: Vec<usize>,
    pub observed_error: f64,
    pub bound: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub per_marginal: Vec<MarginalBound>,
    pub total_observed: f64,
    pub total_bound: f64,
    /// Failure probability assigned to each marginal.
    pub deltas: Vec<f64>,
}

impl BoundReport {
    fn from_parts(per_marginal: Vec<MarginalBound>, delta: f64) -> Self {
        let total_observed = per_marginal.iter().fold(0.0, |acc, m| acc + m.observed_error);
        let total_bound = per_marginal.iter().fold(0.0, |acc, m| acc + m.bound);
        let deltas = vec![delta; per_marginal.len()];
        Self {
            per_marginal,
            total_observed,
            total_bound,
            deltas,
        }
    }

    pub fn holds(&self) -> bool {
        self.total_observed <= self.total_bound
    }
}

/// Deterministic rank bound alongside the observed squared error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankBoundReport {
    pub batch_size: usize,
    pub observed_loss: f64,
    pub lower_bound: f64,
    pub gap: f64,
}

/// Squared error of the model's soft estimates against exact marginals.
pub fn observed_squared_error(model: &GeneratorModel, exact: &[Marginal], scale: f64) -> Result<f64> {
    let batch = model.forward();
    exact
        .iter()
        .map(|m| frobenius_sq(&soft_marginal(&batch, &m.spec, scale)?, m))
        .sum()
}

/// Distinct two-way specs among the measurements, in first-seen order.
fn measured_pairs(measurements: &[Measurement]) -> Vec<MarginalSpec> {
    let mut out: Vec<MarginalSpec> = Vec::new();
    for m in measurements.iter().filter(|m| m.spec().order() == 2) {
        if !out.contains(m.spec()) {
            out.push(m.spec().clone());
        }
    }
    out
}

pub fn rank_bound_report(
    model: &GeneratorModel,
    measurements: &[Measurement],
    ds: &Dataset,
    scale: f64,
) -> Result<RankBoundReport> {
    let exact: Vec<Marginal> = measured_pairs(measurements)
        .iter()
        .map(|s| compute_marginal(ds, s))
        .collect::<Result<_>>()?;
    let observed_loss = observed_squared_error(model, &exact, scale)?;
    let lower_bound = selected_lower_bound(&exact, model.batch_size);
    Ok(RankBoundReport {
        batch_size: model.batch_size,
        observed_loss,
        lower_bound,
        gap: observed_loss - lower_bound,
    })
}

/// Inverse-variance combination of repeated measurements of one spec:
/// weights `w_j` proportional to `rho_m^j`, summing to one. Returns the
/// combined marginal and its noise scale `sqrt(sum_j w_j^2 / (2 rho_m^j))`.
pub fn combine_measurements(group: &[&Measurement]) -> (Marginal, f64) {
    let total: f64 = group.iter().map(|m| m.rho_m).sum();
    let mut combined = Marginal::zeros(group[0].spec().clone());
    let mut var = 0.0;
    for m in group {
        let w = m.rho_m / total;
        for (c, x) in combined.counts.iter_mut().zip(&m.noisy.counts) {
            *c += w * x;
        }
        var += w * w / (2.0 * m.rho_m);
    }
    (combined, math::sqrt(var))
}

/// High-probability upper bound on the squared error of every measured
/// two-way marginal, each failing with probability at most `delta`.
pub fn selected_upper_bound(
    measurements: &[Measurement],
    model: &GeneratorModel,
    ds: &Dataset,
    scale: f64,
    delta: f64,
) -> Result<BoundReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidDelta(delta));
    }
    let batch = model.forward();
    let mut per = Vec::new();
    for spec in measured_pairs(measurements) {
        let group: Vec<&Measurement> = measurements.iter().filter(|m| *m.spec() == spec).collect();
        let (combined, sigma_bar) = combine_measurements(&group);
        let est = soft_marginal(&batch, &spec, scale)?;
        let exact = compute_marginal(ds, &spec)?;
        let quantile = chi_square_inv(spec.n_cells() as f64, 1.0 - delta)?;
        let bound = 2.0 * (frobenius_sq(&combined, &est)? + sigma_bar * sigma_bar * quantile);
        let observed = frobenius_sq(&exact, &est)?;
        per.push(MarginalBound {
            attrs: spec.attrs().to_vec(),
            observed_error: observed,
            bound,
            slack: bound - observed,
        });
    }
    Ok(BoundReport::from_parts(per, delta))
}

/// High-probability bound on the L1 error of every candidate two-way
/// marginal that was never measured.
///
/// `model_before_final` is the generator that scored the candidates in the
/// last selection round.
pub fn unselected_bound(
    trace: &SelectionTrace,
    model: &GeneratorModel,
    model_before_final: &GeneratorModel,
    ds: &Dataset,
    delta: f64,
) -> Result<BoundReport> {
    if !(delta > 0.0) {
        return Err(Error::InvalidDelta(delta));
    }
    let last = trace.rounds.last().ok_or(Error::NoRounds)?;
    let cards = ds.cards();
    let scale = trace.scale;
    let r_all = trace.r_weights();
    let mut r_of: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut candidates = Vec::new();
    for (spec, &r) in all_pairs(cards).into_iter().zip(&r_all) {
        if spec.n_cells() <= trace.config.max_cells {
            r_of.insert(spec.attrs().to_vec(), r);
            candidates.push(spec);
        }
    }
    let measured = trace.measurements()?;
    let theta = MarginalSpec::new(&last.attrs, cards)?;
    let r_theta = r_of[&last.attrs];
    let rho_s = last.rho_s;
    let batch_now = model.forward();
    let batch_prev = model_before_final.forward();
    let theta_err = l1_distance(
        &compute_marginal(ds, &theta)?,
        &soft_marginal(&batch_prev, &theta, scale)?,
    )?;
    let log_term = math::ln(trace.n_candidates as f64 / delta);
    let n_theta = theta.n_cells() as f64;

    let mut per = Vec::new();
    for spec in candidates.iter().filter(|s| !measured.iter().any(|m| m.spec() == *s)) {
        let r_i = r_of[spec.attrs()];
        let n_i = spec.n_cells() as f64;
        let b_ik = r_theta / r_i * theta_err
            + (n_i * r_i - n_theta * r_theta) / (r_i * math::sqrt(math::PI * rho_s))
            + trace.delta_q * log_term / (r_i * math::sqrt(2.0 * rho_s));
        let now = soft_marginal(&batch_now, spec, scale)?;
        let drift = l1_distance(&soft_marginal(&batch_prev, spec, scale)?, &now)?;
        let observed = l1_distance(&compute_marginal(ds, spec)?, &now)?;
        let bound = b_ik + drift;
        per.push(MarginalBound {
            attrs: spec.attrs().to_vec(),
            observed_error: observed,
            bound,
            slack: bound - observed,
        });
    }
    Ok(BoundReport::from_parts(per, delta))
}
