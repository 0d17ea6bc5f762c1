//! Correlated Gaussian benchmark tables.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::{AttributeMeta, Column, Domain, RawTable};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, Purpose};

/// `d x d` matrix (row-major) with unit diagonal and `corr` elsewhere.
pub fn equicorrelation(d: usize, corr: f64) -> Vec<f64> {
    let mut m = vec![corr; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// Lower-triangular Cholesky factor of a symmetric `n x n` matrix, or `None`
/// if the matrix is not positive definite.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let diag = a[i * n + i] - dot;
                if !(diag > 0.0) {
                    return None;
                }
                l[i * n + i] = math::sqrt(diag);
            } else {
                l[i * n + j] = (a[i * n + j] - dot) / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Draw `n_rows` samples from a zero-mean normal with equicorrelation
/// covariance. Columns are named `x0`, `x1`, ...
pub fn gen_gaussian_dataset(dims: usize, n_rows: usize, corr: f64, seed: u64) -> Result<RawTable> {
    if dims == 0 {
        return Err(Error::InvalidConfig("dims must be at least 1".into()));
    }
    if !(corr > -1.0 && corr < 1.0) {
        return Err(Error::NotPositiveDefinite { dims, corr });
    }
    let l = cholesky(&equicorrelation(dims, corr), dims)
        .ok_or(Error::NotPositiveDefinite { dims, corr })?;
    let mut rng = rng::stream(seed, Purpose::Data);
    let mut cols = vec![Vec::with_capacity(n_rows); dims];
    let mut z = vec![0.0; dims];
    for _ in 0..n_rows {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for (i, col) in cols.iter_mut().enumerate() {
            let x: f64 = (0..=i).map(|k| l[i * dims + k] * z[k]).sum();
            col.push(x);
        }
    }
    let header = (0..dims).map(|i| format!("x{}", i)).collect();
    RawTable::new(header, cols.into_iter().map(Column::Numeric).collect())
}

/// Numeric domain covering every column of an all-numeric table, with the
/// observed range widened by `pad` (a fraction of the range) on both sides.
pub fn numeric_domain_for(raw: &RawTable, bins: usize, pad: f64) -> Result<Domain> {
    let mut attrs = Vec::with_capacity(raw.columns.len());
    for (name, col) in raw.header.iter().zip(&raw.columns) {
        let Column::Numeric(v) = col else {
            return Err(Error::TableMismatch(format!("column {:?} is not numeric", name)));
        };
        let (lo, hi) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        let (lo, hi) = if lo < hi {
            let w = hi - lo;
            (lo - pad * w, hi + pad * w)
        } else if lo.is_finite() {
            (lo - 1.0, lo + 1.0)
        } else {
            (0.0, 1.0)
        };
        attrs.push(AttributeMeta::numeric(String::from(name.as_str()), lo, hi, bins));
    }
    Domain::new(attrs)
}
