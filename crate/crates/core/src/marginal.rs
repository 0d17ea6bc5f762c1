//! Exact marginals, their flattening, and the distances between them.
//!
//! A marginal over attributes `attrs = [a, b, c]` (strictly ascending) is a
//! dense count vector flattened row-major with the last attribute varying
//! fastest: cell `(x, y, z)` sits at `(x * card_b + y) * card_c + z`.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Default number of sampled three-way marginals for [`query_error`].
pub const DEFAULT_QUERIES: usize = 300;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MarginalSpec {
    attrs: Vec<usize>,
    cards: Vec<usize>,
}

impl MarginalSpec {
    /// Build a spec from attribute indices and the full per-attribute
    /// cardinality list of the domain.
    pub fn new(attrs: &[usize], domain_cards: &[usize]) -> Result<Self> {
        let ok = !attrs.is_empty()
            && attrs.len() <= 3
            && attrs.windows(2).all(|w| w[0] < w[1])
            && attrs.iter().all(|&a| a < domain_cards.len());
        if !ok {
            return Err(Error::SpecOutOfRange(attrs.to_vec()));
        }
        Ok(Self {
            attrs: attrs.to_vec(),
            cards: attrs.iter().map(|&a| domain_cards[a]).collect(),
        })
    }

    pub fn attrs(&self) -> &[usize] {
        &self.attrs
    }

    /// Cardinalities of the spec's attributes, in attribute order.
    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn order(&self) -> usize {
        self.attrs.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cards.iter().product()
    }

    pub fn flatten(&self, tuple: &[u32]) -> usize {
        tuple
            .iter()
            .zip(&self.cards)
            .fold(0usize, |acc, (&v, &c)| acc * c + v as usize)
    }

    pub fn unflatten(&self, mut index: usize) -> Vec<u32> {
        let mut out = vec![0u32; self.cards.len()];
        for (slot, &c) in out.iter_mut().zip(&self.cards).rev() {
            *slot = (index % c) as u32;
            index /= c;
        }
        out
    }

    /// Flat cell index of a full dataset row projected onto this spec.
    #[inline]
    pub fn cell_of_row(&self, row: &[u32]) -> usize {
        self.attrs
            .iter()
            .zip(&self.cards)
            .fold(0usize, |acc, (&a, &c)| acc * c + row[a] as usize)
    }
}

/// All `C(d, 2)` two-way specs in lexicographic order.
pub fn all_pairs(domain_cards: &[usize]) -> Vec<MarginalSpec> {
    let d = domain_cards.len();
    let mut out = Vec::with_capacity(d * d.saturating_sub(1) / 2);
    for i in 0..d {
        for j in i + 1..d {
            out.push(MarginalSpec::new(&[i, j], domain_cards).expect("valid pair"));
        }
    }
    out
}

/// All `C(d, 3)` three-way specs in lexicographic order.
pub fn all_triples(domain_cards: &[usize]) -> Vec<MarginalSpec> {
    let d = domain_cards.len();
    let mut out = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            for k in j + 1..d {
                out.push(MarginalSpec::new(&[i, j, k], domain_cards).expect("valid triple"));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub spec: MarginalSpec,
    pub counts: Vec<f64>,
}

/// Serialized form of a marginal: `{"attrs": [...], "counts": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRecord {
    pub attrs: Vec<usize>,
    pub counts: Vec<f64>,
}

impl Marginal {
    pub fn zeros(spec: MarginalSpec) -> Self {
        let n = spec.n_cells();
        Self {
            spec,
            counts: vec![0.0; n],
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn to_record(&self) -> MarginalRecord {
        MarginalRecord {
            attrs: self.spec.attrs.clone(),
            counts: self.counts.clone(),
        }
    }

    pub fn from_record(rec: &MarginalRecord, domain_cards: &[usize]) -> Result<Self> {
        let spec = MarginalSpec::new(&rec.attrs, domain_cards)?;
        if rec.counts.len() != spec.n_cells() {
            return Err(Error::SpecMismatch);
        }
        Ok(Self {
            spec,
            counts: rec.counts.clone(),
        })
    }

    /// Sum out every attribute not in `keep` (which must be a subset of the
    /// spec's attributes).
    pub fn project(&self, keep: &[usize], domain_cards: &[usize]) -> Result<Marginal> {
        let target = MarginalSpec::new(keep, domain_cards)?;
        let pos: Vec<usize> = keep
            .iter()
            .map(|a| self.spec.attrs.iter().position(|x| x == a).ok_or(Error::SpecMismatch))
            .collect::<Result<_>>()?;
        let mut out = Marginal::zeros(target);
        let mut sub = vec![0u32; keep.len()];
        for (cell, &c) in self.counts.iter().enumerate() {
            let tuple = self.spec.unflatten(cell);
            for (s, &p) in sub.iter_mut().zip(&pos) {
                *s = tuple[p];
            }
            let t = out.spec.flatten(&sub);
            out.counts[t] += c;
        }
        Ok(out)
    }

    /// Counts clipped at zero and normalized to sum to one.
    pub fn normalized(&self) -> Result<Vec<f64>> {
        let clipped: Vec<f64> = self.counts.iter().map(|&c| c.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroMass);
        }
        Ok(clipped.into_iter().map(|c| c / total).collect())
    }
}

pub fn compute_marginal(ds: &Dataset, spec: &MarginalSpec) -> Result<Marginal> {
    let cards = ds.cards();
    if spec.attrs.iter().any(|&a| a >= cards.len())
        || spec.attrs.iter().zip(&spec.cards).any(|(&a, &c)| cards[a] != c)
    {
        return Err(Error::SpecOutOfRange(spec.attrs.clone()));
    }
    let mut counts = vec![0u64; spec.n_cells()];
    for row in ds.rows() {
        counts[spec.cell_of_row(row)] += 1;
    }
    Ok(Marginal {
        spec: spec.clone(),
        counts: counts.into_iter().map(|c| c as f64).collect(),
    })
}

fn same_spec(a: &Marginal, b: &Marginal) -> Result<()> {
    if a.spec != b.spec || a.counts.len() != b.counts.len() {
        Err(Error::SpecMismatch)
    } else {
        Ok(())
    }
}

pub fn l1_distance(a: &Marginal, b: &Marginal) -> Result<f64> {
    same_spec(a, b)?;
    Ok(a.counts.iter().zip(&b.counts).map(|(x, y)| (x - y).abs()).sum())
}

pub fn frobenius_sq(a: &Marginal, b: &Marginal) -> Result<f64> {
    same_spec(a, b)?;
    Ok(a.counts.iter().zip(&b.counts).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Total variation distance between the clipped, renormalized count vectors.
pub fn tvd(a: &Marginal, b: &Marginal) -> Result<f64> {
    same_spec(a, b)?;
    let (p, q) = (a.normalized()?, b.normalized()?);
    Ok(0.5 * p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

fn check_same_domain(real: &Dataset, synth: &Dataset) -> Result<()> {
    if real.cards() != synth.cards() {
        Err(Error::DomainMismatch)
    } else {
        Ok(())
    }
}

/// Mean TVD over all two-way marginals.
pub fn fidelity_error(real: &Dataset, synth: &Dataset) -> Result<f64> {
    check_same_domain(real, synth)?;
    if real.d() < 2 {
        return Err(Error::TooFewAttributes { needed: 2, got: real.d() });
    }
    let pairs = all_pairs(real.cards());
    let mut total = 0.0;
    for spec in &pairs {
        total += tvd(&compute_marginal(real, spec)?, &compute_marginal(synth, spec)?)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Mean absolute normalized-frequency difference over sampled three-way
/// marginals. Specs are drawn without replacement when `C(d, 3)` allows it.
pub fn query_error(real: &Dataset, synth: &Dataset, n_queries: usize, seed: u64) -> Result<f64> {
    check_same_domain(real, synth)?;
    if real.d() < 3 {
        return Err(Error::TooFewAttributes { needed: 3, got: real.d() });
    }
    if n_queries == 0 {
        return Err(Error::InvalidConfig("n_queries must be positive".into()));
    }
    let triples = all_triples(real.cards());
    let mut rng = rng::stream(seed, Purpose::Queries);
    let chosen: Vec<usize> = if triples.len() >= n_queries {
        index::sample(&mut rng, triples.len(), n_queries).into_vec()
    } else {
        (0..n_queries).map(|_| rng.random_range(0..triples.len())).collect()
    };
    let mut total = 0.0;
    for &i in &chosen {
        let spec = &triples[i];
        let p = compute_marginal(real, spec)?.normalized()?;
        let q = compute_marginal(synth, spec)?.normalized()?;
        let diff: f64 = p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum();
        total += diff / spec.n_cells() as f64;
    }
    Ok(total / chosen.len() as f64)
}
