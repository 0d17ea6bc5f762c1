//! Attribute metadata, the encoded dataset, and conversion between raw
//! tables and discrete category indices.
//!
//! Every attribute has a finite encoded domain. Categorical attributes map
//! labels to their position in the label list; numeric attributes are cut
//! into equal-width bins between a public `min` and `max`. Attribute order is
//! fixed by the [`Domain`] and defines how marginals are flattened.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::format;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, Purpose};

/// Reserved label that collects categories too rare to keep on their own.
pub const OTHER_LABEL: &str = "__other__";

/// Default minimum count for a category to survive [`rare_category_filter`].
pub const DEFAULT_RARE_THRESHOLD: usize = 10;

/// Default number of equal-width bins for numeric attributes.
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum AttrKind {
    Categorical {
        values: Vec<String>,
    },
    Numeric {
        min: f64,
        max: f64,
        bins: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMeta {
    pub name: String,
    #[serde(flatten)]
    pub kind: AttrKind,
}

impl AttributeMeta {
    pub fn categorical<S: Into<String>>(name: S, labels: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: AttrKind::Categorical { values: labels },
        }
    }

    pub fn numeric<S: Into<String>>(name: S, min: f64, max: f64, bins: usize) -> Self {
        Self {
            name: name.into(),
            kind: AttrKind::Numeric { min, max, bins },
        }
    }

    /// Size of the encoded value space of this attribute.
    pub fn cardinality(&self) -> usize {
        match &self.kind {
            AttrKind::Categorical { values } => values.len(),
            AttrKind::Numeric { bins, .. } => *bins,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, AttrKind::Numeric { .. })
    }

    /// Bin edges of a numeric attribute, `None` for categorical ones.
    pub fn bin_edges(&self) -> Option<Vec<f64>> {
        match self.kind {
            AttrKind::Numeric { min, max, bins } => uniform_bin_edges(min, max, bins).ok(),
            AttrKind::Categorical { .. } => None,
        }
    }

    pub fn labels(&self) -> Option<&[String]> {
        match &self.kind {
            AttrKind::Categorical { values } => Some(values),
            AttrKind::Numeric { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.kind {
            AttrKind::Categorical { values } => {
                if values.is_empty() {
                    return Err(Error::InvalidDomain(format!(
                        "categorical attribute {:?} has no values",
                        self.name
                    )));
                }
                let mut seen = alloc::collections::BTreeSet::new();
                for v in values {
                    if !seen.insert(v.as_str()) {
                        return Err(Error::InvalidDomain(format!(
                            "attribute {:?} repeats label {:?}",
                            self.name, v
                        )));
                    }
                }
                Ok(())
            }
            AttrKind::Numeric { min, max, bins } => {
                uniform_bin_edges(*min, *max, *bins)?;
                Ok(())
            }
        }
    }
}

/// Ordered attribute metadata. The order is authoritative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr", into = "DomainRepr")]
pub struct Domain {
    attributes: Vec<AttributeMeta>,
}

#[derive(Serialize, Deserialize)]
struct DomainRepr {
    attributes: Vec<AttributeMeta>,
}

impl TryFrom<DomainRepr> for Domain {
    type Error = Error;
    fn try_from(repr: DomainRepr) -> Result<Self> {
        Domain::new(repr.attributes)
    }
}

impl From<Domain> for DomainRepr {
    fn from(d: Domain) -> Self {
        DomainRepr {
            attributes: d.attributes,
        }
    }
}

impl Domain {
    pub fn new(attributes: Vec<AttributeMeta>) -> Result<Self> {
        let mut names = alloc::collections::BTreeSet::new();
        for a in &attributes {
            a.validate()?;
            if !names.insert(a.name.as_str()) {
                return Err(Error::InvalidDomain(format!(
                    "duplicate attribute name {:?}",
                    a.name
                )));
            }
        }
        Ok(Self { attributes })
    }

    pub fn attributes(&self) -> &[AttributeMeta] {
        &self.attributes
    }

    pub fn attribute(&self, i: usize) -> &AttributeMeta {
        &self.attributes[i]
    }

    pub fn d(&self) -> usize {
        self.attributes.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.attributes.iter().map(AttributeMeta::cardinality).collect()
    }

    /// Product of all cardinalities, saturating at `u128::MAX`.
    pub fn total_size(&self) -> u128 {
        self.attributes
            .iter()
            .fold(1u128, |acc, a| acc.saturating_mul(a.cardinality() as u128))
    }

    pub fn names(&self) -> Vec<&str> {
        self.attributes.iter().map(|a| a.name.as_str()).collect()
    }

    /// Replace one attribute, keeping order. Used after rare-category merging.
    pub fn with_attribute(&self, i: usize, meta: AttributeMeta) -> Result<Self> {
        let mut attrs = self.attributes.clone();
        attrs[i] = meta;
        Domain::new(attrs)
    }
}

/// `N x d` matrix of encoded category indices, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    cards: Vec<usize>,
    n_rows: usize,
    values: Vec<u32>,
}

impl Dataset {
    pub fn new(cards: Vec<usize>, values: Vec<u32>) -> Result<Self> {
        let d = cards.len();
        if d == 0 {
            return Err(Error::InvalidDomain("dataset needs at least one attribute".into()));
        }
        if values.len() % d != 0 {
            return Err(Error::TableMismatch(format!(
                "{} cells do not divide into rows of width {}",
                values.len(),
                d
            )));
        }
        for (k, &v) in values.iter().enumerate() {
            let col = k % d;
            if v as usize >= cards[col] {
                return Err(Error::TableMismatch(format!(
                    "row {} column {} holds {} but cardinality is {}",
                    k / d,
                    col,
                    v,
                    cards[col]
                )));
            }
        }
        Ok(Self {
            n_rows: values.len() / d,
            cards,
            values,
        })
    }

    pub fn from_rows(cards: Vec<usize>, rows: &[Vec<u32>]) -> Result<Self> {
        let d = cards.len();
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::TableMismatch(format!("row {} has {} cells, expected {}", i, r.len(), d)));
            }
            values.extend_from_slice(r);
        }
        Dataset::new(cards, values)
    }

    pub fn empty(cards: Vec<usize>) -> Self {
        Self {
            cards,
            n_rows: 0,
            values: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn d(&self) -> usize {
        self.cards.len()
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let d = self.d();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> {
        self.values.chunks_exact(self.d())
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Text(Vec<String>),
    Numeric(Vec<f64>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Text(v) => v.len(),
            Column::Numeric(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell rendered as text, for writing tables out.
    pub fn cell(&self, row: usize) -> String {
        match self {
            Column::Text(v) => v[row].clone(),
            Column::Numeric(v) => format!("{}", v[row]),
        }
    }
}

/// Column-oriented raw table, before encoding or after decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub columns: Vec<Column>,
}

impl RawTable {
    pub fn new(header: Vec<String>, columns: Vec<Column>) -> Result<Self> {
        if header.len() != columns.len() {
            return Err(Error::TableMismatch(format!(
                "{} header names for {} columns",
                header.len(),
                columns.len()
            )));
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.len() != first.len()) {
                return Err(Error::TableMismatch("columns differ in length".into()));
            }
        }
        Ok(Self { header, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }
}

/// Equal-width bin edges: `k + 1` values from `min` to `max`.
pub fn uniform_bin_edges(min: f64, max: f64, k: usize) -> Result<Vec<f64>> {
    if !(min < max) || !min.is_finite() || !max.is_finite() {
        return Err(Error::DegenerateRange { min, max });
    }
    if k == 0 {
        return Err(Error::ZeroBins);
    }
    let width = (max - min) / k as f64;
    let mut edges: Vec<f64> = (0..=k).map(|i| min + width * i as f64).collect();
    edges[k] = max;
    Ok(edges)
}

/// Bin of `v` among `k` equal-width bins on `[min, max]`, clamped to `0..k`.
pub fn bin_index(v: f64, min: f64, max: f64, k: usize) -> usize {
    let pos = math::floor(k as f64 * (v - min) / (max - min));
    if pos.is_nan() || pos < 0.0 {
        0
    } else if pos >= (k - 1) as f64 {
        k - 1
    } else {
        pos as usize
    }
}

/// Encode a raw table whose columns follow the domain's attribute order.
pub fn encode(raw: &RawTable, domain: &Domain) -> Result<Dataset> {
    if raw.header.len() != domain.d() {
        return Err(Error::TableMismatch(format!(
            "table has {} columns, domain has {} attributes",
            raw.header.len(),
            domain.d()
        )));
    }
    let n = raw.n_rows();
    let d = domain.d();
    let mut values = alloc::vec![0u32; n * d];
    for (j, (attr, col)) in domain.attributes().iter().zip(&raw.columns).enumerate() {
        if raw.header[j] != attr.name {
            return Err(Error::TableMismatch(format!(
                "column {} is {:?}, domain expects {:?}",
                j, raw.header[j], attr.name
            )));
        }
        match (&attr.kind, col) {
            (AttrKind::Categorical { values: labels }, Column::Text(cells)) => {
                let index: BTreeMap<&str, u32> = labels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l.as_str(), i as u32))
                    .collect();
                let other = index.get(OTHER_LABEL).copied();
                for (i, cell) in cells.iter().enumerate() {
                    let code = match index.get(cell.as_str()) {
                        Some(&c) => c,
                        None => other.ok_or_else(|| Error::UnknownCategory {
                            attr: attr.name.clone(),
                            value: cell.clone(),
                        })?,
                    };
                    values[i * d + j] = code;
                }
            }
            (AttrKind::Numeric { min, max, bins }, Column::Numeric(cells)) => {
                for (i, &v) in cells.iter().enumerate() {
                    values[i * d + j] = bin_index(v, *min, *max, *bins) as u32;
                }
            }
            _ => {
                return Err(Error::TableMismatch(format!(
                    "column {:?} has the wrong kind for its attribute",
                    attr.name
                )))
            }
        }
    }
    Dataset::new(domain.cardinalities(), values)
}

/// Map encoded indices back to labels, and numeric bins to a uniform draw
/// inside the bin.
pub fn decode(synth: &Dataset, domain: &Domain, seed: u64) -> Result<RawTable> {
    if synth.cards() != domain.cardinalities().as_slice() {
        return Err(Error::DomainMismatch);
    }
    let mut rng = rng::stream(seed, Purpose::Decode);
    let d = domain.d();
    let n = synth.n_rows();
    let mut columns = Vec::with_capacity(d);
    for (j, attr) in domain.attributes().iter().enumerate() {
        let col = match &attr.kind {
            AttrKind::Categorical { values } => {
                Column::Text((0..n).map(|i| values[synth.row(i)[j] as usize].clone()).collect())
            }
            AttrKind::Numeric { min, max, bins } => {
                let edges = uniform_bin_edges(*min, *max, *bins)?;
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let b = synth.row(i)[j] as usize;
                    let (lo, hi) = (edges[b], edges[b + 1]);
                    let u: f64 = rng.random();
                    let mut v = lo + u * (hi - lo);
                    // rounding can push a draw across an edge
                    if bin_index(v, *min, *max, *bins) != b {
                        v = 0.5 * (lo + hi);
                    }
                    out.push(v);
                }
                Column::Numeric(out)
            }
        };
        columns.push(col);
    }
    RawTable::new(domain.names().into_iter().map(ToString::to_string).collect(), columns)
}

/// Merge categories seen fewer than `min_count` times into [`OTHER_LABEL`].
///
/// Values present in the table but absent from the attribute's labels are
/// counted as rare too. Returns the attribute unchanged when nothing is rare.
pub fn rare_category_filter(
    raw: &RawTable,
    domain: &Domain,
    attr: usize,
    min_count: usize,
) -> Result<AttributeMeta> {
    let meta = domain.attribute(attr);
    let labels = meta.labels().ok_or_else(|| {
        Error::InvalidConfig(format!("attribute {:?} is not categorical", meta.name))
    })?;
    let cells = match raw.columns.get(attr) {
        Some(Column::Text(cells)) => cells,
        _ => {
            return Err(Error::TableMismatch(format!(
                "column {} is not a text column",
                attr
            )))
        }
    };
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in cells {
        *counts.entry(c.as_str()).or_insert(0) += 1;
    }
    let known: alloc::collections::BTreeSet<&str> = labels.iter().map(String::as_str).collect();
    let unknown_present = counts.keys().any(|k| !known.contains(k));

    let mut kept: Vec<String> = labels
        .iter()
        .filter(|l| l.as_str() != OTHER_LABEL)
        .filter(|l| counts.get(l.as_str()).copied().unwrap_or(0) >= min_count)
        .cloned()
        .collect();
    let merged_any = kept.len() < labels.iter().filter(|l| l.as_str() != OTHER_LABEL).count();
    if !merged_any && !unknown_present {
        return Ok(meta.clone());
    }
    kept.push(OTHER_LABEL.to_string());
    Ok(AttributeMeta::categorical(meta.name.clone(), kept))
}
