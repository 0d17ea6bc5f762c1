//! Utility metrics for a (real, synthetic) pair.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::marginal::{fidelity_error, query_error};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    /// Mean two-way TVD, in `[0, 1]`.
    pub fidelity_error: f64,
    /// Mean absolute three-way frequency error.
    pub query_error: f64,
    pub n_queries: usize,
    pub wall_clock_synthesis_seconds: f64,
    pub seeds: Vec<u64>,
    /// Free-form echo of the settings that produced the synthetic data.
    pub config: BTreeMap<String, String>,
    /// Not computed by this tool; always `null`.
    pub ml_efficacy: Option<f64>,
}

pub fn evaluate(real: &Dataset, synth: &Dataset, n_queries: usize, seed: u64) -> Result<EvalReport> {
    if real.cards() != synth.cards() {
        return Err(Error::DomainMismatch);
    }
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        fidelity_error: fidelity_error(real, synth)?,
        query_error: query_error(real, synth, n_queries, seed)?,
        n_queries,
        wall_clock_synthesis_seconds: 0.0,
        seeds: alloc::vec![seed],
        config: BTreeMap::new(),
        ml_efficacy: None,
    })
}

/// Average reports produced under one configuration.
pub fn aggregate(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or(Error::EmptyList)?;
    if reports
        .iter()
        .any(|r| r.config != first.config || r.n_queries != first.n_queries)
    {
        return Err(Error::ConfigMismatch);
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        fidelity_error: mean(|r| r.fidelity_error),
        query_error: mean(|r| r.query_error),
        n_queries: first.n_queries,
        wall_clock_synthesis_seconds: mean(|r| r.wall_clock_synthesis_seconds),
        seeds: reports.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
        config: first.config.clone(),
        ml_efficacy: None,
    })
}
