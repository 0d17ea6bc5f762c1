//! End-to-end synthesis: budget split, one-way warm-up, adaptive two-way
//! selection with budget doubling, weighted training, and sampling.
//!
//! Every spend goes through the [`Accountant`], whose hard stop never fires
//! on a correct run: all allocations are checked against the remaining
//! budget before any noise is drawn.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::domain::{decode, Dataset, Domain, RawTable};
use crate::error::{Error, Result};
use crate::generator::{
    adam_step, init_generator, loss_and_grad, sample_hard, soft_marginal, AdamState, FitTarget, GeneratorModel,
    SoftBatch,
};
use crate::marginal::{all_pairs, compute_marginal, l1_distance, Marginal, MarginalRecord, MarginalSpec};
use crate::math;
use crate::privacy::{exponential_mechanism, gaussian_mechanism, Accountant, LedgerEntry, NoiseParams};
use crate::rng::{self, Purpose, Stream};

/// Share of each per-round unit that goes to selection; the rest measures.
pub const SELECT_SHARE: f64 = 0.1;

/// Default cap on the number of cells of a candidate marginal.
pub const DEFAULT_MAX_CELLS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Adaptive,
    /// Exactly `K` selection rounds with an even budget split and no doubling.
    FixedRound(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Total zCDP budget.
    pub rho: f64,
    /// Caps the number of per-round budget units; `16 d` by default.
    pub c: f64,
    /// Per-candidate score weights, one per two-way spec in
    /// lexicographic order. Empty means all 1.0.
    pub r_weights: Vec<f64>,
    pub train_iters: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub mode: Mode,
    /// Keep the latent batch fixed for the whole run.
    pub fixed_input: bool,
    pub max_cells: usize,
    /// Test hook: measurements are the exact marginals. The accountant is
    /// still charged, but the output is NOT private.
    pub noise_free: bool,
    pub seed: u64,
}

impl SynthConfig {
    /// Defaults for a `d`-attribute domain and total budget `rho`.
    pub fn new(rho: f64, d: usize) -> Self {
        Self {
            rho,
            c: 16.0 * d as f64,
            r_weights: Vec::new(),
            train_iters: 200,
            lr: 1e-3,
            batch_size: 256,
            hidden: alloc::vec![256, 256],
            latent_dim: 64,
            mode: Mode::Adaptive,
            fixed_input: true,
            max_cells: DEFAULT_MAX_CELLS,
            noise_free: false,
            seed: 0,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::InvalidRho(self.rho));
        }
        if !(self.c >= d as f64) {
            return bad("c must be at least the number of attributes");
        }
        if d < 2 {
            return bad("synthesis needs at least two attributes");
        }
        if self.train_iters == 0 || self.batch_size == 0 || self.latent_dim == 0 {
            return bad("iterations, batch size and latent dim must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be non-empty and positive");
        }
        if !(self.lr >= 0.0) {
            return bad("learning rate must be non-negative");
        }
        if self.r_weights.iter().any(|&r| !(r > 0.0)) {
            return bad("score weights must be positive");
        }
        if !self.r_weights.is_empty() && self.r_weights.len() != d * (d - 1) / 2 {
            return bad("need one score weight per two-way marginal");
        }
        if let Mode::FixedRound(0) = self.mode {
            return bad("fixed-round mode needs at least one round");
        }
        Ok(())
    }
}

/// Training iterations by privacy level: fewer iterations at large epsilon.
pub fn default_train_iters(epsilon: f64) -> usize {
    if epsilon >= 10.0 {
        100
    } else {
        200
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub noisy: Marginal,
    pub rho_m: f64,
    pub sigma: f64,
    pub weight: f64,
    /// 0 for warm-up measurements.
    pub round: usize,
    pub newly_selected: bool,
}

impl Measurement {
    pub fn spec(&self) -> &MarginalSpec {
        &self.noisy.spec
    }

    pub fn to_record(&self) -> MeasurementRecord {
        MeasurementRecord {
            marginal: self.noisy.to_record(),
            rho_m: self.rho_m,
            sigma: self.sigma,
            weight: self.weight,
            round: self.round,
            newly_selected: self.newly_selected,
        }
    }

    pub fn from_record(rec: &MeasurementRecord, cards: &[usize]) -> Result<Self> {
        Ok(Self {
            noisy: Marginal::from_record(&rec.marginal, cards)?,
            rho_m: rec.rho_m,
            sigma: rec.sigma,
            weight: rec.weight,
            round: rec.round,
            newly_selected: rec.newly_selected,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    #[serde(flatten)]
    pub marginal: MarginalRecord,
    pub rho_m: f64,
    pub sigma: f64,
    pub weight: f64,
    pub round: usize,
    pub newly_selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub attrs: Vec<usize>,
    pub rho_s: f64,
    pub rho_m: f64,
    pub score: f64,
    /// L1 change of the chosen marginal's estimate across this round's training.
    pub model_improvement: f64,
    pub first_selection: bool,
    pub doubled: bool,
    pub final_round: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub config: SynthConfig,
    pub d: usize,
    pub cards: Vec<usize>,
    pub rho_budget: f64,
    pub warmup_rho_m: f64,
    /// Budget available to the selection phase after warm-up.
    pub rho_total: f64,
    /// Estimated record count used to scale soft marginals.
    pub scale: f64,
    pub n_candidates: usize,
    pub delta_q: f64,
    pub rounds: Vec<RoundRecord>,
    pub measurements: Vec<MeasurementRecord>,
    pub ledger: Vec<LedgerEntry>,
    pub rho_used: f64,
    pub n_output_rows: usize,
}

impl SelectionTrace {
    pub fn measurements(&self) -> Result<Vec<Measurement>> {
        self.measurements
            .iter()
            .map(|m| Measurement::from_record(m, &self.cards))
            .collect()
    }

    /// Weights of the score function, expanded to one per candidate.
    pub fn r_weights(&self) -> Vec<f64> {
        resolved_r_weights(&self.config, self.d)
    }
}

fn resolved_r_weights(config: &SynthConfig, d: usize) -> Vec<f64> {
    if config.r_weights.is_empty() {
        alloc::vec![1.0; d * (d - 1) / 2]
    } else {
        config.r_weights.clone()
    }
}

pub struct SynthOutput {
    pub synth: Dataset,
    pub raw: RawTable,
    pub trace: SelectionTrace,
    pub model: GeneratorModel,
    /// Generator state right before the final selection round (`G^{K-1}`).
    pub model_before_final: GeneratorModel,
    pub accountant: Accountant,
}

/// `(rho_s, rho_m) = (0.1 rho / c, 0.9 rho / c)`.
pub fn split_budget(rho: f64, c: f64) -> (f64, f64) {
    (SELECT_SHARE * rho / c, (1.0 - SELECT_SHARE) * rho / c)
}

/// Measurement weights: `sqrt(rho_m)`, times `d` for the measurement added
/// this round, rescaled so the largest weight equals `d`.
pub fn compute_weights(measurements: &[Measurement], d: usize) -> Vec<f64> {
    let raw: Vec<f64> = measurements
        .iter()
        .map(|m| {
            let base = math::sqrt(m.rho_m);
            if m.newly_selected {
                d as f64 * base
            } else {
                base
            }
        })
        .collect();
    let top = raw.iter().copied().fold(0.0, f64::max);
    if top > 0.0 {
        raw.into_iter().map(|w| w * d as f64 / top).collect()
    } else {
        raw
    }
}

/// Expected L1 norm of the Gaussian noise on an `n_cells` marginal measured
/// with `rho_m`.
pub fn expected_noise_l1(n_cells: usize, rho_m: f64) -> f64 {
    n_cells as f64 / math::sqrt(math::PI * rho_m)
}

/// Selection scores `r_i (||M_i(G) - M_i||_1 - n_i / sqrt(pi rho_m))`.
pub fn candidate_scores(
    batch: &SoftBatch,
    exact: &[Marginal],
    rho_m: f64,
    r_weights: &[f64],
    scale: f64,
) -> Result<Vec<f64>> {
    exact
        .iter()
        .zip(r_weights)
        .map(|(m, &r)| {
            let est = soft_marginal(batch, &m.spec, scale)?;
            Ok(r * (l1_distance(&est, m)? - expected_noise_l1(m.spec.n_cells(), rho_m)))
        })
        .collect()
}

struct Trainer {
    adam: AdamState,
    iters: usize,
    lr: f64,
    fixed_input: bool,
    rng: Stream,
}

impl Trainer {
    /// Fit the model to the measurements, all weights refreshed first.
    fn train(&mut self, model: &mut GeneratorModel, measurements: &mut [Measurement], d: usize, scale: f64) -> Result<()> {
        let weights = compute_weights(measurements, d);
        for (m, w) in measurements.iter_mut().zip(weights) {
            m.weight = w;
        }
        let targets: Vec<FitTarget> = measurements
            .iter()
            .map(|m| FitTarget {
                marginal: &m.noisy,
                weight: m.weight,
            })
            .collect();
        for _ in 0..self.iters {
            if !self.fixed_input {
                model.resample_latent(&mut self.rng);
            }
            let (_, grads) = loss_and_grad(model, &targets, scale)?;
            adam_step(model, &grads, &mut self.adam, self.lr);
        }
        Ok(())
    }
}

fn measure(
    exact: &Marginal,
    rho_m: f64,
    round: usize,
    noise_free: bool,
    rng: &mut Stream,
) -> Result<Measurement> {
    let params = NoiseParams::from_rho(rho_m)?;
    let counts = if noise_free {
        exact.counts.clone()
    } else {
        gaussian_mechanism(&exact.counts, rho_m, rng)?
    };
    Ok(Measurement {
        noisy: Marginal {
            spec: exact.spec.clone(),
            counts,
        },
        rho_m,
        sigma: params.sigma,
        weight: 1.0,
        round,
        newly_selected: round > 0,
    })
}

/// Everything the selection phase needs, threaded through one run.
struct Run<'a> {
    ds: &'a Dataset,
    config: &'a SynthConfig,
    d: usize,
    acct: Accountant,
    model: GeneratorModel,
    trainer: Trainer,
    measurements: Vec<Measurement>,
    measure_rng: Stream,
    select_rng: Stream,
    scale: f64,
}

/// Measure all one-way marginals with `rho_m` each and fit the model to
/// them. Sets the record-count estimate from the median noisy total.
fn warmup(run: &mut Run<'_>, rho_m: f64) -> Result<()> {
    let d = run.d;
    if !run.acct.can_afford(d as f64 * rho_m) {
        return Err(Error::InsufficientBudget {
            used: run.acct.used(),
            requested: d as f64 * rho_m,
            budget: run.acct.budget(),
        });
    }
    for i in 0..d {
        let spec = MarginalSpec::new(&[i], run.ds.cards())?;
        let exact = compute_marginal(run.ds, &spec)?;
        run.acct.spend(rho_m, format!("warmup:one-way:{}", i))?;
        let m = measure(&exact, rho_m, 0, run.config.noise_free, &mut run.measure_rng)?;
        run.measurements.push(m);
    }
    let totals: Vec<f64> = run.measurements.iter().map(|m| m.noisy.total()).collect();
    run.scale = math::median(&totals).max(1.0);
    run.trainer.train(&mut run.model, &mut run.measurements, d, run.scale)
}

/// Largest `rho_m <= wanted` such that spending `rho_s` then `rho_m` keeps
/// the accountant's running sum within its budget, exactly.
fn fit_last_spend(acct: &Accountant, rho_s: f64, wanted: f64) -> f64 {
    let mut rho_m = wanted;
    while rho_m > 0.0 && (acct.used() + rho_s) + rho_m > acct.budget() {
        rho_m = rho_m.next_down();
    }
    rho_m
}

struct Candidates {
    exact: Vec<Marginal>,
    r: Vec<f64>,
    delta_q: f64,
}

fn candidates(ds: &Dataset, config: &SynthConfig) -> Result<Candidates> {
    let d = ds.d();
    let r_all = resolved_r_weights(config, d);
    let mut exact = Vec::new();
    let mut r = Vec::new();
    for (spec, &ri) in all_pairs(ds.cards()).iter().zip(&r_all) {
        if spec.n_cells() <= config.max_cells {
            exact.push(compute_marginal(ds, spec)?);
            r.push(ri);
        }
    }
    if exact.is_empty() {
        return Err(Error::InvalidConfig("no two-way marginal fits under the cell cap".into()));
    }
    let delta_q = r.iter().copied().fold(0.0, f64::max);
    Ok(Candidates { exact, r, delta_q })
}

/// One selection round: score with the current model, select, measure,
/// retrain. Returns the round record (without budget-update fields) and the
/// model snapshot from before training.
fn select_and_fit(
    run: &mut Run<'_>,
    cands: &Candidates,
    k: usize,
    rho_s: f64,
    rho_m: f64,
) -> Result<(RoundRecord, GeneratorModel)> {
    let before = run.model.clone();
    let batch_before = before.forward();
    let scores = candidate_scores(&batch_before, &cands.exact, rho_m, &cands.r, run.scale)?;
    run.acct.spend(rho_s, format!("select:round:{}", k))?;
    let idx = exponential_mechanism(&scores, cands.delta_q, rho_s, &mut run.select_rng)?;
    let exact = &cands.exact[idx];
    run.acct.spend(rho_m, format!("measure:round:{}", k))?;
    let m = measure(exact, rho_m, k, run.config.noise_free, &mut run.measure_rng)?;
    for old in run.measurements.iter_mut() {
        old.newly_selected = false;
    }
    let first_selection = !run.measurements.iter().any(|old| old.noisy.spec == exact.spec);
    run.measurements.push(m);
    run.trainer.train(&mut run.model, &mut run.measurements, run.d, run.scale)?;

    let after = soft_marginal(&run.model.forward(), &exact.spec, run.scale)?;
    let prior = soft_marginal(&batch_before, &exact.spec, run.scale)?;
    let record = RoundRecord {
        round: k,
        attrs: exact.spec.attrs().to_vec(),
        rho_s,
        rho_m,
        score: scores[idx],
        model_improvement: l1_distance(&after, &prior)?,
        first_selection,
        doubled: false,
        final_round: false,
    };
    Ok((record, before))
}

fn adaptive_loop(
    run: &mut Run<'_>,
    cands: &Candidates,
    rho_total: f64,
    mut rho_s: f64,
    mut rho_m: f64,
) -> Result<(Vec<RoundRecord>, GeneratorModel)> {
    let mut rounds = Vec::new();
    let mut used = 0.0;
    let mut last = false;
    let mut before_final = run.model.clone();
    let mut k = 0;
    while used < rho_total {
        k += 1;
        let (mut rec, before) = select_and_fit(run, cands, k, rho_s, rho_m)?;
        before_final = before;
        used += rho_s + rho_m;
        if last {
            rec.final_round = true;
            rounds.push(rec);
            break;
        }
        let n_k = rec.attrs.iter().map(|&a| run.ds.cards()[a]).product();
        if rec.first_selection && rec.model_improvement < expected_noise_l1(n_k, rho_m) {
            rho_s *= 2.0;
            rho_m *= 2.0;
            rec.doubled = true;
        }
        if used + rho_s + rho_m >= rho_total {
            let remaining = run.acct.remaining();
            if !(remaining > 0.0) {
                rec.final_round = true;
                rounds.push(rec);
                break;
            }
            rho_s = SELECT_SHARE * remaining;
            rho_m = fit_last_spend(&run.acct, rho_s, remaining - rho_s);
            last = true;
        }
        rounds.push(rec);
    }
    Ok((rounds, before_final))
}

fn fixed_rounds(
    run: &mut Run<'_>,
    cands: &Candidates,
    rho_total: f64,
    k_rounds: usize,
) -> Result<(Vec<RoundRecord>, GeneratorModel)> {
    let (rho_s, rho_m) = split_budget(rho_total, k_rounds as f64);
    let mut rounds = Vec::with_capacity(k_rounds);
    let mut before_final = run.model.clone();
    for k in 1..=k_rounds {
        let m = if k == k_rounds {
            fit_last_spend(&run.acct, rho_s, rho_m)
        } else {
            rho_m
        };
        let (mut rec, before) = select_and_fit(run, cands, k, rho_s, m)?;
        rec.final_round = k == k_rounds;
        before_final = before;
        rounds.push(rec);
    }
    Ok((rounds, before_final))
}

/// Run the full pipeline on an encoded dataset.
pub fn run_margnet(ds: &Dataset, domain: &Domain, config: &SynthConfig) -> Result<SynthOutput> {
    let d = ds.d();
    config.validate(d)?;
    if ds.cards() != domain.cardinalities().as_slice() {
        return Err(Error::DomainMismatch);
    }
    let seed = config.seed;
    let model = init_generator(ds.cards(), &config.hidden, config.latent_dim, config.batch_size, seed)?;
    let mut run = Run {
        ds,
        config,
        d,
        acct: Accountant::new(config.rho)?,
        trainer: Trainer {
            adam: AdamState::new(&model),
            iters: config.train_iters,
            lr: config.lr,
            fixed_input: config.fixed_input,
            rng: rng::stream(seed, Purpose::Training),
        },
        model,
        measurements: Vec::new(),
        measure_rng: rng::stream(seed, Purpose::Measurement),
        select_rng: rng::stream(seed, Purpose::Selection),
        scale: 1.0,
    };

    let (rho_s, rho_m) = split_budget(config.rho, config.c);
    warmup(&mut run, rho_m)?;
    let rho_total = config.rho - d as f64 * rho_m;
    let cands = candidates(ds, config)?;

    let (rounds, before_final) = match config.mode {
        Mode::Adaptive => adaptive_loop(&mut run, &cands, rho_total, rho_s, rho_m)?,
        Mode::FixedRound(k) => fixed_rounds(&mut run, &cands, rho_total, k)?,
    };

    // final fit on everything measured, full iteration count
    for m in run.measurements.iter_mut() {
        m.newly_selected = false;
    }
    run.trainer.train(&mut run.model, &mut run.measurements, d, run.scale)?;

    let n_out = math::round(run.scale) as usize;
    let synth = sample_hard(&run.model, n_out, seed);
    let raw = decode(&synth, domain, seed)?;
    let trace = SelectionTrace {
        config: config.clone(),
        d,
        cards: ds.cards().to_vec(),
        rho_budget: config.rho,
        warmup_rho_m: rho_m,
        rho_total,
        scale: run.scale,
        n_candidates: cands.exact.len(),
        delta_q: cands.delta_q,
        rounds,
        measurements: run.measurements.iter().map(Measurement::to_record).collect(),
        ledger: run.acct.ledger().to_vec(),
        rho_used: run.acct.used(),
        n_output_rows: n_out,
    };
    Ok(SynthOutput {
        synth,
        raw,
        trace,
        model: run.model,
        model_before_final: before_final,
        accountant: run.acct,
    })
}

/// Human-readable one-line summary of a finished run.
pub fn summary(trace: &SelectionTrace) -> String {
    format!(
        "rho budget {:.6}, used {:.6}, {} selection rounds, {} measurements, {} rows",
        trace.rho_budget,
        trace.rho_used,
        trace.rounds.len(),
        trace.measurements.len(),
        trace.n_output_rows
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AttributeMeta;
    use crate::rng::stream;
    use alloc::vec;
    use rand::Rng;

    fn meas(rho_m: f64, new: bool) -> Measurement {
        let spec = MarginalSpec::new(&[0], &[2]).unwrap();
        Measurement {
            noisy: Marginal::zeros(spec),
            rho_m,
            sigma: 1.0 / math::sqrt(2.0 * rho_m),
            weight: 1.0,
            round: if new { 1 } else { 0 },
            newly_selected: new,
        }
    }

    #[test]
    fn split_examples() {
        let (s, m) = split_budget(1.0, 160.0);
        assert!((s - 0.000625).abs() < 1e-15 && (m - 0.005625).abs() < 1e-15);
        let (s, m) = split_budget(160.0, 160.0);
        assert!((s - 0.1).abs() < 1e-15 && (m - 0.9).abs() < 1e-15);
        for (rho, c) in [(0.3, 7.0), (2.5, 48.0), (1e-3, 80.0)] {
            let (s, m) = split_budget(rho, c);
            assert!((s + m - rho / c).abs() < 1e-15);
        }
    }

    #[test]
    fn weight_examples() {
        let w = compute_weights(&[meas(0.1, false), meas(0.1, false), meas(0.1, true)], 5);
        assert!((w[2] - 5.0 * w[0]).abs() < 1e-12);
        assert!((w[2] - 5.0).abs() < 1e-12);
        let w = compute_weights(&[meas(0.1, false), meas(0.4, false)], 3);
        assert!((w[1] - 2.0 * w[0]).abs() < 1e-12);
        let w = compute_weights(&[meas(0.2, true)], 4);
        assert_eq!(w, vec![4.0]);
    }

    #[test]
    fn score_examples() {
        let cards = [2, 2];
        let spec = MarginalSpec::new(&[0, 1], &cards).unwrap();
        let batch = SoftBatch {
            rows: 1,
            width: 4,
            probs: vec![0.5; 4],
            segments: vec![
                crate::generator::Segment { offset: 0, card: 2 },
                crate::generator::Segment { offset: 2, card: 2 },
            ],
        };
        let fitted = Marginal { spec: spec.clone(), counts: vec![1.0; 4] };
        let q = candidate_scores(&batch, &[fitted], 0.5, &[2.0], 4.0).unwrap();
        assert!((q[0] + 2.0 * 4.0 / math::sqrt(math::PI * 0.5)).abs() < 1e-12);

        let off = Marginal { spec, counts: vec![4.0, 0.0, 0.0, 0.0] };
        let q = candidate_scores(&batch, &[off.clone()], 1.0 / math::PI, &[1.0], 4.0).unwrap();
        assert!((q[0] - (6.0 - 4.0)).abs() < 1e-12);
        let q3 = candidate_scores(&batch, &[off], 1.0 / math::PI, &[3.0], 4.0).unwrap();
        assert!((q3[0] - 3.0 * q[0]).abs() < 1e-12);
    }

    fn toy(d: usize, n: usize, seed: u64) -> (Dataset, Domain) {
        let cards = vec![3; d];
        let mut rng = stream(seed, Purpose::Data);
        let mut values = Vec::new();
        for _ in 0..n {
            let base = rng.random_range(0..3u32);
            for _ in 0..d {
                values.push(if rng.random::<f64>() < 0.7 { base } else { rng.random_range(0..3) });
            }
        }
        let attrs = (0..d)
            .map(|i| AttributeMeta::categorical(format!("a{}", i), vec!["p".into(), "q".into(), "r".into()]))
            .collect();
        (Dataset::new(cards, values).unwrap(), Domain::new(attrs).unwrap())
    }

    fn small_config(rho: f64, d: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            train_iters: 20,
            batch_size: 16,
            hidden: vec![16],
            latent_dim: 8,
            seed,
            ..SynthConfig::new(rho, d)
        }
    }

    #[test]
    fn warmup_charges_and_rejects() {
        let (ds, domain) = toy(3, 200, 1);
        let out = run_margnet(&ds, &domain, &small_config(0.5, 3, 2)).unwrap();
        let warm: f64 = out.accountant.ledger().iter().filter(|e| e.label.starts_with("warmup")).map(|e| e.rho).sum();
        assert!((warm - 3.0 * out.trace.warmup_rho_m).abs() < 1e-15);

        let mut cfg = small_config(0.5, 3, 2);
        cfg.c = 3.0 * 0.9 - 0.5; // below d
        assert!(matches!(run_margnet(&ds, &domain, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn adaptive_run_respects_budget_and_doubling_rules() {
        let (ds, domain) = toy(4, 300, 3);
        for seed in 0..3 {
            let out = run_margnet(&ds, &domain, &small_config(0.2, 4, seed)).unwrap();
            let total: f64 = out.trace.ledger.iter().map(|e| e.rho).sum();
            assert!(total <= out.trace.rho_budget);
            assert_eq!(total, out.accountant.used());
            let rounds = &out.trace.rounds;
            assert!(!rounds.is_empty());
            assert!(rounds.iter().enumerate().all(|(i, r)| r.round == i + 1));
            assert!(rounds.iter().filter(|r| r.doubled).all(|r| r.first_selection));
            // rho_m never decreases until the final reallocation
            for w in rounds.windows(2) {
                if !w[1].final_round {
                    assert!(w[1].rho_m >= w[0].rho_m);
                }
            }
            assert_eq!(rounds.iter().filter(|r| r.final_round).count(), 1);
            assert_eq!(out.synth.n_rows(), out.trace.n_output_rows);
        }
    }

    #[test]
    fn fixed_round_spend() {
        let (ds, domain) = toy(3, 200, 4);
        let mut cfg = small_config(1.0, 3, 5);
        cfg.mode = Mode::FixedRound(4);
        let out = run_margnet(&ds, &domain, &cfg).unwrap();
        assert_eq!(out.trace.rounds.len(), 4);
        let (s, m) = split_budget(out.trace.rho_total, 4.0);
        let expect = 3.0 * out.trace.warmup_rho_m + 4.0 * (s + m);
        assert!((out.accountant.used() - expect).abs() < 1e-10);
        assert!(out.accountant.used() <= cfg.rho);
        let again = run_margnet(&ds, &domain, &cfg).unwrap();
        assert_eq!(again.trace, out.trace);
    }
}
