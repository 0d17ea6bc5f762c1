//! The `margnet` command line.
//!
//! Exit status: 0 on success, 1 for I/O failures, 2 for bad flags or
//! inconsistent inputs, 3 when the privacy budget cannot cover warm-up.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use margnet_core::domain::{encode, Domain};
use margnet_core::evaluation::{evaluate, EvalReport};
use margnet_core::gaussian::{gen_gaussian_dataset, numeric_domain_for};
use margnet_core::privacy::{dp_to_zcdp_rho, zcdp_to_dp_epsilon};
use margnet_core::synthesis::{default_train_iters, run_margnet, summary, Mode, SelectionTrace, SynthConfig};
use margnet_core::theory::{rank_bound_report, selected_upper_bound, unselected_bound, BoundReport, RankBoundReport};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::io::{json_bytes, load_csv, load_domain, load_json, sibling, write_atomic, write_csv};

#[derive(Debug, Parser)]
#[command(name = "margnet", version, about = "Differentially private synthetic tables from noisy marginals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a generator under (epsilon, delta)-DP and sample a synthetic table
    Synth(SynthArgs),
    /// Compare a synthetic table against the real one
    Eval(EvalArgs),
    /// Write an equicorrelated Gaussian table and a matching numeric domain
    GenGauss(GenGaussArgs),
    /// Convert between (epsilon, delta)-DP and rho-zCDP
    Convert(ConvertArgs),
    /// Evaluate the fitting-error bounds for a finished synth run
    Check(CheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    domain: PathBuf,
    #[arg(long)]
    epsilon: f64,
    /// Defaults to 1e-5
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    /// Synthetic CSV; the trace, checkpoint and config echo are written beside it
    #[arg(long)]
    out: PathBuf,
    /// `adaptive` or `fixed:K`
    #[arg(long, default_value = "adaptive", value_parser = parse_mode)]
    mode: Mode,
    /// Training iterations per round (default 100 when epsilon >= 10, else 200)
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// Hidden layer widths, comma separated
    #[arg(long, value_delimiter = ',', default_value = "256,256")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    latent: usize,
    /// Redraw the latent batch every training step instead of keeping it fixed
    #[arg(long)]
    resample_latent: bool,
    /// Drawn from the OS when omitted; always recorded in the outputs
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    synth: PathBuf,
    #[arg(long)]
    domain: PathBuf,
    #[arg(long, default_value_t = margnet_core::marginal::DEFAULT_QUERIES)]
    queries: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path (default: beside the synthetic CSV)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenGaussArgs {
    #[arg(long)]
    dims: usize,
    #[arg(long)]
    rows: usize,
    #[arg(long, allow_negative_numbers = true)]
    corr: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = margnet_core::domain::DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[arg(long, conflicts_with = "rho", required_unless_present = "rho")]
    epsilon: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Defaults to 1e-5
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    domain: PathBuf,
    /// Failure probability per marginal for the probabilistic bounds
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Also write the report here
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    if s == "adaptive" {
        return Ok(Mode::Adaptive);
    }
    match s.strip_prefix("fixed:").map(str::parse::<usize>) {
        Some(Ok(k)) if k > 0 => Ok(Mode::FixedRound(k)),
        _ => Err(format!("expected `adaptive` or `fixed:K` with K >= 1, got {s:?}")),
    }
}

/// What `synth` writes beside the synthetic CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
    pub trace: SelectionTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub delta: f64,
    pub rank_bound: RankBoundReport,
    pub selected: BoundReport,
    pub unselected: BoundReport,
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Eval(a) => eval(a),
        Command::GenGauss(a) => gen_gauss(a),
        Command::Convert(a) => convert(a),
        Command::Check(a) => check(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn load_encoded(data: &Path, domain: &Domain) -> Result<margnet_core::domain::Dataset> {
    Ok(encode(&load_csv(data, domain)?, domain)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    if !(a.epsilon > 0.0 && a.epsilon.is_finite()) {
        return Err(margnet_core::Error::InvalidEpsilon(a.epsilon).into());
    }
    let domain = load_domain(&a.domain)?;
    let ds = load_encoded(&a.data, &domain)?;
    let rho = dp_to_zcdp_rho(a.epsilon, a.delta)?;
    let seed = resolve_seed(a.seed);

    let mut config = SynthConfig::new(rho, ds.d());
    config.train_iters = a.iters.unwrap_or_else(|| default_train_iters(a.epsilon));
    config.lr = a.lr;
    config.batch_size = a.batch;
    config.hidden = a.hidden;
    config.latent_dim = a.latent;
    config.mode = a.mode;
    config.fixed_input = !a.resample_latent;
    config.seed = seed;

    let start = Instant::now();
    let out = run_margnet(&ds, &domain, &config)?;
    let secs = start.elapsed().as_secs_f64();

    let trace_path = a.trace.unwrap_or_else(|| sibling(&a.out, "trace.json"));
    let ckpt_path = sibling(&a.out, "ckpt");
    let echo_path = sibling(&a.out, "config.json");
    let rounds = out.trace.rounds.len();
    let rho_used = out.trace.rho_used;
    let echo = json!({
        "command": "synth",
        "data": a.data,
        "domain": a.domain,
        "epsilon": a.epsilon,
        "delta": a.delta,
        "rho": rho,
        "seed": seed,
        "config": &config,
        "rounds": rounds,
        "rho_used": rho_used,
        "rows": out.synth.n_rows(),
        "wall_clock_synthesis_seconds": secs,
        "outputs": {"csv": &a.out, "trace": &trace_path, "checkpoint": &ckpt_path},
    });
    let trace = RunTrace { epsilon: a.epsilon, delta: a.delta, seed, trace: out.trace };

    write_csv(&a.out, &out.raw)?;
    write_atomic(&trace_path, &json_bytes(&trace))?;
    checkpoint::save(&ckpt_path, &[&out.model, &out.model_before_final])?;
    write_atomic(&echo_path, &json_bytes(&echo))?;

    println!(
        "epsilon {} delta {:e} -> rho {:.6}; seed {seed}; {rounds} rounds in {secs:.2}s",
        a.epsilon, a.delta, rho
    );
    println!("{}", summary(&trace.trace));
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let domain = load_domain(&a.domain)?;
    let real = load_encoded(&a.real, &domain)?;
    let synth = load_encoded(&a.synth, &domain)?;
    let seed = resolve_seed(a.seed);
    let mut report: EvalReport = evaluate(&real, &synth, a.queries, seed)?;
    report.config.insert("real".into(), a.real.display().to_string());
    report.config.insert("synth".into(), a.synth.display().to_string());
    report.config.insert("queries".into(), a.queries.to_string());
    // pick up the synth run's settings when its config echo is present
    if let Ok(echo) = load_json::<serde_json::Value>(&sibling(&a.synth, "config.json")) {
        if let Some(t) = echo["wall_clock_synthesis_seconds"].as_f64() {
            report.wall_clock_synthesis_seconds = t;
        }
        for key in ["epsilon", "delta", "rho", "seed"] {
            if !echo[key].is_null() {
                report.config.insert(format!("synth.{key}"), echo[key].to_string());
            }
        }
    }
    let out = a.out.unwrap_or_else(|| sibling(&a.synth, "eval.json"));
    write_atomic(&out, &json_bytes(&report))?;
    println!(
        "fidelity_error {:.6} query_error {:.6} ({} queries, seed {seed}) -> {}",
        report.fidelity_error,
        report.query_error,
        report.n_queries,
        out.display()
    );
    Ok(())
}

fn gen_gauss(a: GenGaussArgs) -> Result<()> {
    let seed = resolve_seed(a.seed);
    let raw = gen_gaussian_dataset(a.dims, a.rows, a.corr, seed)?;
    let domain = numeric_domain_for(&raw, a.bins, 0.01)?;
    let domain_path = sibling(&a.out, "domain.json");
    let echo = json!({
        "command": "gen-gauss",
        "dims": a.dims,
        "rows": a.rows,
        "corr": a.corr,
        "bins": a.bins,
        "seed": seed,
        "outputs": {"csv": &a.out, "domain": &domain_path},
    });
    write_csv(&a.out, &raw)?;
    write_atomic(&domain_path, &json_bytes(&domain))?;
    write_atomic(&sibling(&a.out, "config.json"), &json_bytes(&echo))?;
    println!("wrote {} rows x {} columns (seed {seed})", a.rows, a.dims);
    Ok(())
}

fn convert(a: ConvertArgs) -> Result<()> {
    let value = match (a.epsilon, a.rho) {
        (Some(eps), None) => dp_to_zcdp_rho(eps, a.delta)?,
        (None, Some(rho)) => zcdp_to_dp_epsilon(rho, a.delta)?,
        _ => unreachable!("clap enforces exactly one direction"),
    };
    println!("{value:.6}");
    Ok(())
}

fn check(a: CheckArgs) -> Result<()> {
    let run: RunTrace = load_json(&a.trace)?;
    let models = checkpoint::load(&a.checkpoint)?;
    let [model, before_final] = <[_; 2]>::try_from(models)
        .map_err(|m| Error::BadCheckpoint(format!("expected 2 models, found {}", m.len())))?;
    let domain = load_domain(&a.domain)?;
    let ds = load_encoded(&a.data, &domain)?;
    let trace = &run.trace;
    if ds.cards() != trace.cards.as_slice() || model.cards() != trace.cards {
        return Err(margnet_core::Error::DomainMismatch.into());
    }
    let meas = trace.measurements()?;
    let report = CheckReport {
        delta: a.delta,
        rank_bound: rank_bound_report(&model, &meas, &ds, trace.scale)?,
        selected: selected_upper_bound(&meas, &model, &ds, trace.scale, a.delta)?,
        unselected: unselected_bound(trace, &model, &before_final, &ds, a.delta)?,
    };
    let bytes = json_bytes(&report);
    if let Some(out) = &a.out {
        write_atomic(out, &bytes)?;
    }
    let r = &report.rank_bound;
    eprintln!(
        "rank bound (b={}): observed {:.4} >= bound {:.4}",
        r.batch_size, r.observed_loss, r.lower_bound
    );
    for (name, b) in [("selected", &report.selected), ("unselected", &report.unselected)] {
        eprintln!(
            "{name}: observed {:.4} vs bound {:.4} over {} marginals",
            b.total_observed,
            b.total_bound,
            b.per_marginal.len()
        );
    }
    print!("{}", String::from_utf8(bytes).expect("JSON is UTF-8"));
    Ok(())
}
