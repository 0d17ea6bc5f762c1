use std::path::Path;
use std::process::{Command, Output};

use margnet::checkpoint;
use margnet::cli::{CheckReport, RunTrace};
use margnet::io::{csv_bytes, read_csv};
use margnet_core::domain::{AttributeMeta, Column, Domain, RawTable};
use margnet_core::evaluation::EvalReport;
use margnet_core::generator::init_generator;
use proptest::prelude::*;

fn margnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_margnet")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, rows: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("g.csv");
    let out = margnet(&["gen-gauss", "--dims", "5", "--rows", rows, "--corr", "0.8", "--seed", "9", "--out", s(&data)]);
    assert!(out.status.success());
    (data, dir.join("g.domain.json"))
}

fn synth(data: &Path, domain: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "synth", "--data", s(data), "--domain", s(domain), "--out", s(out), "--hidden", "32,32", "--batch", "32",
    ];
    args.extend_from_slice(extra);
    margnet(&args)
}

#[test]
fn synth_eval_check_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (data, domain) = gen(dir.path(), "2000");
    let out = dir.path().join("s.csv");
    let res = synth(&data, &domain, &out, &["--epsilon", "1.0", "--delta", "1e-5", "--seed", "4", "--iters", "20"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stdout).contains("rho"));

    let rows = std::fs::read_to_string(&out).unwrap().lines().count() - 1;
    assert!((rows as i64 - 2000).abs() <= 60, "{rows} rows");
    let trace: RunTrace = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.trace.json")).unwrap()).unwrap();
    assert_eq!(trace.seed, 4);
    assert!(trace.trace.rho_used <= trace.trace.rho_budget);
    let echo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.config.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 4);
    assert!(echo["wall_clock_synthesis_seconds"].as_f64().unwrap() >= 0.0);

    let res = margnet(&["eval", "--real", s(&data), "--synth", s(&data), "--domain", s(&domain), "--seed", "1", "--queries", "300"]);
    assert!(res.status.success());
    assert!(String::from_utf8_lossy(&res.stdout).contains("fidelity_error 0.000000"));
    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("g.eval.json")).unwrap()).unwrap();
    assert_eq!(report.n_queries, 300);
    assert_eq!(report.fidelity_error, 0.0);

    let res = margnet(&[
        "check", "--trace", s(&dir.path().join("s.trace.json")), "--checkpoint", s(&dir.path().join("s.ckpt")),
        "--data", s(&data), "--domain", s(&domain),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let report: CheckReport = serde_json::from_slice(&res.stdout).unwrap();
    assert!(report.rank_bound.observed_loss >= report.rank_bound.lower_bound);
    for m in report.unselected.per_marginal.iter().chain(&report.selected.per_marginal) {
        assert!((m.slack - (m.bound - m.observed_error)).abs() < 1e-9 * m.bound.abs().max(1.0));
    }
    let measured = trace.trace.measurements.iter().filter(|m| m.marginal.attrs.len() == 2).map(|m| &m.marginal.attrs);
    let mut measured: Vec<_> = measured.collect();
    measured.sort();
    measured.dedup();
    assert_eq!(report.unselected.per_marginal.len() + measured.len(), 10);
}

#[test]
fn fixed_mode_round_count() {
    let dir = tempfile::tempdir().unwrap();
    let (data, domain) = gen(dir.path(), "500");
    let out = dir.path().join("s.csv");
    let res = synth(&data, &domain, &out, &["--epsilon", "1", "--mode", "fixed:30", "--seed", "2", "--iters", "2"]);
    assert!(res.status.success());
    let trace: RunTrace = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.trace.json")).unwrap()).unwrap();
    assert_eq!(trace.trace.rounds.len(), 30);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (data, domain) = gen(dir.path(), "200");
    let out = dir.path().join("s.csv");

    let res = margnet(&["synth", "--data", s(&data), "--epsilon", "1", "--out", s(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("Usage"));
    assert!(!out.exists());

    let res = synth(&dir.path().join("nope.csv"), &domain, &out, &["--epsilon", "1", "--seed", "1", "--iters", "2"]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());

    let res = synth(&data, &domain, &out, &["--epsilon", "1", "--delta", "1.5", "--seed", "1", "--iters", "2"]);
    assert_eq!(res.status.code(), Some(2));

    let res = margnet(&["gen-gauss", "--dims", "3", "--rows", "5", "--corr", "1.5", "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(res.status.code(), Some(2));

    // a domain whose attribute is absent from the synthetic table
    let other = dir.path().join("other.json");
    let dom = Domain::new(vec![AttributeMeta::numeric("zzz", 0.0, 1.0, 4)]).unwrap();
    std::fs::write(&other, serde_json::to_vec(&dom).unwrap()).unwrap();
    let res = margnet(&["eval", "--real", s(&data), "--synth", s(&data), "--domain", s(&other)]);
    assert_eq!(res.status.code(), Some(2));

    let ok = synth(&data, &domain, &out, &["--epsilon", "1", "--seed", "1", "--iters", "2"]);
    assert!(ok.status.success());
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"NOTACKPT0000").unwrap();
    let res = margnet(&[
        "check", "--trace", s(&dir.path().join("s.trace.json")), "--checkpoint", s(&bad), "--data", s(&data),
        "--domain", s(&domain),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("magic"));
}

#[test]
fn convert_prints_six_decimals_and_round_trips() {
    let res = margnet(&["convert", "--epsilon", "2.5", "--delta", "1e-6"]);
    let rho: f64 = String::from_utf8_lossy(&res.stdout).trim().parse().unwrap();
    let res = margnet(&["convert", "--rho", &format!("{rho}"), "--delta", "1e-6"]);
    let text = String::from_utf8_lossy(&res.stdout).trim().to_string();
    assert_eq!(text.split('.').nth(1).unwrap().len(), 6);
    let eps: f64 = text.parse().unwrap();
    // rho was itself rounded to 6 decimals
    assert!((eps - 2.5).abs() < 1e-3);
    assert_eq!(margnet(&["convert", "--epsilon", "1", "--rho", "0.1"]).status.code(), Some(2));
}

#[test]
fn gen_gauss_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let p = dir.path().join(name);
        let out = margnet(&["gen-gauss", "--dims", "10", "--rows", "16000", "--corr", "0.8", "--seed", "3", "--out", s(&p)]);
        assert!(out.status.success());
        std::fs::read(p).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert_eq!(String::from_utf8_lossy(&a).lines().count(), 16_001);
}

fn mixed_domain() -> Domain {
    Domain::new(vec![
        AttributeMeta::numeric("x", -5.0, 5.0, 10),
        AttributeMeta::categorical("c", vec!["red".into(), "green".into(), "blue".into()]),
    ])
    .unwrap()
}

proptest! {
    #[test]
    fn csv_round_trip(rows in prop::collection::vec((-1e6f64..1e6, 0usize..3), 0..50)) {
        let labels = ["red", "green", "blue"];
        let raw = RawTable::new(
            vec!["x".into(), "c".into()],
            vec![
                Column::Numeric(rows.iter().map(|r| r.0).collect()),
                Column::Text(rows.iter().map(|r| labels[r.1].to_string()).collect()),
            ],
        )
        .unwrap();
        let back = read_csv(csv_bytes(&raw).unwrap().as_slice(), &mixed_domain()).unwrap();
        prop_assert_eq!(back, raw);
    }

    #[test]
    fn checkpoint_round_trip(cards in prop::collection::vec(1usize..5, 1..4), hidden in 1usize..6, seed in any::<u64>()) {
        let m = init_generator(&cards, &[hidden], 3, 4, seed).unwrap();
        let back = checkpoint::decode(&checkpoint::encode(&[&m])).unwrap();
        prop_assert_eq!(back, vec![m]);
    }
}
