use margnet_core::domain::{AttributeMeta, Dataset, Domain};
use margnet_core::generator::init_generator;
use margnet_core::marginal::{all_pairs, compute_marginal, Marginal, MarginalSpec};
use margnet_core::privacy::gaussian_mechanism;
use margnet_core::synthesis::{run_margnet, Measurement, Mode, SynthConfig};
use margnet_core::theory::{
    rank_bound_report, selected_upper_bound, singular_values, svd, tail_energy, unselected_bound,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Best rank-`k` approximation error by alternating least squares from
/// several random starts.
fn als_rank_error(a: &[f64], m: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let mut x: Vec<f64> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; n * k];
        let mut prev = f64::INFINITY;
        for _ in 0..20_000 {
            y = least_squares_factor(a, m, n, k, &x, false);
            x = least_squares_factor(a, m, n, k, &y, true);
            let err = residual(a, m, n, k, &x, &y);
            if (prev - err).abs() < 1e-14 * (1.0 + err) {
                break;
            }
            prev = err;
        }
        best = best.min(residual(a, m, n, k, &x, &y));
    }
    best
}

fn residual(a: &[f64], m: usize, n: usize, k: usize, x: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..n {
            let p: f64 = (0..k).map(|t| x[i * k + t] * y[j * k + t]).sum();
            s += (a[i * n + j] - p).powi(2);
        }
    }
    s
}

/// Solve for the free factor with the other fixed, via the k x k normal
/// equations. `rows` picks which side of `A` is being fitted.
fn least_squares_factor(a: &[f64], m: usize, n: usize, k: usize, fixed: &[f64], rows: bool) -> Vec<f64> {
    let (len_free, len_fixed) = if rows { (m, n) } else { (n, m) };
    let at = |free: usize, other: usize| if rows { a[free * n + other] } else { a[other * n + free] };
    let mut g = vec![0.0; k * k];
    for r in 0..len_fixed {
        for p in 0..k {
            for q in 0..k {
                g[p * k + q] += fixed[r * k + p] * fixed[r * k + q];
            }
        }
    }
    for p in 0..k {
        g[p * k + p] += 1e-14;
    }
    let mut out = vec![0.0; len_free * k];
    for f in 0..len_free {
        let mut rhs: Vec<f64> = (0..k).map(|p| (0..len_fixed).map(|r| at(f, r) * fixed[r * k + p]).sum()).collect();
        let mut mat = g.clone();
        // Gaussian elimination with partial pivoting
        for c in 0..k {
            let piv = (c..k).max_by(|&i, &j| mat[i * k + c].abs().total_cmp(&mat[j * k + c].abs())).unwrap();
            for t in 0..k {
                mat.swap(c * k + t, piv * k + t);
            }
            rhs.swap(c, piv);
            for r in c + 1..k {
                let factor = mat[r * k + c] / mat[c * k + c];
                for t in c..k {
                    mat[r * k + t] -= factor * mat[c * k + t];
                }
                rhs[r] -= factor * rhs[c];
            }
        }
        for c in (0..k).rev() {
            let s: f64 = (c + 1..k).map(|t| mat[c * k + t] * rhs[t]).sum();
            rhs[c] = (rhs[c] - s) / mat[c * k + c];
        }
        out[f * k..(f + 1) * k].copy_from_slice(&rhs);
    }
    out
}

#[test]
fn tail_energy_is_best_low_rank_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let a: Vec<f64> = (0..25).map(|_| rng.random_range(0..40) as f64).collect();
        let bound = tail_energy(&singular_values(&a, 5, 5), 2);
        let als = als_rank_error(&a, 5, 5, 2, &mut rng);
        assert!((bound - als).abs() < 1e-6 * (1.0 + als), "{bound} vs {als}");
    }
}

proptest! {
    #[test]
    fn svd_reconstruction(m in 1usize..7, n in 1usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..m * n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let s = svd(&a, m, n);
        let r = s.singular_values.len();
        prop_assert_eq!(r, m.min(n));
        for i in 0..m {
            for j in 0..n {
                let v: f64 = (0..r).map(|k| s.u[i * r + k] * s.singular_values[k] * s.v[j * r + k]).sum();
                prop_assert!((v - a[i * n + j]).abs() < 1e-8);
            }
        }
        prop_assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.singular_values.iter().all(|&x| x >= 0.0));
    }
}

fn toy(n: usize, cards: &[usize], seed: u64) -> (Dataset, Domain) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = vec![rng.random_range(0..cards[0] as u32)];
        for &c in &cards[1..] {
            let prev = *row.last().unwrap();
            let v = if rng.random_bool(0.7) { prev % c as u32 } else { rng.random_range(0..c as u32) };
            row.push(v);
        }
        rows.push(row);
    }
    let attrs = cards
        .iter()
        .enumerate()
        .map(|(i, &c)| AttributeMeta::categorical(format!("a{i}"), (0..c).map(|v| format!("v{v}")).collect()))
        .collect();
    (Dataset::from_rows(cards.to_vec(), &rows).unwrap(), Domain::new(attrs).unwrap())
}

fn small_config(rho: f64, d: usize, seed: u64, batch: usize) -> SynthConfig {
    let mut c = SynthConfig::new(rho, d);
    c.train_iters = 40;
    c.lr = 0.01;
    c.batch_size = batch;
    c.hidden = vec![16];
    c.latent_dim = 8;
    c.seed = seed;
    c
}

#[test]
fn rank_bound_never_exceeds_noise_free_loss() {
    let (ds, domain) = toy(500, &[6, 6, 5], 1);
    for b in [1, 2, 4] {
        for seed in 0..3 {
            let mut config = small_config(1.0, 3, seed, b);
            config.noise_free = true;
            config.mode = Mode::FixedRound(3);
            let out = run_margnet(&ds, &domain, &config).unwrap();
            let meas = out.trace.measurements().unwrap();
            let rep = rank_bound_report(&out.model, &meas, &ds, out.trace.scale).unwrap();
            assert!(rep.lower_bound > 0.0);
            assert!(rep.observed_loss >= rep.lower_bound, "b={b}: {rep:?}");
        }
    }
}

#[test]
fn selected_bound_coverage() {
    let (ds, _) = toy(800, &[3, 4, 3], 2);
    let model = init_generator(ds.cards(), &[8], 4, 8, 9).unwrap();
    let exact: Vec<Marginal> = all_pairs(ds.cards()).iter().map(|s| compute_marginal(&ds, s).unwrap()).collect();
    let delta = 0.05;
    let trials = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for _ in 0..trials {
        let mut meas = Vec::new();
        for (k, m) in exact.iter().enumerate() {
            // the first spec is measured twice at different budgets
            let rhos: &[f64] = if k == 0 { &[0.02, 0.08] } else { &[0.05] };
            for &rho in rhos {
                let counts = gaussian_mechanism(&m.counts, rho, &mut rng).unwrap();
                meas.push(Measurement {
                    noisy: Marginal { spec: m.spec.clone(), counts },
                    rho_m: rho,
                    sigma: (1.0 / (2.0 * rho)).sqrt(),
                    weight: 1.0,
                    round: 1,
                    newly_selected: false,
                });
            }
        }
        let rep = selected_upper_bound(&meas, &model, &ds, 800.0, delta).unwrap();
        if rep.per_marginal.iter().any(|m| m.observed_error > m.bound) {
            violations += 1;
        }
    }
    let allowed = 3.0 * delta * trials as f64 + 3.0 * (trials as f64).sqrt();
    assert!((violations as f64) <= allowed, "{violations} > {allowed}");
}

#[test]
fn unselected_bound_coverage() {
    let (ds, domain) = toy(600, &[4, 3, 4], 3);
    let delta = 0.1;
    let runs = 40;
    let mut violations = 0;
    let mut unselected = 0;
    for seed in 0..runs {
        let mut config = small_config(0.5, 3, seed, 16);
        config.mode = Mode::FixedRound(1);
        let out = run_margnet(&ds, &domain, &config).unwrap();
        let rep = unselected_bound(&out.trace, &out.model, &out.model_before_final, &ds, delta).unwrap();
        unselected = unselected.max(rep.per_marginal.len());
        if rep.per_marginal.iter().any(|m| m.observed_error > m.bound) {
            violations += 1;
        }
    }
    assert_eq!(unselected, 2);
    let allowed = delta * unselected as f64 * runs as f64 + 3.0 * (runs as f64).sqrt();
    assert!((violations as f64) <= allowed, "{violations} > {allowed}");
}

#[test]
fn unselected_bound_term_isolation() {
    // all r = 1 and equal cell counts: the middle term vanishes
    let (ds, domain) = toy(400, &[3, 3, 3], 4);
    let mut config = small_config(1.0, 3, 0, 8);
    config.mode = Mode::FixedRound(1);
    let out = run_margnet(&ds, &domain, &config).unwrap();
    let n = out.trace.n_candidates as f64;
    let rep = unselected_bound(&out.trace, &out.model, &out.model_before_final, &ds, n).unwrap();
    let last = out.trace.rounds.last().unwrap();
    let theta = MarginalSpec::new(&last.attrs, ds.cards()).unwrap();
    let batch = out.model_before_final.forward();
    let theta_err = margnet_core::marginal::l1_distance(
        &compute_marginal(&ds, &theta).unwrap(),
        &margnet_core::generator::soft_marginal(&batch, &theta, out.trace.scale).unwrap(),
    )
    .unwrap();
    for m in &rep.per_marginal {
        assert!(m.bound >= theta_err - 1e-9);
        assert!((m.slack - (m.bound - m.observed_error)).abs() < 1e-12);
    }
}
