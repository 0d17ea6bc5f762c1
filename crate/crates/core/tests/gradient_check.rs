use margnet_core::generator::{init_generator, loss_and_grad, FitTarget, GeneratorModel};
use margnet_core::marginal::{Marginal, MarginalSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_case(seed: u64) -> (GeneratorModel, Vec<Marginal>, Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.random_range(2..=3);
    let cards: Vec<usize> = (0..d).map(|_| rng.random_range(2..=4)).collect();
    let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(3..=6)).collect();
    let mut model = init_generator(&cards, &hidden, rng.random_range(2..=4), rng.random_range(2..=6), seed).unwrap();
    // non-zero biases so every parameter is exercised
    for layer in model.layers.iter_mut() {
        for b in layer.bias.iter_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    let mut specs = vec![MarginalSpec::new(&[0], &cards).unwrap(), MarginalSpec::new(&[0, 1], &cards).unwrap()];
    if d == 3 {
        specs.push(MarginalSpec::new(&[1, 2], &cards).unwrap());
    }
    let targets: Vec<Marginal> = specs
        .into_iter()
        .map(|s| {
            let counts = (0..s.n_cells()).map(|_| rng.random_range(0.0..20.0)).collect();
            Marginal { spec: s, counts }
        })
        .collect();
    let weights = (0..targets.len()).map(|_| rng.random_range(0.2..3.0)).collect();
    (model, targets, weights, rng.random_range(5.0..50.0))
}

fn loss_at(model: &GeneratorModel, targets: &[FitTarget<'_>], scale: f64) -> f64 {
    loss_and_grad(model, targets, scale).unwrap().0
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let h = 1e-5;
    for seed in 0..20 {
        let (mut model, marginals, weights, scale) = random_case(seed);
        let targets: Vec<FitTarget<'_>> = marginals
            .iter()
            .zip(&weights)
            .map(|(m, &w)| FitTarget { marginal: m, weight: w })
            .collect();
        let (_, grads) = loss_and_grad(&model, &targets, scale).unwrap();
        let analytic = grads.flatten();
        let params = model.params_flat();
        assert_eq!(analytic.len(), params.len());
        let mut worst = 0.0f64;
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] = params[k] + h;
            model.set_params_flat(&p);
            let up = loss_at(&model, &targets, scale);
            p[k] = params[k] - h;
            model.set_params_flat(&p);
            let down = loss_at(&model, &targets, scale);
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic[k] - numeric).abs() / denom);
        }
        model.set_params_flat(&params);
        assert!(worst < 1e-4, "seed {seed}: max relative error {worst:e}");
    }
}
