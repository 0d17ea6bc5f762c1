//! MLP generator with per-attribute softmax heads, differentiable marginal
//! estimates, and hand-derived reverse-mode gradients.
//!
//! The network maps a fixed latent batch `Z` (`b x latent_dim`) through
//! affine layers with ReLU between them. The last layer has one logit per
//! encoded category of every attribute; each attribute's segment goes
//! through its own softmax, giving a [`SoftBatch`] of `b` soft rows.
//!
//! Soft marginals are batch averages: a one-way marginal is the column mean
//! of the attribute's segment, a two-way marginal is the mean of the outer
//! products `u_j v_j^T`, both scaled by the estimated record count.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::Dataset;
use crate::error::{Error, Result};
use crate::marginal::{Marginal, MarginalSpec};
use crate::math;
use crate::rng::{self, Purpose};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Affine layer `y = x W + b` with `W` stored row-major as `n_in x n_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    fn zeros_like(&self) -> Self {
        Dense::zeros(self.n_in, self.n_out)
    }
}

/// Position of one attribute's categories in the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub offset: usize,
    pub card: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    pub layers: Vec<Dense>,
    pub segments: Vec<Segment>,
    pub latent_dim: usize,
    pub batch_size: usize,
    /// Latent batch, `batch_size x latent_dim`, row-major.
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftBatch {
    pub rows: usize,
    pub width: usize,
    pub probs: Vec<f64>,
    pub segments: Vec<Segment>,
}

impl SoftBatch {
    pub fn row(&self, j: usize) -> &[f64] {
        &self.probs[j * self.width..(j + 1) * self.width]
    }

    /// Attribute `attr`'s probability vector in row `j`.
    pub fn segment(&self, j: usize, attr: usize) -> &[f64] {
        let s = self.segments[attr];
        &self.row(j)[s.offset..s.offset + s.card]
    }
}

/// Parameter-shaped gradient, one [`Dense`] per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    /// Weights then biases, layer by layer (same order as
    /// [`GeneratorModel::params_flat`]).
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weight);
        out.extend_from_slice(&l.bias);
    }
    out
}

fn segments_for(cards: &[usize]) -> Vec<Segment> {
    let mut offset = 0;
    cards
        .iter()
        .map(|&card| {
            let s = Segment { offset, card };
            offset += card;
            s
        })
        .collect()
}

/// Build a generator for a domain with the given per-attribute cardinalities.
///
/// Weights use He-style uniform initialization `U(-sqrt(6/fan_in), sqrt(6/fan_in))`,
/// biases start at zero, and `Z` is drawn once from a standard normal.
pub fn init_generator(
    cards: &[usize],
    hidden: &[usize],
    latent_dim: usize,
    batch_size: usize,
    seed: u64,
) -> Result<GeneratorModel> {
    if hidden.is_empty() || hidden.contains(&0) {
        return Err(Error::InvalidConfig("hidden widths must be non-empty and positive".into()));
    }
    if batch_size == 0 || latent_dim == 0 || cards.is_empty() || cards.contains(&0) {
        return Err(Error::InvalidConfig("batch size, latent dim and cardinalities must be positive".into()));
    }
    let mut rng = rng::stream(seed, Purpose::Init);
    let width: usize = cards.iter().sum();
    let mut dims = vec![latent_dim];
    dims.extend_from_slice(hidden);
    dims.push(width);
    let layers = dims
        .windows(2)
        .map(|w| {
            let limit = math::sqrt(6.0 / w[0] as f64);
            let mut layer = Dense::zeros(w[0], w[1]);
            for x in layer.weight.iter_mut() {
                *x = rng.random_range(-limit..limit);
            }
            layer
        })
        .collect();
    let z = (0..batch_size * latent_dim).map(|_| rng.sample(StandardNormal)).collect();
    Ok(GeneratorModel {
        layers,
        segments: segments_for(cards),
        latent_dim,
        batch_size,
        z,
    })
}

/// `c = a * b (+ c if accumulate)` for `a: m x k`, `b: k x n`, with explicit
/// strides so transposes need no copies.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: callers pass buffers sized for the given shapes and strides;
    // `c` is a distinct, exclusively borrowed buffer of `m * n` elements.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

struct ForwardCache {
    /// Input to every layer: `Z`, then each post-ReLU hidden activation.
    inputs: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl GeneratorModel {
    pub fn output_width(&self) -> usize {
        self.segments.iter().map(|s| s.card).sum()
    }

    pub fn cards(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.card).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn set_params_flat(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut it = params.iter().copied();
        for l in self.layers.iter_mut() {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
    }

    /// Replace `Z` with a fresh standard normal batch.
    pub fn resample_latent<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for z in self.z.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
    }

    fn forward_cached(&self) -> ForwardCache {
        let b = self.batch_size;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = self.z.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; b * layer.n_out];
            for row in y.chunks_exact_mut(layer.n_out) {
                row.copy_from_slice(&layer.bias);
            }
            gemm(
                b,
                layer.n_in,
                layer.n_out,
                &x,
                (layer.n_in as isize, 1),
                &layer.weight,
                (layer.n_out as isize, 1),
                &mut y,
                true,
            );
            if i < last {
                for v in y.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            inputs.push(x);
            x = y;
        }
        // x now holds the logits
        let width = self.output_width();
        for row in x.chunks_exact_mut(width) {
            for s in &self.segments {
                softmax_in_place(&mut row[s.offset..s.offset + s.card]);
            }
        }
        ForwardCache { inputs, probs: x }
    }

    pub fn forward(&self) -> SoftBatch {
        let cache = self.forward_cached();
        SoftBatch {
            rows: self.batch_size,
            width: self.output_width(),
            probs: cache.probs,
            segments: self.segments.clone(),
        }
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = math::exp(*x - top);
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// Soft estimate of a one- or two-way marginal, scaled to `scale` records.
pub fn soft_marginal(batch: &SoftBatch, spec: &MarginalSpec, scale: f64) -> Result<Marginal> {
    let mut out = Marginal::zeros(spec.clone());
    let factor = scale / batch.rows as f64;
    match spec.attrs() {
        &[a] => {
            for j in 0..batch.rows {
                for (o, &p) in out.counts.iter_mut().zip(batch.segment(j, a)) {
                    *o += p;
                }
            }
        }
        &[a, c] => {
            let cc = spec.cards()[1];
            for j in 0..batch.rows {
                let v = batch.segment(j, c);
                for (x, &u) in batch.segment(j, a).iter().enumerate() {
                    let row = &mut out.counts[x * cc..(x + 1) * cc];
                    for (o, &vy) in row.iter_mut().zip(v) {
                        *o += u * vy;
                    }
                }
            }
        }
        other => return Err(Error::UnsupportedOrder(other.len())),
    }
    for o in out.counts.iter_mut() {
        *o *= factor;
    }
    Ok(out)
}

/// One weighted marginal-matching term of the training loss.
#[derive(Debug, Clone, Copy)]
pub struct FitTarget<'a> {
    pub marginal: &'a Marginal,
    pub weight: f64,
}

/// Weighted squared-error loss `sum_i w_i ||soft_marginal_i - target_i||^2`
/// and its exact gradient with respect to every weight and bias.
pub fn loss_and_grad(model: &GeneratorModel, targets: &[FitTarget<'_>], scale: f64) -> Result<(f64, Gradients)> {
    let cache = model.forward_cached();
    let b = model.batch_size;
    let width = model.output_width();
    let batch = SoftBatch {
        rows: b,
        width,
        probs: cache.probs,
        segments: model.segments.clone(),
    };
    let factor = scale / b as f64;

    let mut loss = 0.0;
    let mut d_probs = vec![0.0; b * width];
    for t in targets {
        let spec = &t.marginal.spec;
        let est = soft_marginal(&batch, spec, scale)?;
        let mut g = Vec::with_capacity(est.counts.len());
        for (e, m) in est.counts.iter().zip(&t.marginal.counts) {
            let r = e - m;
            loss += t.weight * r * r;
            g.push(2.0 * t.weight * r * factor);
        }
        match spec.attrs() {
            &[a] => {
                let s = model.segments[a];
                for j in 0..b {
                    let row = &mut d_probs[j * width + s.offset..j * width + s.offset + s.card];
                    for (d, gx) in row.iter_mut().zip(&g) {
                        *d += gx;
                    }
                }
            }
            &[a, c] => {
                let (sa, sc) = (model.segments[a], model.segments[c]);
                for j in 0..b {
                    let u = batch.segment(j, a);
                    let v = batch.segment(j, c);
                    let base = j * width;
                    for x in 0..sa.card {
                        let gx = &g[x * sc.card..(x + 1) * sc.card];
                        let mut du = 0.0;
                        for y in 0..sc.card {
                            du += gx[y] * v[y];
                            d_probs[base + sc.offset + y] += gx[y] * u[x];
                        }
                        d_probs[base + sa.offset + x] += du;
                    }
                }
            }
            other => return Err(Error::UnsupportedOrder(other.len())),
        }
    }

    // softmax backward per segment: dz = p * (g - <p, g>)
    let mut delta = d_probs;
    for j in 0..b {
        let p = batch.row(j);
        let d = &mut delta[j * width..(j + 1) * width];
        for s in &model.segments {
            let range = s.offset..s.offset + s.card;
            let dot: f64 = p[range.clone()].iter().zip(&d[range.clone()]).map(|(a, b)| a * b).sum();
            for k in range {
                d[k] = p[k] * (d[k] - dot);
            }
        }
    }

    let mut grads: Vec<Dense> = model.layers.iter().map(Dense::zeros_like).collect();
    for (i, layer) in model.layers.iter().enumerate().rev() {
        let x = &cache.inputs[i];
        let g = &mut grads[i];
        // dW = x^T delta
        gemm(
            layer.n_in,
            b,
            layer.n_out,
            x,
            (1, layer.n_in as isize),
            &delta,
            (layer.n_out as isize, 1),
            &mut g.weight,
            false,
        );
        for row in delta.chunks_exact(layer.n_out) {
            for (gb, d) in g.bias.iter_mut().zip(row) {
                *gb += d;
            }
        }
        if i == 0 {
            break;
        }
        // dx = delta W^T, masked by the ReLU that produced x
        let mut dx = vec![0.0; b * layer.n_in];
        gemm(
            b,
            layer.n_out,
            layer.n_in,
            &delta,
            (layer.n_out as isize, 1),
            &layer.weight,
            (1, layer.n_out as isize),
            &mut dx,
            false,
        );
        for (d, &xv) in dx.iter_mut().zip(x) {
            if xv <= 0.0 {
                *d = 0.0;
            }
        }
        delta = dx;
    }
    Ok((loss, Gradients { layers: grads }))
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Dense>,
    v: Vec<Dense>,
    beta1_t: f64,
    beta2_t: f64,
    steps: u64,
}

impl AdamState {
    pub fn new(model: &GeneratorModel) -> Self {
        Self {
            m: model.layers.iter().map(Dense::zeros_like).collect(),
            v: model.layers.iter().map(Dense::zeros_like).collect(),
            beta1_t: 1.0,
            beta2_t: 1.0,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }
}

pub fn adam_step(model: &mut GeneratorModel, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.steps += 1;
    state.beta1_t *= ADAM_BETA1;
    state.beta2_t *= ADAM_BETA2;
    let (c1, c2) = (1.0 - state.beta1_t, 1.0 - state.beta2_t);
    for (((layer, g), m), v) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let params = layer.weight.iter_mut().chain(layer.bias.iter_mut());
        let gs = g.weight.iter().chain(g.bias.iter());
        let ms = m.weight.iter_mut().chain(m.bias.iter_mut());
        let vs = v.weight.iter_mut().chain(v.bias.iter_mut());
        for (((p, &gi), mi), vi) in params.zip(gs).zip(ms).zip(vs) {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *p -= lr * m_hat / (math::sqrt(v_hat) + ADAM_EPS);
        }
    }
}

/// Draw `n_rows` hard records: pick a soft row uniformly, then draw every
/// attribute independently from that row's categorical distribution.
pub fn sample_hard(model: &GeneratorModel, n_rows: usize, seed: u64) -> Dataset {
    let batch = model.forward();
    let mut rng = rng::stream(seed, Purpose::Sampling);
    let d = model.segments.len();
    let mut values = Vec::with_capacity(n_rows * d);
    for _ in 0..n_rows {
        let j = rng.random_range(0..batch.rows);
        for a in 0..d {
            let probs = batch.segment(j, a);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (k, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            values.push(pick as u32);
        }
    }
    Dataset::new(model.cards(), values).expect("sampled indices stay inside each segment")
}
