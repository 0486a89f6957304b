//! Shared oracles for integration tests: brute-force reference
//! implementations and a finite-difference gradient checker.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use patchpc::entropy::{rate_bits, rate_bits_with_grad, EntropyModel};
use patchpc::network::{
    decoder_backward, decoder_forward_traced, group_max, group_max_backward, init_params, Dense,
    Mlp, ModelConfig, ModelParams,
};
use patchpc::training::{batch_loss_with_noise, batch_loss_with_targets, chamfer, chamfer_with_grad};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;

// ---- brute-force oracles ----

pub fn sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum()
}

/// O(n^2) FPS straight from the definition.
pub fn fps_oracle(pts: &[[f64; 3]], count: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    while chosen.len() < count {
        let mut best = None;
        let mut best_d = -1.0;
        for (i, p) in pts.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&c| sq(p, &pts[c]))
                .fold(f64::INFINITY, f64::min);
            if d > best_d {
                best_d = d;
                best = Some(i);
            }
        }
        chosen.push(best.unwrap());
    }
    chosen
}

/// Full sort by (distance, index).
pub fn knn_oracle(pts: &[[f64; 3]], q: &[f64; 3], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..pts.len()).collect();
    idx.sort_by(|&a, &b| {
        sq(&pts[a], q)
            .partial_cmp(&sq(&pts[b], q))
            .unwrap()
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

pub fn chamfer_oracle(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let dir = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        let mut s = 0.0;
        for p in x {
            let mut m = f64::INFINITY;
            for q in y {
                m = m.min(sq(p, q));
            }
            s += m;
        }
        s / x.len() as f64
    };
    dir(a, b) + dir(b, a)
}

pub fn to_matrix(pts: &[[f64; 3]]) -> Array2<f64> {
    Array2::from_shape_fn((pts.len(), 3), |(i, a)| pts[i][a])
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            [
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
                rng.random_range(0.0..extent),
            ]
        })
        .collect()
}

// ---- finite differences ----

/// Outcome of one gradient check.
#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub name: String,
    pub max_rel: f64,
    pub checked: usize,
    /// Coordinates where the function is not differentiable within the step
    /// (a ReLU, max or nearest-neighbor switch); the central difference is
    /// meaningless there.
    pub kinks: usize,
}

impl GradReport {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Default::default()
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel < FD_TOLERANCE && self.kinks * 4 <= self.checked
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` around `x0`, or `None` where `f` is not
/// differentiable within the step. Two signs of a kink: central differences
/// at `h` and `h/2` disagree beyond the O(h^2) truncation error of a smooth
/// function, or the gap between the one-sided slopes fails to shrink
/// linearly with the step (a kink sitting exactly at `x0`).
pub fn central_difference(f: impl Fn(f64) -> f64, x0: f64, h: f64) -> Option<f64> {
    let f0 = f(x0);
    let (fp, fm) = (f(x0 + h), f(x0 - h));
    let (fp2, fm2) = (f(x0 + h / 2.0), f(x0 - h / 2.0));
    let c1 = (fp - fm) / (2.0 * h);
    let c2 = (fp2 - fm2) / h;
    let gap1 = (fp - f0) / h - (f0 - fm) / h;
    let gap2 = (fp2 - f0) / (h / 2.0) - (f0 - fm2) / (h / 2.0);
    let scale = c1.abs().max(c2.abs()).max(1e-6);
    let smooth = (c1 - c2).abs() <= 1e-6 * scale && (gap2 - gap1 / 2.0).abs() <= 1e-6 * scale;
    smooth.then_some(c1)
}

/// Moves every bias off zero so no ReLU sits exactly on its kink (a zero
/// offset times any weight plus a zero bias lands on 0).
fn jitter_biases(params: &mut ModelParams<f64>, rng: &mut ChaCha8Rng) {
    let names: Vec<bool> = params
        .tensors()
        .iter()
        .map(|t| t.name.ends_with(".bias") && !t.name.starts_with("entropy"))
        .collect();
    for (t, is_bias) in params.tensors_mut().into_iter().zip(names) {
        if is_bias {
            for v in t.iter_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
}

impl GradReport {
    fn record(&mut self, analytic: f64, f: impl Fn(f64) -> f64, x0: f64) {
        match central_difference(f, x0, FD_STEP) {
            Some(n) => {
                self.checked += 1;
                self.max_rel = self.max_rel.max(rel_err(analytic, n));
            }
            None => self.kinks += 1,
        }
    }
}

/// Checks `per_tensor` random entries of every parameter tensor.
fn check_params(
    report: &mut GradReport,
    params: &ModelParams<f64>,
    grad: &ModelParams<f64>,
    per_tensor: usize,
    rng: &mut ChaCha8Rng,
    f: impl Fn(&ModelParams<f64>) -> f64,
) {
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let len = params.tensors()[t].data.len();
        let picks: Vec<usize> = if len <= per_tensor {
            (0..len).collect()
        } else {
            (0..per_tensor).map(|_| rng.random_range(0..len)).collect()
        };
        for i in picks {
            let x0 = params.tensors()[t].data[i];
            let analytic = grad.tensors()[t].data[i];
            report.record(
                analytic,
                |v| {
                    let mut p = params.clone();
                    p.tensors_mut()[t][i] = v;
                    f(&p)
                },
                x0,
            );
        }
    }
}

fn check_array(
    report: &mut GradReport,
    x: &Array2<f64>,
    grad: &Array2<f64>,
    f: impl Fn(&Array2<f64>) -> f64,
) {
    for (idx, &x0) in x.indexed_iter() {
        report.record(
            grad[idx],
            |v| {
                let mut y = x.clone();
                y[idx] = v;
                f(&y)
            },
            x0,
        );
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, extent: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-extent..extent))
}

pub fn check_dense(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer: Dense<f64> = Dense::glorot(5, 4, &mut rng);
    layer.bias = Array1::from_shape_simple_fn(4, || rng.random_range(-1.0..1.0));
    let x = random_matrix(&mut rng, 3, 5, 1.0);
    let w = random_matrix(&mut rng, 3, 4, 1.0);
    let f = |l: &Dense<f64>, x: &Array2<f64>| (l.forward(x.view()) * &w).sum();
    let mut g = Dense::zeros(5, 4);
    let dx = layer.backward(x.view(), w.view(), &mut g);
    let mut r = GradReport::new("dense layer");
    check_array(&mut r, &x, &dx, |x| f(&layer, x));
    check_array(&mut r, &layer.weight, &g.weight, |wt| {
        let mut l = layer.clone();
        l.weight = wt.clone();
        f(&l, &x)
    });
    let b2 = layer.bias.clone().insert_axis(ndarray::Axis(0));
    let gb2 = g.bias.clone().insert_axis(ndarray::Axis(0));
    check_array(&mut r, &b2, &gb2, |b| {
        let mut l = layer.clone();
        l.bias = b.row(0).to_owned();
        f(&l, &x)
    });
    r
}

pub fn check_mlp(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mlp: Mlp<f64> = Mlp::glorot(3, &[16, 8, 6], true, &mut rng);
    let x = random_matrix(&mut rng, 10, 3, 2.0);
    let w = random_matrix(&mut rng, 10, 6, 1.0);
    let f = |m: &Mlp<f64>, x: &Array2<f64>| (m.forward(x.clone()).output() * &w).sum();
    let trace = mlp.forward(x.clone());
    let mut g = Mlp::zeros(3, &[16, 8, 6], true);
    let dx = mlp.backward(&trace, w.clone(), &mut g);
    let mut r = GradReport::new("relu mlp");
    check_array(&mut r, &x, &dx, |x| f(&mlp, x));
    for li in 0..mlp.layers.len() {
        check_array(&mut r, &mlp.layers[li].weight, &g.layers[li].weight, |wt| {
            let mut m = mlp.clone();
            m.layers[li].weight = wt.clone();
            f(&m, &x)
        });
    }
    r
}

pub fn check_group_max(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_matrix(&mut rng, 12, 5, 3.0);
    let w = random_matrix(&mut rng, 3, 5, 1.0);
    let f = |x: &Array2<f64>| (group_max(x, 4).0 * &w).sum();
    let (_, arg) = group_max(&x, 4);
    let dx = group_max_backward(&w, &arg, 12);
    let mut r = GradReport::new("group max pooling");
    check_array(&mut r, &x, &dx, f);
    r
}

pub fn check_chamfer(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_matrix(&mut rng, 20, 3, 2.0);
    let b = random_matrix(&mut rng, 13, 3, 2.0);
    let (_, ga, gb) = chamfer_with_grad(a.view(), b.view()).unwrap();
    let mut r = GradReport::new("chamfer distance");
    check_array(&mut r, &a, &ga, |a| chamfer(a.view(), b.view()).unwrap());
    check_array(&mut r, &b, &gb, |b| chamfer(a.view(), b.view()).unwrap());
    r
}

pub fn check_entropy(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model: EntropyModel<f64> = EntropyModel::init(3, &mut rng);
    // move away from the symmetric init so every parameter matters
    for a in &mut model.factors {
        a.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    }
    for a in &mut model.matrices {
        a.mapv_inplace(|v| v + rng.random_range(-0.5..0.5));
    }
    let z = random_matrix(&mut rng, 4, 3, 6.0);
    let mut g = EntropyModel::zeros(3);
    let (_, dz) = rate_bits_with_grad(&model, z.view(), &mut g);
    let mut r = GradReport::new("entropy likelihood");
    check_array(&mut r, &z, &dz, |z| rate_bits(&model, z.view()));
    let f = |m: &EntropyModel<f64>| rate_bits(m, z.view());
    for i in 0..model.matrices.len() {
        for (idx, &x0) in model.matrices[i].indexed_iter() {
            r.record(
                g.matrices[i][idx],
                |v| {
                    let mut m = model.clone();
                    m.matrices[i][idx] = v;
                    f(&m)
                },
                x0,
            );
        }
        for (idx, &x0) in model.biases[i].indexed_iter() {
            r.record(
                g.biases[i][idx],
                |v| {
                    let mut m = model.clone();
                    m.biases[i][idx] = v;
                    f(&m)
                },
                x0,
            );
        }
    }
    for i in 0..model.factors.len() {
        for (idx, &x0) in model.factors[i].indexed_iter() {
            r.record(
                g.factors[i][idx],
                |v| {
                    let mut m = model.clone();
                    m.factors[i][idx] = v;
                    f(&m)
                },
                x0,
            );
        }
    }
    r
}

pub fn check_decoder(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig::compression(32, 16, 4);
    let mut params: ModelParams<f64> = init_params(&cfg, seed).unwrap();
    jitter_biases(&mut params, &mut rng);
    let z = Array1::from_shape_simple_fn(4, || rng.random_range(-3.0..3.0));
    let w = random_matrix(&mut rng, 16, 3, 1.0);
    let f = |p: &ModelParams<f64>, z: &Array1<f64>| {
        (decoder_forward_traced(z.view(), p, &cfg).unwrap().0 * &w).sum()
    };
    let (_, trace) = decoder_forward_traced(z.view(), &params, &cfg).unwrap();
    let mut g = ModelParams::zeros(&cfg);
    let dz = decoder_backward(&params, &trace, w.clone(), &mut g);
    let mut r = GradReport::new("decoder");
    let z2 = z.clone().insert_axis(ndarray::Axis(0));
    let dz2 = dz.insert_axis(ndarray::Axis(0));
    check_array(&mut r, &z2, &dz2, |z| f(&params, &z.row(0).to_owned()));
    // only decoder tensors carry gradient here
    let mut only_dec = g.clone();
    only_dec.encoder = ModelParams::<f64>::zeros(&cfg).encoder;
    check_params(&mut r, &params, &only_dec, 12, &mut rng, |p| f(p, &z));
    r
}

pub fn check_encoder(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig::compression(32, 16, 4);
    let mut params: ModelParams<f64> = init_params(&cfg, seed).unwrap();
    jitter_biases(&mut params, &mut rng);
    let patch = random_matrix(&mut rng, 32, 3, 2.0);
    let w = Array1::from_shape_simple_fn(4, || rng.random_range(-1.0..1.0));
    let f = |p: &ModelParams<f64>, x: &Array2<f64>| {
        p.encoder.forward(x.view(), cfg.group_size).0.dot(&w)
    };
    let (_, trace) = params.encoder.forward(patch.view(), cfg.group_size);
    let mut g = ModelParams::zeros(&cfg);
    let dpatch = params.encoder.backward(&trace, w.view(), &mut g.encoder);
    let mut r = GradReport::new("encoder (set abstraction + pointnet)");
    check_array(&mut r, &patch, &dpatch, |x| f(&params, x));
    check_params(&mut r, &params, &g, 12, &mut rng, |p| f(p, &patch));
    r
}

/// The composed objective at P = 2, K = 32, d = 4.
pub fn check_batch_loss(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig::compression(32, 16, 4);
    let mut params: ModelParams<f64> = init_params(&cfg, seed).unwrap();
    jitter_biases(&mut params, &mut rng);
    let patches: Vec<Array2<f64>> = (0..2).map(|_| random_matrix(&mut rng, 32, 3, 2.0)).collect();
    let noise = random_matrix(&mut rng, 2, 4, 0.5);
    let lambda = 0.1;
    let f = |p: &ModelParams<f64>| {
        batch_loss_with_noise(&patches, p, &cfg, lambda, &noise)
            .unwrap()
            .0
            .loss
    };
    let (_, g) = batch_loss_with_noise(&patches, &params, &cfg, lambda, &noise).unwrap();
    let mut r = GradReport::new("batch_loss (P=2, K=32, d=4)");
    check_params(&mut r, &params, &g, 16, &mut rng, f);
    r
}

/// Upsampler objective (Chamfer against dense targets, no rate term) with
/// narrowed layers: K=16, M=2, d=4.
pub fn check_upsampler(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = ModelConfig::upsampler(16, 2, 4);
    cfg.pn_widths = vec![16, 24, 4];
    cfg.dec_widths = vec![24, 16];
    let mut params: ModelParams<f64> = init_params(&cfg, seed).unwrap();
    jitter_biases(&mut params, &mut rng);
    let inputs: Vec<Array2<f64>> = (0..2).map(|_| random_matrix(&mut rng, 16, 3, 2.0)).collect();
    let targets: Vec<Array2<f64>> = (0..2).map(|_| random_matrix(&mut rng, 32, 3, 2.0)).collect();
    let none = Array2::zeros((0, 0));
    let f = |p: &ModelParams<f64>| {
        batch_loss_with_targets(&inputs, &targets, p, &cfg, 0.0, &none)
            .unwrap()
            .0
            .loss
    };
    let (_, g) = batch_loss_with_targets(&inputs, &targets, &params, &cfg, 0.0, &none).unwrap();
    let mut r = GradReport::new("upsampler loss (K=16, M=2, d=4)");
    check_params(&mut r, &params, &g, 16, &mut rng, f);
    r
}

pub fn gradient_suite(seed: u64) -> Vec<GradReport> {
    vec![
        check_dense(seed),
        check_mlp(seed),
        check_group_max(seed),
        check_chamfer(seed),
        check_entropy(seed),
        check_decoder(seed),
        check_encoder(seed),
        check_batch_loss(seed),
        check_upsampler(seed),
    ]
}
