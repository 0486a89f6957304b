//! Fully factorized density model: one learned monotone CDF per latent
//! channel, `c(x) = sigmoid(f(x))` where `f` is a tiny 1→3→3→3→1 network with
//! softplus-positive matrices and tanh-gated nonlinearities.

use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;

use crate::network::{Real, TensorRef};

/// Layer widths of `f`.
pub const FILTERS: [usize; 5] = [1, 3, 3, 3, 1];
const LAYERS: usize = FILTERS.len() - 1;
/// Initial spread of the density, in latent units.
const INIT_SCALE: f64 = 10.0;
/// Smallest likelihood reported; below it the gradient is zero.
pub const LIKELIHOOD_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyModel<F> {
    /// Pre-softplus matrices, `(channels, out, in)` per layer.
    pub matrices: Vec<Array3<F>>,
    /// `(channels, out)` per layer.
    pub biases: Vec<Array2<F>>,
    /// tanh gates, `(channels, out)` for every layer but the last.
    pub factors: Vec<Array2<F>>,
}

/// Forward values of `f` for one scalar, kept for the backward pass.
struct Trace<F> {
    inputs: [[F; 3]; LAYERS],
    tanh: [[F; 3]; LAYERS - 1],
}

fn softplus<F: Real>(x: F) -> F {
    // log(1 + e^x) without overflow
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

impl<F: Real> EntropyModel<F> {
    pub fn zeros(channels: usize) -> Self {
        let mut matrices = Vec::new();
        let mut biases = Vec::new();
        let mut factors = Vec::new();
        for i in 0..LAYERS {
            matrices.push(Array3::zeros((channels, FILTERS[i + 1], FILTERS[i])));
            biases.push(Array2::zeros((channels, FILTERS[i + 1])));
            if i + 1 < LAYERS {
                factors.push(Array2::zeros((channels, FILTERS[i + 1])));
            }
        }
        Self {
            matrices,
            biases,
            factors,
        }
    }

    /// Starts every channel as a broad unimodal density (roughly logistic
    /// with scale `INIT_SCALE`); biases are jittered in (-0.5, 0.5).
    pub fn init<R: Rng>(channels: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(channels);
        let scale = INIT_SCALE.powf(1.0 / LAYERS as f64);
        for i in 0..LAYERS {
            let v = (1.0 / scale / FILTERS[i + 1] as f64).exp_m1().ln();
            m.matrices[i].fill(F::of(v));
            m.biases[i].mapv_inplace(|_| F::of(rng.random_range(-0.5..0.5)));
        }
        m
    }

    pub fn channels(&self) -> usize {
        self.biases[0].nrows()
    }

    pub fn map<G: Real>(&self, f: impl Fn(F) -> G + Copy) -> EntropyModel<G> {
        EntropyModel {
            matrices: self.matrices.iter().map(|a| a.mapv(f)).collect(),
            biases: self.biases.iter().map(|a| a.mapv(f)).collect(),
            factors: self.factors.iter().map(|a| a.mapv(f)).collect(),
        }
    }

    pub fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a, F>>) {
        let groups = [
            ("matrix", self.matrices.iter().map(|a| (a.shape().to_vec(), a.as_slice())).collect::<Vec<_>>()),
            ("bias", self.biases.iter().map(|a| (a.shape().to_vec(), a.as_slice())).collect()),
            ("factor", self.factors.iter().map(|a| (a.shape().to_vec(), a.as_slice())).collect()),
        ];
        for (kind, tensors) in groups {
            for (i, (shape, data)) in tensors.into_iter().enumerate() {
                out.push(TensorRef {
                    name: format!("{prefix}.{kind}.{i}"),
                    shape,
                    data: data.expect("standard layout"),
                });
            }
        }
    }

    pub fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [F]>) {
        for a in &mut self.matrices {
            out.push(a.as_slice_mut().expect("standard layout"));
        }
        for a in &mut self.biases {
            out.push(a.as_slice_mut().expect("standard layout"));
        }
        for a in &mut self.factors {
            out.push(a.as_slice_mut().expect("standard layout"));
        }
    }

    fn forward(&self, c: usize, x: F) -> (F, Trace<F>) {
        let zero = F::zero();
        let mut trace = Trace {
            inputs: [[zero; 3]; LAYERS],
            tanh: [[zero; 3]; LAYERS - 1],
        };
        let mut h = [zero; 3];
        h[0] = x;
        for i in 0..LAYERS {
            trace.inputs[i] = h;
            let (n_out, n_in) = (FILTERS[i + 1], FILTERS[i]);
            let mut u = [zero; 3];
            for j in 0..n_out {
                let mut acc = self.biases[i][[c, j]];
                for k in 0..n_in {
                    acc += softplus(self.matrices[i][[c, j, k]]) * h[k];
                }
                u[j] = acc;
            }
            if i + 1 < LAYERS {
                for j in 0..n_out {
                    let t = u[j].tanh();
                    trace.tanh[i][j] = t;
                    u[j] += self.factors[i][[c, j]].tanh() * t;
                }
            }
            h = u;
        }
        (h[0], trace)
    }

    /// Accumulates parameter gradients for `d_logit` and returns `d/dx`.
    fn backward(&self, c: usize, trace: &Trace<F>, d_logit: F, grad: &mut EntropyModel<F>) -> F {
        let zero = F::zero();
        let mut dh = [zero; 3];
        dh[0] = d_logit;
        for i in (0..LAYERS).rev() {
            let (n_out, n_in) = (FILTERS[i + 1], FILTERS[i]);
            let mut du = dh;
            if i + 1 < LAYERS {
                for j in 0..n_out {
                    let t = trace.tanh[i][j];
                    let ta = self.factors[i][[c, j]].tanh();
                    grad.factors[i][[c, j]] += dh[j] * t * (F::one() - ta * ta);
                    du[j] = dh[j] * (F::one() + ta * (F::one() - t * t));
                }
            }
            let h = &trace.inputs[i];
            let mut dx = [zero; 3];
            for j in 0..n_out {
                grad.biases[i][[c, j]] += du[j];
                for k in 0..n_in {
                    let raw = self.matrices[i][[c, j, k]];
                    grad.matrices[i][[c, j, k]] += du[j] * h[k] * sigmoid(raw);
                    dx[k] += du[j] * softplus(raw);
                }
            }
            dh = dx;
        }
        dh[0]
    }

    /// Pre-sigmoid cumulative value `f_c(x)`.
    pub fn logit(&self, c: usize, x: F) -> F {
        self.forward(c, x).0
    }

    pub fn cdf(&self, c: usize, x: F) -> F {
        sigmoid(self.logit(c, x))
    }

    /// Probability mass of the unit interval centered on `x`, floored at
    /// [`LIKELIHOOD_FLOOR`]. Differences are taken on whichever sigmoid tail
    /// keeps precision.
    pub fn likelihood(&self, c: usize, x: F) -> F {
        let half = F::of(0.5);
        let lo = self.logit(c, x - half);
        let up = self.logit(c, x + half);
        raw_mass(lo, up).max(F::of(LIKELIHOOD_FLOOR))
    }

    /// `-log2 p(x)` for one element, accumulating `scale * d bits / d theta`
    /// into `grad` and returning `(bits, scale * d bits / dx)`.
    pub fn bits_with_grad(&self, c: usize, x: F, scale: F, grad: &mut EntropyModel<F>) -> (F, F) {
        let half = F::of(0.5);
        let (lo, t_lo) = self.forward(c, x - half);
        let (up, t_up) = self.forward(c, x + half);
        let p = raw_mass(lo, up);
        let floor = F::of(LIKELIHOOD_FLOOR);
        if p < floor {
            return (-floor.log2(), F::zero());
        }
        let bits = -p.log2();
        let d_p = -scale / (p * F::of(std::f64::consts::LN_2));
        // d sigma(u) / du = sigma(u) sigma(-u), identical on both branches
        let d_up = d_p * sigmoid(up) * sigmoid(-up);
        let d_lo = -d_p * sigmoid(lo) * sigmoid(-lo);
        let dx = self.backward(c, &t_up, d_up, grad) + self.backward(c, &t_lo, d_lo, grad);
        (bits, dx)
    }
}

fn raw_mass<F: Real>(lo: F, up: F) -> F {
    if lo + up > F::zero() {
        sigmoid(-lo) - sigmoid(-up)
    } else {
        sigmoid(up) - sigmoid(lo)
    }
}

/// Element-wise likelihoods of a `P x d` latent matrix.
pub fn likelihood<F: Real>(model: &EntropyModel<F>, z: ArrayView2<F>) -> Array2<F> {
    Array2::from_shape_fn(z.dim(), |(i, c)| model.likelihood(c, z[[i, c]]))
}

/// Average bits per patch, `(1/P) sum -log2 p`.
pub fn rate_bits<F: Real>(model: &EntropyModel<F>, z: ArrayView2<F>) -> F {
    let p = z.nrows().max(1);
    let total: F = z
        .indexed_iter()
        .map(|((_, c), &v)| -model.likelihood(c, v).log2())
        .sum();
    total / F::of(p as f64)
}

/// [`rate_bits`] plus its gradient: parameter gradients accumulate into
/// `grad`, the latent gradient is returned.
pub fn rate_bits_with_grad<F: Real>(
    model: &EntropyModel<F>,
    z: ArrayView2<F>,
    grad: &mut EntropyModel<F>,
) -> (F, Array2<F>) {
    let scale = F::one() / F::of(z.nrows().max(1) as f64);
    let mut dz = Array2::zeros(z.dim());
    let mut total = F::zero();
    for ((i, c), &v) in z.indexed_iter() {
        let (bits, d) = model.bits_with_grad(c, v, scale, grad);
        total += bits;
        dz[[i, c]] = d;
    }
    (total * scale, dz)
}
