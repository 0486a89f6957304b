use ndarray::{linalg::general_mat_mul, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::Real;

/// Fully connected layer `y = x W^T + b` applied row-wise. `weight` is
/// `(out, in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Dense<F> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((output, input), || {
            F::of(rng.random_range(-bound..=bound))
        });
        Self {
            weight,
            bias: Array1::zeros(output),
        }
    }

    pub fn input_width(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<F>, dy: ArrayView2<F>, grad: &mut Dense<F>) -> Array2<F> {
        general_mat_mul(F::one(), &dy.t(), &x, F::one(), &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    pub fn map<G: Real>(&self, f: impl Fn(F) -> G) -> Dense<G> {
        Dense {
            weight: self.weight.mapv(&f),
            bias: self.bias.mapv(&f),
        }
    }
}

/// Shared per-row MLP. ReLU follows every hidden layer, and the last layer
/// too when `relu_last` is set.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Dense<F>>,
    pub relu_last: bool,
}

/// Activations recorded by [`Mlp::forward`]: `acts[0]` is the input and
/// `acts[i + 1]` the (activated) output of layer `i`.
#[derive(Clone, Debug)]
pub struct MlpTrace<F> {
    acts: Vec<Array2<F>>,
}

impl<F> MlpTrace<F> {
    pub fn output(&self) -> &Array2<F> {
        self.acts.last().expect("trace always holds the input")
    }
}

pub(crate) fn relu_inplace<F: Real>(x: &mut Array2<F>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

impl<F: Real> Mlp<F> {
    pub fn zeros(input: usize, widths: &[usize], relu_last: bool) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input;
        for &w in widths {
            layers.push(Dense::zeros(prev, w));
            prev = w;
        }
        Self { layers, relu_last }
    }

    pub fn glorot<R: Rng>(input: usize, widths: &[usize], relu_last: bool, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input;
        for &w in widths {
            layers.push(Dense::glorot(prev, w, rng));
            prev = w;
        }
        Self { layers, relu_last }
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.relu_last
    }

    pub fn forward(&self, input: Array2<F>) -> MlpTrace<F> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(acts[i].view());
            if self.activated(i) {
                relu_inplace(&mut y);
            }
            acts.push(y);
        }
        MlpTrace { acts }
    }

    /// Backpropagates `d_out` through the recorded pass. ReLU uses the
    /// subgradient 0 at 0.
    pub fn backward(&self, trace: &MlpTrace<F>, d_out: Array2<F>, grad: &mut Mlp<F>) -> Array2<F> {
        let mut g = d_out;
        for i in (0..self.layers.len()).rev() {
            if self.activated(i) {
                ndarray::Zip::from(&mut g)
                    .and(&trace.acts[i + 1])
                    .for_each(|g, &a| {
                        if a <= F::zero() {
                            *g = F::zero();
                        }
                    });
            }
            g = self.layers[i].backward(trace.acts[i].view(), g.view(), &mut grad.layers[i]);
        }
        g
    }

    pub fn map<G: Real>(&self, f: impl Fn(F) -> G + Copy) -> Mlp<G> {
        Mlp {
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
            relu_last: self.relu_last,
        }
    }
}

/// Column-wise max over consecutive blocks of `group` rows. Returns the pooled
/// matrix and, for each output cell, the winning source row (lowest on ties).
pub fn group_max<F: Real>(x: &Array2<F>, group: usize) -> (Array2<F>, Vec<usize>) {
    let rows = x.nrows() / group;
    let cols = x.ncols();
    let mut out = Array2::zeros((rows, cols));
    let mut arg = vec![0usize; rows * cols];
    for r in 0..rows {
        let block = x.slice(ndarray::s![r * group..(r + 1) * group, ..]);
        let mut best = block.row(0).to_owned();
        let mut best_row = vec![r * group; cols];
        for t in 1..group {
            for (c, &v) in block.row(t).iter().enumerate() {
                if v > best[c] {
                    best[c] = v;
                    best_row[c] = r * group + t;
                }
            }
        }
        out.row_mut(r).assign(&best);
        arg[r * cols..(r + 1) * cols].copy_from_slice(&best_row);
    }
    (out, arg)
}

/// Routes pooled gradients back to the recorded argmax rows.
pub fn group_max_backward<F: Real>(
    d_out: &Array2<F>,
    argmax: &[usize],
    input_rows: usize,
) -> Array2<F> {
    let cols = d_out.ncols();
    let mut dx = Array2::zeros((input_rows, cols));
    for ((r, c), &g) in d_out.indexed_iter() {
        dx[[argmax[r * cols + c], c]] += g;
    }
    dx
}
