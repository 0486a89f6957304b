//! Analysis transform: per-point set abstraction followed by a PointNet stage.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use super::layers::{group_max, group_max_backward, Mlp, MlpTrace};
use super::Real;
use crate::patching::knn;

/// Per-point set abstraction (group + shared MLP + max) and a PointNet stage
/// (shared MLP + max over the patch).
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<F> {
    pub set_abstraction: Mlp<F>,
    pub pointnet: Mlp<F>,
}

/// Intermediate values of one encoder pass, needed for the backward pass.
#[derive(Clone, Debug)]
pub struct EncoderTrace<F> {
    groups: Vec<usize>,
    group_size: usize,
    sa: MlpTrace<F>,
    sa_argmax: Vec<usize>,
    pn: MlpTrace<F>,
    pn_argmax: Vec<usize>,
}

/// For each point, the indices of its `group_size` nearest neighbors inside
/// the patch (itself included), flattened point-major.
pub fn group_indices<F: Real>(patch: ArrayView2<F>, group_size: usize) -> Vec<usize> {
    let pts: Vec<[F; 3]> = patch
        .rows()
        .into_iter()
        .map(|r| [r[0], r[1], r[2]])
        .collect();
    let mut out = Vec::with_capacity(pts.len() * group_size);
    for q in &pts {
        out.extend(knn(&pts, q, group_size).expect("group size validated against K"));
    }
    out
}

impl<F: Real> Encoder<F> {
    pub fn zeros(sa_widths: &[usize], pn_widths: &[usize]) -> Self {
        let d_feat = *sa_widths.last().expect("non-empty SA widths");
        Self {
            set_abstraction: Mlp::zeros(3, sa_widths, true),
            pointnet: Mlp::zeros(d_feat, pn_widths, false),
        }
    }

    pub fn glorot<R: Rng>(sa_widths: &[usize], pn_widths: &[usize], rng: &mut R) -> Self {
        let d_feat = *sa_widths.last().expect("non-empty SA widths");
        Self {
            set_abstraction: Mlp::glorot(3, sa_widths, true, rng),
            pointnet: Mlp::glorot(d_feat, pn_widths, false, rng),
        }
    }

    /// Maps a `K x 3` patch to its `d`-dimensional latent.
    pub fn forward(&self, patch: ArrayView2<F>, group_size: usize) -> (Array1<F>, EncoderTrace<F>) {
        let k = patch.nrows();
        let groups = group_indices(patch, group_size);
        let mut offsets = Array2::zeros((k * group_size, 3));
        for (row, &nb) in groups.iter().enumerate() {
            let center = row / group_size;
            for a in 0..3 {
                offsets[[row, a]] = patch[[nb, a]] - patch[[center, a]];
            }
        }
        let sa = self.set_abstraction.forward(offsets);
        let (features, sa_argmax) = group_max(sa.output(), group_size);
        let pn = self.pointnet.forward(features);
        let (pooled, pn_argmax) = group_max(pn.output(), k);
        let latent = pooled.row(0).to_owned();
        (
            latent,
            EncoderTrace {
                groups,
                group_size,
                sa,
                sa_argmax,
                pn,
                pn_argmax,
            },
        )
    }

    /// Accumulates parameter gradients and returns `dL/dpatch`.
    pub fn backward(
        &self,
        trace: &EncoderTrace<F>,
        d_latent: ArrayView1<F>,
        grad: &mut Encoder<F>,
    ) -> Array2<F> {
        let g = trace.group_size;
        let k = trace.groups.len() / g;
        let d_pooled = d_latent.to_owned().insert_axis(ndarray::Axis(0));
        let d_pn_out = group_max_backward(&d_pooled, &trace.pn_argmax, k);
        let d_features = self
            .pointnet
            .backward(&trace.pn, d_pn_out, &mut grad.pointnet);
        let d_sa_out = group_max_backward(&d_features, &trace.sa_argmax, k * g);
        let d_offsets =
            self.set_abstraction
                .backward(&trace.sa, d_sa_out, &mut grad.set_abstraction);
        let mut d_patch = Array2::zeros((k, 3));
        for (row, &nb) in trace.groups.iter().enumerate() {
            let center = row / g;
            for a in 0..3 {
                let v = d_offsets[[row, a]];
                d_patch[[nb, a]] += v;
                d_patch[[center, a]] -= v;
            }
        }
        d_patch
    }

    pub fn map<G: Real>(&self, f: impl Fn(F) -> G + Copy) -> Encoder<G> {
        Encoder {
            set_abstraction: self.set_abstraction.map(f),
            pointnet: self.pointnet.map(f),
        }
    }
}
