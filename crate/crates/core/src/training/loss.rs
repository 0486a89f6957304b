use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;

use super::chamfer::chamfer_with_grad;
use super::{Result, TrainingError};
use crate::entropy::uniform_noise;
use crate::network::{
    decoder_backward, decoder_forward_traced, encoder_forward_traced, ModelConfig, ModelKind,
    ModelParams, Real,
};

/// Batch-averaged terms of `L = D + lambda * R`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss<F> {
    /// Mean per-patch Chamfer distance.
    pub distortion: F,
    /// Mean bits per patch.
    pub rate: F,
    pub loss: F,
}

struct PatchTerms<F> {
    distortion: F,
    bits: F,
    grad: ModelParams<F>,
}

fn patch_terms<F: Real>(
    patch: ArrayView2<F>,
    target: ArrayView2<F>,
    noise: Option<ndarray::ArrayView1<F>>,
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    lambda: F,
    inv_p: F,
) -> Result<PatchTerms<F>> {
    let mut grad = ModelParams::zeros(cfg);
    let (z, enc_trace) = encoder_forward_traced(patch, params, cfg)?;
    let z_tilde = match noise {
        Some(u) => &z + &u,
        None => z,
    };
    let (out, dec_trace) = decoder_forward_traced(z_tilde.view(), params, cfg)?;
    let (distortion, _, d_out) = chamfer_with_grad(target, out.view())?;
    let mut d_latent = decoder_backward(params, &dec_trace, d_out * inv_p, &mut grad);
    let mut bits = F::zero();
    if let (Some(em), Some(gem)) = (&params.entropy, &mut grad.entropy) {
        for (c, &v) in z_tilde.iter().enumerate() {
            let (b, dx) = em.bits_with_grad(c, v, lambda * inv_p, gem);
            bits += b;
            d_latent[c] += dx;
        }
    }
    // noise is additive, so its Jacobian is the identity
    params
        .encoder
        .backward(&enc_trace, d_latent.view(), &mut grad.encoder);
    Ok(PatchTerms {
        distortion,
        bits,
        grad,
    })
}

/// Loss and parameter gradients for a batch of `K x 3` patches with the
/// given `P x d` quantization noise.
pub fn batch_loss_with_noise<F: Real>(
    patches: &[Array2<F>],
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    lambda: F,
    noise: &Array2<F>,
) -> Result<(BatchLoss<F>, ModelParams<F>)> {
    batch_loss_with_targets(patches, patches, params, cfg, lambda, noise)
}

/// General form: patch `i` is encoded from `inputs[i]` and its decoding is
/// compared against `targets[i]`. Noise is ignored for upsampler models.
///
/// Patches are processed in parallel; per-patch gradients are reduced in
/// batch order, so results do not depend on the thread count.
pub fn batch_loss_with_targets<F: Real>(
    patches: &[Array2<F>],
    targets: &[Array2<F>],
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    lambda: F,
    noise: &Array2<F>,
) -> Result<(BatchLoss<F>, ModelParams<F>)> {
    if patches.is_empty() {
        return Err(TrainingError::Config("empty batch".into()));
    }
    if targets.len() != patches.len() {
        return Err(TrainingError::Config(format!(
            "{} targets for {} patches",
            targets.len(),
            patches.len()
        )));
    }
    let compress = cfg.kind == ModelKind::Compression;
    if compress && noise.dim() != (patches.len(), cfg.bottleneck) {
        return Err(TrainingError::Config(format!(
            "noise is {:?}, expected ({}, {})",
            noise.dim(),
            patches.len(),
            cfg.bottleneck
        )));
    }
    let inv_p = F::one() / F::of(patches.len() as f64);
    let terms: Vec<PatchTerms<F>> = patches
        .par_iter()
        .enumerate()
        .map(|(i, patch)| {
            let u = compress.then(|| noise.row(i));
            patch_terms(patch.view(), targets[i].view(), u, params, cfg, lambda, inv_p)
        })
        .collect::<Result<_>>()?;

    let mut grad = ModelParams::zeros(cfg);
    let mut distortion = F::zero();
    let mut bits = F::zero();
    for t in &terms {
        distortion += t.distortion;
        bits += t.bits;
        grad.add_assign(&t.grad);
    }
    let distortion = distortion * inv_p;
    let rate = bits * inv_p;
    Ok((
        BatchLoss {
            distortion,
            rate,
            loss: distortion + lambda * rate,
        },
        grad,
    ))
}

/// [`batch_loss_with_noise`] with `U(-0.5, 0.5)` noise drawn from `rng`.
pub fn batch_loss<F: Real, R: Rng>(
    patches: &[Array2<F>],
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    lambda: F,
    rng: &mut R,
) -> Result<(BatchLoss<F>, ModelParams<F>)> {
    let noise = uniform_noise(patches.len(), cfg.bottleneck, rng);
    batch_loss_with_noise(patches, params, cfg, lambda, &noise)
}
