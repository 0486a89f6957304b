//! The patch autoencoder: analysis transform (set abstraction + PointNet),
//! synthesis transform (fully connected decoder) and parameter management.

mod checkpoint;
mod encoder;
mod layers;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use encoder::{group_indices, Encoder, EncoderTrace};
pub use layers::{group_max, group_max_backward, Dense, Mlp, MlpTrace};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::entropy::EntropyModel;

/// Scalar type usable by every differentiable op (`f32` for training and
/// inference, `f64` for gradient checking).
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    fn of(x: f64) -> Self {
        x as f32
    }
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NetworkError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// Autoencoder with a quantized bottleneck and entropy model.
    Compression,
    /// Patch upsampler: no quantization, no entropy model.
    Upsampler,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Points per encoder patch (K).
    pub patch_points: usize,
    /// Points produced per patch by the decoder (k, or M*K when upsampling).
    pub output_points: usize,
    /// Bottleneck width (d).
    pub bottleneck: usize,
    /// Neighbors per point in set abstraction.
    pub group_size: usize,
    pub sa_widths: Vec<usize>,
    /// PointNet widths; the last entry equals `bottleneck`.
    pub pn_widths: Vec<usize>,
    /// Hidden decoder widths; a final `output_points * 3` layer is implied.
    pub dec_widths: Vec<usize>,
}

pub const DEFAULT_GROUP_SIZE: usize = 8;
pub const SA_WIDTHS: [usize; 3] = [32, 64, 128];

impl ModelConfig {
    pub fn compression(patch_points: usize, output_points: usize, bottleneck: usize) -> Self {
        Self {
            kind: ModelKind::Compression,
            patch_points,
            output_points,
            bottleneck,
            group_size: DEFAULT_GROUP_SIZE,
            sa_widths: SA_WIDTHS.to_vec(),
            pn_widths: vec![64, 32, bottleneck],
            dec_widths: vec![128, 256],
        }
    }

    pub fn upsampler(patch_points: usize, multiple: usize, bottleneck: usize) -> Self {
        Self {
            kind: ModelKind::Upsampler,
            patch_points,
            output_points: multiple * patch_points,
            bottleneck,
            group_size: DEFAULT_GROUP_SIZE,
            sa_widths: SA_WIDTHS.to_vec(),
            pn_widths: vec![256, 512, bottleneck],
            dec_widths: vec![1024, 512],
        }
    }

    /// Per-point feature width after set abstraction (D).
    pub fn feature_width(&self) -> usize {
        self.sa_widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let widths = self
            .sa_widths
            .iter()
            .chain(&self.pn_widths)
            .chain(&self.dec_widths);
        if self.sa_widths.is_empty() || self.pn_widths.is_empty() || widths.clone().any(|&w| w == 0)
        {
            return Err(NetworkError::Config("all layer widths must be >= 1".into()));
        }
        if self.bottleneck == 0 || self.patch_points == 0 || self.output_points == 0 {
            return Err(NetworkError::Config("K, k and d must be >= 1".into()));
        }
        if self.pn_widths.last() != Some(&self.bottleneck) {
            return Err(NetworkError::Config(
                "last PointNet width must equal the bottleneck".into(),
            ));
        }
        if self.group_size == 0 || self.group_size > self.patch_points {
            return Err(NetworkError::Config(format!(
                "group size {} must be in [1, K = {}]",
                self.group_size, self.patch_points
            )));
        }
        Ok(())
    }

    fn decoder_widths(&self) -> Vec<usize> {
        let mut w = self.dec_widths.clone();
        w.push(self.output_points * 3);
        w
    }
}

/// Every learnable tensor of the encoder, decoder and (for compression
/// models) the entropy model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    pub encoder: Encoder<F>,
    pub decoder: Mlp<F>,
    pub entropy: Option<EntropyModel<F>>,
}

/// Borrowed view of one named tensor.
pub struct TensorRef<'a, F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [F],
}

fn push_mlp<'a, F: Real>(prefix: &str, mlp: &'a Mlp<F>, out: &mut Vec<TensorRef<'a, F>>) {
    for (i, layer) in mlp.layers.iter().enumerate() {
        out.push(TensorRef {
            name: format!("{prefix}.{i}.weight"),
            shape: layer.weight.shape().to_vec(),
            data: layer.weight.as_slice().expect("standard layout"),
        });
        out.push(TensorRef {
            name: format!("{prefix}.{i}.bias"),
            shape: layer.bias.shape().to_vec(),
            data: layer.bias.as_slice().expect("standard layout"),
        });
    }
}

fn push_mlp_mut<'a, F: Real>(mlp: &'a mut Mlp<F>, out: &mut Vec<&'a mut [F]>) {
    for layer in &mut mlp.layers {
        out.push(layer.weight.as_slice_mut().expect("standard layout"));
        out.push(layer.bias.as_slice_mut().expect("standard layout"));
    }
}

impl<F: Real> ModelParams<F> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            encoder: Encoder::zeros(&cfg.sa_widths, &cfg.pn_widths),
            decoder: Mlp::zeros(cfg.bottleneck, &cfg.decoder_widths(), false),
            entropy: (cfg.kind == ModelKind::Compression)
                .then(|| EntropyModel::zeros(cfg.bottleneck)),
        }
    }

    /// Tensors in a fixed order; names are stable across versions.
    pub fn tensors(&self) -> Vec<TensorRef<'_, F>> {
        let mut out = Vec::new();
        push_mlp("encoder.sa", &self.encoder.set_abstraction, &mut out);
        push_mlp("encoder.pn", &self.encoder.pointnet, &mut out);
        push_mlp("decoder", &self.decoder, &mut out);
        if let Some(em) = &self.entropy {
            em.push_tensors("entropy", &mut out);
        }
        out
    }

    /// Mutable slices in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        push_mlp_mut(&mut self.encoder.set_abstraction, &mut out);
        push_mlp_mut(&mut self.encoder.pointnet, &mut out);
        push_mlp_mut(&mut self.decoder, &mut out);
        if let Some(em) = &mut self.entropy {
            em.push_tensors_mut(&mut out);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn map<G: Real>(&self, f: impl Fn(F) -> G + Copy) -> ModelParams<G> {
        ModelParams {
            encoder: self.encoder.map(f),
            decoder: self.decoder.map(f),
            entropy: self.entropy.as_ref().map(|e| e.map(f)),
        }
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        self.map(|x| G::of(x.f64()))
    }

    pub fn add_assign(&mut self, other: &ModelParams<F>) {
        let src = other.tensors();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d += *s;
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Deterministic initialization: Glorot-uniform weights and zero biases for
/// the autoencoder; the entropy model starts as a wide unimodal density.
pub fn init_params<F: Real>(cfg: &ModelConfig, seed: u64) -> Result<ModelParams<F>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = Encoder::glorot(&cfg.sa_widths, &cfg.pn_widths, &mut rng);
    let decoder = Mlp::glorot(cfg.bottleneck, &cfg.decoder_widths(), false, &mut rng);
    let entropy = (cfg.kind == ModelKind::Compression)
        .then(|| EntropyModel::init(cfg.bottleneck, &mut rng));
    Ok(ModelParams {
        encoder,
        decoder,
        entropy,
    })
}

fn check_patch<F>(patch: &ArrayView2<F>, cfg: &ModelConfig) -> Result<()> {
    if patch.nrows() != cfg.patch_points || patch.ncols() != 3 {
        return Err(NetworkError::Shape(format!(
            "patch is {}x{}, expected {}x3",
            patch.nrows(),
            patch.ncols(),
            cfg.patch_points
        )));
    }
    Ok(())
}

/// Analysis transform of one `K x 3` patch.
pub fn encoder_forward<F: Real>(
    patch: ArrayView2<F>,
    params: &ModelParams<F>,
    cfg: &ModelConfig,
) -> Result<Array1<F>> {
    check_patch(&patch, cfg)?;
    Ok(params.encoder.forward(patch, cfg.group_size).0)
}

pub fn encoder_forward_traced<F: Real>(
    patch: ArrayView2<F>,
    params: &ModelParams<F>,
    cfg: &ModelConfig,
) -> Result<(Array1<F>, EncoderTrace<F>)> {
    check_patch(&patch, cfg)?;
    Ok(params.encoder.forward(patch, cfg.group_size))
}

/// Synthesis transform: latent -> `output_points x 3`, row `j` holding the
/// flat outputs `3j..3j+3`.
pub fn decoder_forward<F: Real>(
    latent: ArrayView1<F>,
    params: &ModelParams<F>,
    cfg: &ModelConfig,
) -> Result<Array2<F>> {
    Ok(decoder_forward_traced(latent, params, cfg)?.0)
}

pub fn decoder_forward_traced<F: Real>(
    latent: ArrayView1<F>,
    params: &ModelParams<F>,
    cfg: &ModelConfig,
) -> Result<(Array2<F>, MlpTrace<F>)> {
    if latent.len() != cfg.bottleneck {
        return Err(NetworkError::Shape(format!(
            "latent has length {}, expected {}",
            latent.len(),
            cfg.bottleneck
        )));
    }
    let trace = params
        .decoder
        .forward(latent.to_owned().insert_axis(ndarray::Axis(0)));
    let points = trace
        .output()
        .clone()
        .into_shape_with_order((cfg.output_points, 3))
        .map_err(|e| NetworkError::Shape(e.to_string()))?;
    Ok((points, trace))
}

/// Gradient of the decoder output (`k x 3`) back to the latent.
pub fn decoder_backward<F: Real>(
    params: &ModelParams<F>,
    trace: &MlpTrace<F>,
    d_points: Array2<F>,
    grad: &mut ModelParams<F>,
) -> Array1<F> {
    let width = d_points.len();
    let d_flat = d_points
        .into_shape_with_order((1, width))
        .expect("contiguous gradient");
    let d_latent = params.decoder.backward(trace, d_flat, &mut grad.decoder);
    d_latent.row(0).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn random_patch(k: usize, seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((k, 3), || rng.random_range(-4.0..4.0))
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::compression(64, 32, 8);
        let a: ModelParams<f32> = init_params(&cfg, 3).unwrap();
        let b: ModelParams<f32> = init_params(&cfg, 3).unwrap();
        let c: ModelParams<f32> = init_params(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn layer_shapes_and_bounds() {
        let cfg = ModelConfig::compression(256, 128, 16);
        let p: ModelParams<f32> = init_params(&cfg, 0).unwrap();
        assert_eq!(p.decoder.layers[0].weight.dim(), (128, 16));
        assert_eq!(p.decoder.layers[2].weight.dim(), (384, 256));
        for t in p.tensors() {
            if t.name.starts_with("entropy") {
                continue;
            }
            if t.name.ends_with("weight") {
                let bound = (6.0 / (t.shape[0] + t.shape[1]) as f32).sqrt();
                assert!(t.data.iter().all(|w| w.abs() <= bound), "{}", t.name);
            } else {
                assert!(t.data.iter().all(|&b| b == 0.0), "{}", t.name);
            }
        }
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = ModelConfig::compression(256, 128, 16);
        let p: ModelParams<f32> = init_params(&cfg, 0).unwrap();
        // (in + 1) * out summed by hand over every layer
        let sa = (3 + 1) * 32 + (32 + 1) * 64 + (64 + 1) * 128;
        let pn = (128 + 1) * 64 + (64 + 1) * 32 + (32 + 1) * 16;
        let dec = (16 + 1) * 128 + (128 + 1) * 256 + (256 + 1) * 384;
        assert_eq!(sa + pn + dec, 155_312);
        // entropy model per channel: 24 matrix + 10 bias + 9 factor entries
        assert_eq!(p.num_parameters(), 155_312 + 16 * 43);
    }

    #[test]
    fn encoder_output_width_and_permutation_invariance() {
        let cfg = ModelConfig::compression(256, 128, 16);
        let p: ModelParams<f32> = init_params(&cfg, 1).unwrap();
        let patch = random_patch(256, 9);
        let z = encoder_forward(patch.view(), &p, &cfg).unwrap();
        assert_eq!(z.len(), 16);
        let mut perm: Vec<usize> = (0..256).collect();
        perm.reverse();
        perm.swap(3, 100);
        let shuffled = patch.select(ndarray::Axis(0), &perm);
        let z2 = encoder_forward(shuffled.view(), &p, &cfg).unwrap();
        assert_eq!(z, z2);
    }

    #[test]
    fn encoder_rejects_wrong_patch_size() {
        let cfg = ModelConfig::compression(32, 16, 4);
        let p: ModelParams<f32> = init_params(&cfg, 1).unwrap();
        assert!(encoder_forward(random_patch(31, 0).view(), &p, &cfg).is_err());
    }

    #[test]
    fn zero_patch_is_deterministic() {
        let cfg = ModelConfig::compression(32, 16, 4);
        let p: ModelParams<f32> = init_params(&cfg, 1).unwrap();
        let zeros = Array2::<f32>::zeros((32, 3));
        let a = encoder_forward(zeros.view(), &p, &cfg).unwrap();
        let b = encoder_forward(zeros.view(), &p, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decoder_shape_and_zero_response() {
        let cfg = ModelConfig::compression(256, 128, 16);
        let p: ModelParams<f32> = init_params(&cfg, 1).unwrap();
        let z = Array1::<f32>::zeros(16);
        let out = decoder_forward(z.view(), &p, &cfg).unwrap();
        assert_eq!(out.dim(), (128, 3));
        // biases are zero at init, so a zero latent decodes to zeros
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(decoder_forward(Array1::<f32>::zeros(15).view(), &p, &cfg).is_err());
    }

    #[test]
    fn decoder_reshape_is_row_major() {
        let cfg = ModelConfig {
            dec_widths: vec![],
            ..ModelConfig::compression(4, 2, 1)
        };
        let mut p: ModelParams<f32> = ModelParams::zeros(&cfg);
        p.decoder.layers[0]
            .bias
            .assign(&ndarray::arr1(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
        let out = decoder_forward(Array1::zeros(1).view(), &p, &cfg).unwrap();
        assert_eq!(out, ndarray::arr2(&[[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::compression(4, 2, 3);
        assert!(cfg.validate().is_err()); // group size 8 > K
        cfg.group_size = 4;
        assert!(cfg.validate().is_ok());
        cfg.pn_widths = vec![64, 5];
        assert!(cfg.validate().is_err());
    }
}
