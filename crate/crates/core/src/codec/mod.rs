//! Encoder and decoder for whole clouds.
//!
//! Encoding normalizes the cloud into the 64-unit box, cuts `S = alpha*N/K`
//! FPS/KNN patches, pushes every patch through the analysis transform, rounds
//! the latent and range codes it with the model's frozen tables. Centroids go
//! out as fixed point. Decoding reverses this and always yields `S*k = N`
//! points.

mod container;

use ndarray::Array1;
use rayon::prelude::*;

pub use container::{
    dequantize_centroid, quantize_centroid, Bitstream, BppBreakdown, DEFAULT_CENTROID_BITS,
    FIXED_HEADER_BYTES, MAGIC, MAX_CENTROID_BITS, MIN_CENTROID_BITS, VERSION,
};

use crate::entropy::{hard_quantize, range_decode, range_encode, CodingTables, EntropyError};
use crate::geometry::{normalize_to_box, GeometryError, Point3, PointCloud};
use crate::network::{
    decoder_forward, encoder_forward, Checkpoint, ModelConfig, ModelKind, ModelParams,
    NetworkError,
};
use crate::patching::{assemble, extract_patches, PatchConfig, PatchError};
use crate::training::patch_matrix;

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("not a patchpc stream (wrong magic)")]
    Magic,
    #[error("unsupported stream version {0}")]
    Version(u8),
    #[error("truncated stream: {0}")]
    Truncated(String),
    #[error("truncated latent payload in patch {index}")]
    TruncatedPatch { index: usize },
    #[error("{0} trailing bytes after the last segment")]
    TrailingBytes(usize),
    #[error("invalid header: {0}")]
    Header(String),
    #[error("coding table digest mismatch: stream {stream:08x}, model {model:08x}")]
    DigestMismatch { stream: u32, model: u32 },
    #[error("model does not match stream: {0}")]
    ModelMismatch(String),
    #[error("unusable model: {0}")]
    Model(String),
    #[error("patch {index}: {source}")]
    Patch {
        index: usize,
        #[source]
        source: EntropyError,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Patching(#[from] PatchError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

pub type Result<T> = std::result::Result<T, CodecError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CodecSettings {
    /// Bits per centroid axis, in `[8, 32]`.
    pub centroid_bits: u8,
    /// FPS seed index.
    pub start_index: usize,
}

impl Default for CodecSettings {
    fn default() -> Self {
        Self {
            centroid_bits: DEFAULT_CENTROID_BITS,
            start_index: 0,
        }
    }
}

/// A trained compression model with its frozen coding tables.
#[derive(Clone, Debug)]
pub struct CodecModel {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub tables: CodingTables,
}

impl CodecModel {
    pub fn new(config: ModelConfig, params: ModelParams<f32>, tables: CodingTables) -> Result<Self> {
        if config.kind != ModelKind::Compression {
            return Err(CodecError::Model("not a compression model".into()));
        }
        config.validate()?;
        if config.output_points == 0 || config.patch_points % config.output_points != 0 {
            return Err(CodecError::Model(format!(
                "K = {} is not a multiple of k = {}",
                config.patch_points, config.output_points
            )));
        }
        if config.patch_points / config.output_points < 2 {
            return Err(CodecError::Model("K/k must be at least 2".into()));
        }
        if tables.num_channels() != config.bottleneck {
            return Err(CodecError::Model(format!(
                "{} coding tables for bottleneck {}",
                tables.num_channels(),
                config.bottleneck
            )));
        }
        Ok(Self {
            config,
            params,
            tables,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let tables = ckpt
            .tables
            .ok_or_else(|| CodecError::Model("checkpoint has no coding tables".into()))?;
        Self::new(ckpt.config, ckpt.params, tables)
    }

    /// Downsampling factor `K / k`.
    pub fn alpha(&self) -> usize {
        self.config.patch_points / self.config.output_points
    }

    pub fn patch_config(&self, n: usize) -> Result<PatchConfig> {
        Ok(PatchConfig::for_cloud(n, self.alpha(), self.config.patch_points)?)
    }

    pub fn digest(&self) -> u32 {
        self.tables.digest()
    }

    fn channels(&self) -> Vec<usize> {
        (0..self.config.bottleneck).collect()
    }
}

/// Rounded latents of every patch, as they would be coded.
pub fn encode_latents(
    model: &CodecModel,
    cloud: &PointCloud,
    settings: &CodecSettings,
) -> Result<Vec<Vec<i32>>> {
    Ok(analyze(model, cloud, settings)?.0)
}

fn analyze(
    model: &CodecModel,
    cloud: &PointCloud,
    settings: &CodecSettings,
) -> Result<(Vec<Vec<i32>>, Vec<Point3>, crate::geometry::ScaleParams)> {
    let pc = model.patch_config(cloud.len())?;
    let (norm, scale) = normalize_to_box(cloud)?;
    let (set, centroids) = extract_patches(&norm, &pc, settings.start_index)?;
    let latents = set
        .patches
        .par_iter()
        .map(|p| {
            let z = encoder_forward(patch_matrix(p).view(), &model.params, &model.config)?;
            Ok(hard_quantize(z.view()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((latents, centroids.positions, scale))
}

pub fn encode(model: &CodecModel, cloud: &PointCloud, settings: &CodecSettings) -> Result<Bitstream> {
    if !(MIN_CENTROID_BITS..=MAX_CENTROID_BITS).contains(&settings.centroid_bits) {
        return Err(CodecError::Header(format!(
            "centroid precision {} outside [8, 32]",
            settings.centroid_bits
        )));
    }
    let n = cloud.len();
    if n > u32::MAX as usize {
        return Err(CodecError::Header("cloud too large".into()));
    }
    let (latents, centroids, scale) = analyze(model, cloud, settings)?;
    let channels = model.channels();
    let segments = latents
        .par_iter()
        .enumerate()
        .map(|(index, z)| {
            range_encode(z, &channels, &model.tables).map_err(|source| CodecError::Patch { index, source })
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = &model.config;
    let bs = Bitstream {
        num_points: n as u32,
        patches: latents.len() as u32,
        patch_points: cfg.patch_points as u32,
        decoded_points: cfg.output_points as u32,
        bottleneck: cfg.bottleneck as u32,
        scale,
        centroid_bits: settings.centroid_bits,
        table_digest: model.digest(),
        centroids: centroids
            .iter()
            .map(|c| quantize_centroid(c, settings.centroid_bits))
            .collect(),
        segments,
    };
    bs.validate()?;
    Ok(bs)
}

fn check_model(model: &CodecModel, bs: &Bitstream) -> Result<()> {
    bs.validate()?;
    if bs.table_digest != model.digest() {
        return Err(CodecError::DigestMismatch {
            stream: bs.table_digest,
            model: model.digest(),
        });
    }
    let cfg = &model.config;
    let want = (cfg.patch_points as u32, cfg.output_points as u32, cfg.bottleneck as u32);
    let got = (bs.patch_points, bs.decoded_points, bs.bottleneck);
    if want != got {
        return Err(CodecError::ModelMismatch(format!(
            "stream has (K, k, d) = {got:?}, model has {want:?}"
        )));
    }
    Ok(())
}

/// Entropy-decoded latent symbols of every patch.
pub fn decode_latents(model: &CodecModel, bs: &Bitstream) -> Result<Vec<Vec<i32>>> {
    check_model(model, bs)?;
    let channels = model.channels();
    bs.segments
        .par_iter()
        .enumerate()
        .map(|(index, seg)| {
            range_decode(seg, &channels, &model.tables).map_err(|source| match source {
                EntropyError::Truncated => CodecError::TruncatedPatch { index },
                source => CodecError::Patch { index, source },
            })
        })
        .collect()
}

pub fn decode(model: &CodecModel, bs: &Bitstream) -> Result<PointCloud> {
    let latents = decode_latents(model, bs)?;
    let patches = latents
        .par_iter()
        .map(|z| {
            let z = Array1::from_iter(z.iter().map(|&v| v as f32));
            let pts = decoder_forward(z.view(), &model.params, &model.config)?;
            Ok(pts
                .rows()
                .into_iter()
                .map(|r| [r[0] as f64, r[1] as f64, r[2] as f64])
                .collect::<Vec<Point3>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let centroids: Vec<Point3> = bs
        .centroids
        .iter()
        .map(|q| dequantize_centroid(q, bs.centroid_bits))
        .collect();
    let cloud = assemble(&patches, &centroids)?;
    Ok(bs.scale.denormalize(&cloud))
}

pub fn encode_bytes(model: &CodecModel, cloud: &PointCloud, settings: &CodecSettings) -> Result<Vec<u8>> {
    encode(model, cloud, settings)?.serialize()
}

pub fn decode_bytes(model: &CodecModel, data: &[u8]) -> Result<PointCloud> {
    decode(model, &Bitstream::parse(data)?)
}

/// Ideal latent bits for a set of rounded latents under the coding tables.
pub fn estimated_latent_bits(model: &CodecModel, latents: &[Vec<i32>]) -> f64 {
    latents
        .iter()
        .flat_map(|z| z.iter().enumerate())
        .map(|(c, &s)| model.tables.channels[c].cost_bits(s))
        .sum()
}
