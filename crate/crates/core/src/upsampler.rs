//! Patch upsampling: the compression network with quantization and the
//! entropy model removed and a wider decoder emitting `M*K` points per patch.
//! A cloud of N points comes back with `M * alpha * N` points.
//!
//! Supervision pairs each sparse patch with the `M*K` nearest neighbors of the
//! same centroid in a denser sampling of the same surface.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;

use crate::geometry::{
    load_off_and_sample, normalize_to_box, synth_shape, Point3, PointCloud, ScaleParams, ShapeSpec,
};
use crate::network::{
    decoder_forward, encoder_forward, init_params, Checkpoint, ModelConfig, ModelKind, ModelParams,
    NetworkError,
};
use crate::patching::{assemble, extract_patches, knn, PatchConfig};
use crate::training::{
    mesh_dir_files, patch_matrix, run_loop, BatchSource, DatasetSpec, LossReport, Result,
    TrainConfig, TrainOutcome, TrainingError,
};

pub const DEFAULT_MULTIPLE: usize = 4;
pub const DEFAULT_ALPHA: usize = 2;
// decorrelates the dense sampling from the sparse one
const DENSE_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpsampleConfig {
    /// Upsampling multiple M.
    pub multiple: usize,
    pub alpha: usize,
    pub patch_points: usize,
    pub bottleneck: usize,
}

impl UpsampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.multiple < 2 {
            return Err(TrainingError::Config(format!(
                "upsampling multiple must be >= 2, got {}",
                self.multiple
            )));
        }
        self.model().validate()?;
        Ok(())
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig::upsampler(self.patch_points, self.multiple, self.bottleneck)
    }

    pub fn patch_config(&self, n: usize) -> Result<PatchConfig> {
        Ok(PatchConfig::for_cloud(n, self.alpha, self.patch_points)?)
    }

    /// Output size for an N-point input.
    pub fn output_points(&self, n: usize) -> usize {
        self.multiple * self.alpha * n
    }

    /// Recovers M and K from an upsampler checkpoint's model.
    pub fn from_model(model: &ModelConfig, alpha: usize) -> Result<Self> {
        if model.kind != ModelKind::Upsampler {
            return Err(TrainingError::Config("not an upsampler model".into()));
        }
        if model.output_points % model.patch_points != 0 {
            return Err(TrainingError::Config(format!(
                "output {} is not a multiple of K = {}",
                model.output_points, model.patch_points
            )));
        }
        let cfg = Self {
            multiple: model.output_points / model.patch_points,
            alpha,
            patch_points: model.patch_points,
            bottleneck: model.bottleneck,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One patch -> `M*K x 3`, centroid relative.
pub fn upsample_forward<F: crate::network::Real>(
    patch: ArrayView2<F>,
    params: &ModelParams<F>,
    cfg: &ModelConfig,
) -> std::result::Result<Array2<F>, NetworkError> {
    if cfg.kind != ModelKind::Upsampler {
        return Err(NetworkError::Config("not an upsampler model".into()));
    }
    let z = encoder_forward(patch, params, cfg)?;
    decoder_forward(z.view(), params, cfg)
}

pub fn upsample(
    cloud: &PointCloud,
    params: &ModelParams<f32>,
    cfg: &UpsampleConfig,
) -> Result<PointCloud> {
    cfg.validate()?;
    let model = cfg.model();
    let pc = cfg.patch_config(cloud.len())?;
    let (norm, scale) = normalize_to_box(cloud)?;
    let (set, centroids) = extract_patches(&norm, &pc, 0)?;
    let decoded = set
        .patches
        .par_iter()
        .map(|p| {
            let out = upsample_forward(patch_matrix(p).view(), params, &model)?;
            Ok(out
                .rows()
                .into_iter()
                .map(|r| [r[0] as f64, r[1] as f64, r[2] as f64])
                .collect::<Vec<Point3>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let out = assemble(&decoded, &centroids.positions)?;
    Ok(scale.denormalize(&out))
}

/// Sparse training clouds with a dense sibling of `dense_factor` times as many
/// points sampled from the same surface.
pub fn dense_pairs(spec: &DatasetSpec, dense_factor: usize) -> Result<Vec<(PointCloud, PointCloud)>> {
    let pairs = match spec {
        DatasetSpec::Shapes(shapes) => shapes
            .iter()
            .map(|s| {
                let dense = ShapeSpec {
                    n: s.n * dense_factor,
                    seed: s.seed ^ DENSE_SEED_SALT,
                    ..*s
                };
                Ok((synth_shape(s)?, synth_shape(&dense)?))
            })
            .collect::<Result<Vec<_>>>()?,
        DatasetSpec::MeshDir { path, points, seed } => {
            let mut out = Vec::new();
            for (i, file) in mesh_dir_files(path)?.iter().enumerate() {
                if !file.extension().is_some_and(|e| e.eq_ignore_ascii_case("off")) {
                    return Err(TrainingError::Dataset(format!(
                        "{}: upsampler training needs meshes (.off) to draw dense samples",
                        file.display()
                    )));
                }
                let s = seed.wrapping_add(i as u64);
                out.push((
                    load_off_and_sample(file, *points, s)?,
                    load_off_and_sample(file, points * dense_factor, s ^ DENSE_SEED_SALT)?,
                ));
            }
            out
        }
    };
    if pairs.is_empty() {
        return Err(TrainingError::Dataset("dataset is empty".into()));
    }
    Ok(pairs)
}

/// Sparse patches and their dense targets per shape.
#[derive(Clone, Debug)]
pub struct UpsampleDataset {
    pub inputs: Vec<Vec<Array2<f32>>>,
    pub targets: Vec<Vec<Array2<f32>>>,
}

impl UpsampleDataset {
    /// Both clouds of a pair are normalized with the sparse cloud's box, as
    /// the sparse cloud is all that is available at inference.
    pub fn from_pairs(pairs: &[(PointCloud, PointCloud)], cfg: &UpsampleConfig) -> Result<Self> {
        let mut inputs = Vec::with_capacity(pairs.len());
        let mut targets = Vec::with_capacity(pairs.len());
        let dense_k = cfg.multiple * cfg.patch_points;
        for (sparse, dense) in pairs {
            let (norm, scale): (PointCloud, ScaleParams) = normalize_to_box(sparse)?;
            let dense = scale.normalize(dense);
            let pc = cfg.patch_config(sparse.len())?;
            let (set, centroids) = extract_patches(&norm, &pc, 0)?;
            let dense_pts = dense.points();
            let t = centroids
                .positions
                .par_iter()
                .map(|c| {
                    let nn = knn(dense_pts, c, dense_k)?;
                    Ok(Array2::from_shape_fn((dense_k, 3), |(i, a)| {
                        (dense_pts[nn[i]][a] - c[a]) as f32
                    }))
                })
                .collect::<Result<Vec<_>>>()?;
            inputs.push(set.patches.iter().map(|p| patch_matrix(p)).collect());
            targets.push(t);
        }
        Ok(Self { inputs, targets })
    }

    pub fn num_patches(&self) -> usize {
        self.inputs.iter().map(Vec::len).sum()
    }
}

impl BatchSource for UpsampleDataset {
    fn sample<R: Rng>(
        &self,
        batch: usize,
        counter: &mut usize,
        rng: &mut R,
    ) -> (Vec<Array2<f32>>, Vec<Array2<f32>>) {
        let mut inputs = Vec::with_capacity(batch);
        let mut targets = Vec::with_capacity(batch);
        for _ in 0..batch {
            let s = *counter % self.inputs.len();
            *counter += 1;
            let i = rng.random_range(0..self.inputs[s].len());
            inputs.push(self.inputs[s][i].clone());
            targets.push(self.targets[s][i].clone());
        }
        (inputs, targets)
    }
}

fn upsample_config(cfg: &TrainConfig) -> Result<UpsampleConfig> {
    let up = UpsampleConfig::from_model(&cfg.model, cfg.patch.alpha)?;
    if cfg.patch.patch_points != up.patch_points {
        return Err(TrainingError::Config(format!(
            "model expects K = {}, patches have {}",
            up.patch_points, cfg.patch.patch_points
        )));
    }
    Ok(up)
}

/// Trains an upsampler on dense pairs drawn from `cfg.dataset`; `cfg.lambda`
/// is ignored.
pub fn train_upsampler(
    cfg: &TrainConfig,
    on_report: impl FnMut(&LossReport),
) -> Result<TrainOutcome> {
    let up = upsample_config(cfg)?;
    let pairs = dense_pairs(&cfg.dataset, up.multiple * up.alpha)?;
    let data = UpsampleDataset::from_pairs(&pairs, &up)?;
    train_upsampler_on(&data, cfg, on_report)
}

pub fn train_upsampler_on(
    data: &UpsampleDataset,
    cfg: &TrainConfig,
    on_report: impl FnMut(&LossReport),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    upsample_config(cfg)?;
    let params = init_params::<f32>(&cfg.model, cfg.seed)?;
    let snapshot = |p: &ModelParams<f32>| {
        Ok(Checkpoint {
            config: cfg.model.clone(),
            params: p.clone(),
            tables: None,
        })
    };
    run_loop(data, cfg, params, on_report, snapshot)
}
