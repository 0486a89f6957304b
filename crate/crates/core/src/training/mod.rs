//! Rate-distortion training: Chamfer distortion, the factorized-prior rate,
//! Adam and the patch-batch loop.

mod chamfer;
mod dataset;
mod loss;
mod optim;

pub use chamfer::{chamfer, chamfer_with_grad};
pub use dataset::{mesh_dir_files, patch_matrix, Dataset, DatasetSpec};
pub use loss::{batch_loss, batch_loss_with_noise, batch_loss_with_targets, BatchLoss};
pub use optim::{adam_step, AdamState, BETA1, BETA2, EPSILON};

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::entropy::{build_coding_tables, hard_quantize, uniform_noise, CodingTables, EntropyError};
use crate::geometry::GeometryError;
use crate::network::{
    encoder_forward, init_params, save_checkpoint, Checkpoint, ModelConfig, ModelKind, ModelParams,
    NetworkError,
};
use crate::patching::{PatchConfig, PatchError};

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("point set is empty")]
    EmptySet,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("non-finite loss at step {step} (distortion {distortion}, rate {rate})")]
    NonFinite {
        step: usize,
        distortion: f64,
        rate: f64,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainingError>;

pub const DEFAULT_LR: f64 = 5e-4;
pub const DEFAULT_BATCH: usize = 16;
pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_MAX_STEPS: usize = 4000;
pub const LOSS_CSV_HEADER: &str = "step,d_cd,rate_bits,loss,seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub batch: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub patch: PatchConfig,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// Defaults: lr 5e-4, batch 16, lambda 1e-4, 4000 steps, logging every
    /// 50 steps and checkpoints every 1000.
    pub fn new(dataset: DatasetSpec, patch: PatchConfig, model: ModelConfig) -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            lr: DEFAULT_LR,
            batch: DEFAULT_BATCH,
            max_steps: DEFAULT_MAX_STEPS,
            seed: 0,
            log_every: 50,
            checkpoint_every: 1000,
            checkpoint_path: None,
            log_path: None,
            dataset,
            patch,
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TrainingError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainingError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch == 0 || self.log_every == 0 || self.checkpoint_every == 0 {
            return Err(TrainingError::Config(
                "batch, log and checkpoint intervals must be >= 1".into(),
            ));
        }
        self.model.validate()?;
        if self.model.patch_points != self.patch.patch_points {
            return Err(TrainingError::Config(format!(
                "model expects K = {}, patches have {}",
                self.model.patch_points, self.patch.patch_points
            )));
        }
        if self.model.kind == ModelKind::Compression
            && self.model.output_points != self.patch.decoded_points
        {
            return Err(TrainingError::Config(format!(
                "model decodes {} points per patch, patch config needs k = {}",
                self.model.output_points, self.patch.decoded_points
            )));
        }
        Ok(())
    }
}

/// One logged training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub step: usize,
    pub distortion: f64,
    pub rate: f64,
    pub loss: f64,
    pub seconds: f64,
}

impl LossReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.3}",
            self.step, self.distortion, self.rate, self.loss, self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<LossReport>,
}

/// Hard-quantized latents of every patch, `P x d`.
pub fn quantized_latents<'a>(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    patches: impl IntoIterator<Item = &'a Array2<f32>>,
) -> Result<Array2<i32>> {
    let patches: Vec<&Array2<f32>> = patches.into_iter().collect();
    let rows = patches
        .par_iter()
        .map(|p| Ok(hard_quantize(encoder_forward(p.view(), params, cfg)?.view())))
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<i32> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((patches.len(), cfg.bottleneck), flat)
        .map_err(|e| TrainingError::Config(e.to_string()))
}

/// Coding tables fitted to the model's latents over a set of patches.
pub fn fit_coding_tables<'a>(
    params: &ModelParams<f32>,
    cfg: &ModelConfig,
    patches: impl IntoIterator<Item = &'a Array2<f32>>,
) -> Result<CodingTables> {
    let em = params
        .entropy
        .as_ref()
        .ok_or_else(|| TrainingError::Config("model has no entropy model".into()))?;
    let z = quantized_latents(params, cfg, patches)?;
    Ok(build_coding_tables(em, z.view())?)
}

fn snapshot(params: &ModelParams<f32>, cfg: &TrainConfig, data: &Dataset) -> Result<Checkpoint> {
    let tables = match cfg.model.kind {
        ModelKind::Compression => Some(fit_coding_tables(params, &cfg.model, data.all_patches())?),
        ModelKind::Upsampler => None,
    };
    Ok(Checkpoint {
        config: cfg.model.clone(),
        params: params.clone(),
        tables,
    })
}

fn open_log(path: &PathBuf) -> Result<std::io::BufWriter<std::fs::File>> {
    let io = |source| TrainingError::Io {
        path: path.clone(),
        source,
    };
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "{LOSS_CSV_HEADER}").map_err(io)?;
    Ok(w)
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(cfg, |_| {})
}

pub fn train_with(cfg: &TrainConfig, on_report: impl FnMut(&LossReport)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = Dataset::load(&cfg.dataset, &cfg.patch)?;
    train_on(&data, cfg, on_report)
}

/// Input/target pairs for one step; compression models use the input as
/// its own target.
pub trait BatchSource {
    fn sample<R: Rng>(&self, batch: usize, counter: &mut usize, rng: &mut R) -> (Vec<Array2<f32>>, Vec<Array2<f32>>);
}

impl BatchSource for Dataset {
    /// Shapes are visited round-robin across draws; patch indices are drawn
    /// uniformly with replacement.
    fn sample<R: Rng>(&self, batch: usize, counter: &mut usize, rng: &mut R) -> (Vec<Array2<f32>>, Vec<Array2<f32>>) {
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let shape = &self.shapes[*counter % self.shapes.len()];
            *counter += 1;
            out.push(shape[rng.random_range(0..shape.len())].clone());
        }
        (out.clone(), out)
    }
}

/// Training loop over an already prepared dataset. Step 0 reports the
/// untrained model; step `s` reports the loss after `s` updates.
pub fn train_on(
    data: &Dataset,
    cfg: &TrainConfig,
    on_report: impl FnMut(&LossReport),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let params = init_params::<f32>(&cfg.model, cfg.seed)?;
    run_loop(data, cfg, params, on_report, |p| snapshot(p, cfg, data))
}

pub(crate) fn run_loop<S: BatchSource>(
    data: &S,
    cfg: &TrainConfig,
    mut params: ModelParams<f32>,
    mut on_report: impl FnMut(&LossReport),
    mut snapshot: impl FnMut(&ModelParams<f32>) -> Result<Checkpoint>,
) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut state = AdamState::new(&cfg.model);
    let mut log = cfg.log_path.as_ref().map(open_log).transpose()?;
    let lambda = cfg.lambda as f32;
    let start = Instant::now();
    let mut history = Vec::new();
    let mut counter = 0usize;

    for step in 0..=cfg.max_steps {
        let (inputs, targets) = data.sample(cfg.batch, &mut counter, &mut rng);
        let noise = match cfg.model.kind {
            ModelKind::Compression => uniform_noise(cfg.batch, cfg.model.bottleneck, &mut rng),
            ModelKind::Upsampler => Array2::zeros((0, 0)),
        };
        let (loss, grad) = batch_loss_with_targets(&inputs, &targets, &params, &cfg.model, lambda, &noise)?;
        if !loss.loss.is_finite() {
            return Err(TrainingError::NonFinite {
                step,
                distortion: loss.distortion as f64,
                rate: loss.rate as f64,
            });
        }
        if step % cfg.log_every == 0 || step == cfg.max_steps {
            let report = LossReport {
                step,
                distortion: loss.distortion as f64,
                rate: loss.rate as f64,
                loss: loss.loss as f64,
                seconds: start.elapsed().as_secs_f64(),
            };
            if let (Some(w), Some(path)) = (log.as_mut(), cfg.log_path.as_ref()) {
                writeln!(w, "{}", report.csv_row())
                    .and_then(|_| w.flush())
                    .map_err(|source| TrainingError::Io {
                        path: path.clone(),
                        source,
                    })?;
            }
            on_report(&report);
            history.push(report);
        }
        if step == cfg.max_steps {
            break;
        }
        adam_step(&mut params, &grad, &mut state, cfg.lr);
        let done = step + 1;
        if done % cfg.checkpoint_every == 0 && done < cfg.max_steps {
            let ckpt = snapshot(&params)?;
            if let Some(path) = &cfg.checkpoint_path {
                save_checkpoint(&ckpt, path)?;
            }
        }
    }
    if !params.is_finite() {
        return Err(TrainingError::NonFinite {
            step: cfg.max_steps,
            distortion: f64::NAN,
            rate: f64::NAN,
        });
    }
    let checkpoint = snapshot(&params)?;
    if let Some(path) = &cfg.checkpoint_path {
        save_checkpoint(&checkpoint, path)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        history,
    })
}
