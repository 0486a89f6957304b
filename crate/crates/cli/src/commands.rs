use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;

use patchpc::codec::{self, Bitstream, BppBreakdown, CodecModel, CodecSettings};
use patchpc::geometry::{load_ply, normalize_to_box, save_ply, PlyFormat, PointCloud, ShapeKind, ShapeSpec};
use patchpc::metrics::{self, chamfer_distance, p2plane_psnr, DEFAULT_PEAK, QUALITY_CSV_HEADER};
use patchpc::network::{load_checkpoint, save_checkpoint, ModelConfig};
use patchpc::patching::PatchConfig;
use patchpc::training::{self, DatasetSpec, LossReport, TrainConfig, TrainingError};
use patchpc::upsampler::{self, UpsampleConfig};

use crate::{
    DataArgs, DecodeArgs, EncodeArgs, EvalArgs, SweepArgs, TrainArgs, TrainUpsamplerArgs,
    UpsampleArgs, EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE,
};

pub const SWEEP_CSV_HEADER: &str = "d,S,K,bpp,d2_psnr,chamfer";

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Numeric(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Numeric(m) => f.write_str(m),
            Failure::Data(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn from_training(e: TrainingError) -> Failure {
    match e {
        TrainingError::NonFinite { .. } => Failure::Numeric(e.to_string()),
        TrainingError::Config(_) | TrainingError::Patch(_) | TrainingError::Network(_) => {
            Failure::Usage(e.to_string())
        }
        e => Failure::Data(e.into()),
    }
}

fn dataset_spec(data: &DataArgs, seed: u64) -> Result<DatasetSpec> {
    if let Some(path) = &data.dataset {
        return Ok(DatasetSpec::MeshDir {
            path: path.clone(),
            points: data.points,
            seed,
        });
    }
    if data.shapes.is_empty() {
        return Err(usage("no shapes given"));
    }
    data.shapes
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let kind: ShapeKind = name.trim().parse().map_err(|e| usage(format!("{e}")))?;
            Ok(ShapeSpec {
                kind,
                n: data.points,
                seed: seed.wrapping_add(i as u64),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(DatasetSpec::Shapes)
}

fn resolve_patch(n: usize, patches: Option<usize>, k: usize, alpha: Option<usize>) -> Result<PatchConfig> {
    let pc = match patches {
        Some(s) => PatchConfig::from_counts(n, s, k),
        None => PatchConfig::for_cloud(n, alpha.unwrap_or(upsampler::DEFAULT_ALPHA), k),
    }
    .map_err(|e| usage(e.to_string()))?;
    if let Some(a) = alpha {
        if a != pc.alpha {
            return Err(usage(format!(
                "--alpha {a} disagrees with S*K/N = {}",
                pc.alpha
            )));
        }
    }
    Ok(pc)
}

fn log_report(r: &LossReport) {
    eprintln!(
        "step {:>6}  d_cd {:.6}  rate {:.3} bits  loss {:.6}  {:.1}s",
        r.step, r.distortion, r.rate, r.loss, r.seconds
    );
}

fn loss_log_path(out: &Path) -> PathBuf {
    out.with_extension("csv")
}

fn load_cloud(path: &Path) -> Result<PointCloud> {
    Ok(load_ply(path).with_context(|| format!("reading {}", path.display()))?)
}

fn write_cloud(cloud: &PointCloud, path: &Path, ascii: bool) -> Result<()> {
    let format = if ascii {
        PlyFormat::Ascii
    } else {
        PlyFormat::BinaryLittleEndian
    };
    Ok(save_ply(cloud, path, format).with_context(|| format!("writing {}", path.display()))?)
}

fn load_codec_model(path: &Path) -> Result<CodecModel> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading model {}", path.display()))?;
    Ok(CodecModel::from_checkpoint(ckpt).with_context(|| format!("model {}", path.display()))?)
}

pub fn bpp_line(b: &BppBreakdown) -> String {
    let per = |bits: u64| bits as f64 / b.points as f64;
    format!(
        "bpp total={:.6} centroids={:.6} latents={:.6} header={:.6}",
        b.bpp(),
        per(b.centroid_bits),
        per(b.latent_bits),
        per(b.header_bits)
    )
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let spec = dataset_spec(&a.data, a.seed)?;
    let patch = resolve_patch(a.data.points, a.patches, a.patch_points, a.alpha)?;
    let model = ModelConfig::compression(a.patch_points, patch.decoded_points, a.d);
    let cfg = TrainConfig {
        lambda: a.lambda,
        lr: a.lr,
        batch: a.batch,
        max_steps: a.steps,
        seed: a.seed,
        log_every: a.log_every,
        checkpoint_every: a.checkpoint_every,
        checkpoint_path: Some(a.out.clone()),
        log_path: Some(loss_log_path(&a.out)),
        ..TrainConfig::new(spec, patch, model)
    };
    training::train_with(&cfg, log_report).map_err(from_training)?;
    eprintln!(
        "wrote {} and {}",
        a.out.display(),
        loss_log_path(&a.out).display()
    );
    Ok(())
}

pub fn encode(a: &EncodeArgs) -> Result<()> {
    let model = load_codec_model(&a.model)?;
    if let Some(alpha) = a.alpha {
        if alpha != model.alpha() {
            return Err(usage(format!("--alpha {alpha} does not match the model's {}", model.alpha())));
        }
    }
    if let Some(k) = a.patch_points {
        if k != model.config.patch_points {
            return Err(usage(format!(
                "--K {k} does not match the model's {}",
                model.config.patch_points
            )));
        }
    }
    let cloud = load_cloud(&a.input)?;
    let settings = CodecSettings {
        centroid_bits: a.centroid_bits,
        ..CodecSettings::default()
    };
    let bs = codec::encode(&model, &cloud, &settings).context("encoding")?;
    let bytes = bs.serialize().context("serializing")?;
    std::fs::write(&a.out, &bytes).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!(
        "{} points, {} patches, {} bytes",
        bs.num_points,
        bs.patches,
        bytes.len()
    );
    println!("{}", bpp_line(&bs.breakdown()));
    Ok(())
}

pub fn decode(a: &DecodeArgs) -> Result<()> {
    let model = load_codec_model(&a.model)?;
    let bytes = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let bs = Bitstream::parse(&bytes).with_context(|| format!("parsing {}", a.input.display()))?;
    let cloud = codec::decode(&model, &bs).context("decoding")?;
    write_cloud(&cloud, &a.out, a.ascii)?;
    eprintln!("{} points", cloud.len());
    println!("{}", bpp_line(&bs.breakdown()));
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut reference = load_cloud(&a.reference)?;
    let mut degraded = load_cloud(&a.degraded)?;
    if a.normalize {
        let (r, scale) = normalize_to_box(&reference).context("normalizing reference")?;
        degraded = scale.normalize(&degraded);
        reference = r;
    }
    let bpp = match &a.bitstream {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            Some(Bitstream::parse(&bytes).with_context(|| format!("parsing {}", p.display()))?.bpp())
        }
        None => None,
    };
    let report = metrics::evaluate(&reference, &degraded, a.peak, bpp).context("evaluating")?;
    println!("{QUALITY_CSV_HEADER}");
    println!("{}", report.csv_row(&a.degraded.display().to_string()));
    Ok(())
}

struct SweepPoint {
    bpp: f64,
    d2_psnr: f64,
    chamfer: f64,
}

fn parse_list<T: std::str::FromStr>(items: &[String], what: &str) -> Result<Vec<T>> {
    items
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|_| usage(format!("bad {what} entry `{s}`"))))
        .collect()
}

fn sweep_point(
    a: &SweepArgs,
    spec: &DatasetSpec,
    clouds: &[PointCloud],
    d: usize,
    s: usize,
    k: usize,
) -> Result<SweepPoint> {
    let patch = PatchConfig::from_counts(a.data.points, s, k).map_err(|e| usage(e.to_string()))?;
    let cached = a
        .models_dir
        .as_ref()
        .map(|dir| dir.join(format!("d{d}_S{s}_K{k}.ppcc")));
    let model = match &cached {
        Some(path) if path.exists() => load_codec_model(path)?,
        _ => {
            let model = ModelConfig::compression(k, patch.decoded_points, d);
            let cfg = TrainConfig {
                lambda: a.lambda,
                lr: a.lr,
                batch: a.batch,
                max_steps: a.steps,
                seed: a.seed,
                log_every: a.steps.max(1),
                checkpoint_every: a.steps.max(1),
                ..TrainConfig::new(spec.clone(), patch, model)
            };
            let out = training::train(&cfg).map_err(from_training)?;
            if let Some(path) = &cached {
                save_checkpoint(&out.checkpoint, path)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            CodecModel::from_checkpoint(out.checkpoint).context("trained model")?
        }
    };
    let mut acc = SweepPoint {
        bpp: 0.0,
        d2_psnr: 0.0,
        chamfer: 0.0,
    };
    for cloud in clouds {
        let bs = codec::encode(&model, cloud, &CodecSettings::default()).context("encoding")?;
        let rec = codec::decode(&model, &bs).context("decoding")?;
        let (ref_n, scale) = normalize_to_box(cloud).context("normalizing")?;
        acc.bpp += bs.bpp();
        acc.d2_psnr += p2plane_psnr(&ref_n, &scale.normalize(&rec), DEFAULT_PEAK).context("D2")?;
        acc.chamfer += chamfer_distance(cloud, &rec).context("chamfer")?;
    }
    let n = clouds.len() as f64;
    Ok(SweepPoint {
        bpp: acc.bpp / n,
        d2_psnr: acc.d2_psnr / n,
        chamfer: acc.chamfer / n,
    })
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let dims: Vec<usize> = parse_list(&a.dims, "--d")?;
    let grid: Vec<(usize, usize)> = a
        .grid
        .iter()
        .filter(|g| !g.trim().is_empty())
        .map(|g| {
            let (s, k) = g
                .split_once(':')
                .ok_or_else(|| usage(format!("grid entry `{g}` is not S:K")))?;
            let p = |v: &str| v.trim().parse::<usize>().map_err(|_| usage(format!("bad grid entry `{g}`")));
            Ok((p(s)?, p(k)?))
        })
        .collect::<Result<_>>()?;
    if dims.is_empty() || grid.is_empty() {
        return Err(usage("sweep grid is empty"));
    }
    let spec = dataset_spec(&a.data, a.seed)?;
    let clouds = spec.clouds().map_err(from_training)?;
    if let Some(dir) = &a.models_dir {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let io = |e: std::io::Error| Failure::Data(e.into());
    writeln!(sink, "{SWEEP_CSV_HEADER}").map_err(io)?;
    let mut ok = 0;
    for &(s, k) in &grid {
        for &d in &dims {
            let row = match sweep_point(a, &spec, &clouds, d, s, k) {
                Ok(p) => {
                    ok += 1;
                    eprintln!("d={d} S={s} K={k}: bpp {:.4}, D2 {:.3} dB, chamfer {:.6}", p.bpp, p.d2_psnr, p.chamfer);
                    format!("{d},{s},{k},{},{},{}", p.bpp, p.d2_psnr, p.chamfer)
                }
                Err(e) => {
                    eprintln!("d={d} S={s} K={k}: failed: {e}");
                    format!("{d},{s},{k},NaN,NaN,NaN")
                }
            };
            writeln!(sink, "{row}").map_err(io)?;
            sink.flush().map_err(io)?;
        }
    }
    if ok == 0 {
        return Err(Failure::Data(anyhow::anyhow!("every sweep point failed")));
    }
    Ok(())
}

pub fn upsample(a: &UpsampleArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let cfg = UpsampleConfig::from_model(&ckpt.config, a.alpha)
        .with_context(|| format!("model {}", a.model.display()))?;
    if let Some(m) = a.multiple {
        if m != cfg.multiple {
            return Err(usage(format!("--M {m} does not match the model's M = {}", cfg.multiple)));
        }
    }
    let cloud = load_cloud(&a.input)?;
    let out = upsampler::upsample(&cloud, &ckpt.params, &cfg).map_err(from_training)?;
    write_cloud(&out, &a.out, a.ascii)?;
    eprintln!("{} -> {} points", cloud.len(), out.len());
    Ok(())
}

pub fn train_upsampler(a: &TrainUpsamplerArgs) -> Result<()> {
    let spec = dataset_spec(&a.data, a.seed)?;
    let up = UpsampleConfig {
        multiple: a.multiple,
        alpha: a.alpha,
        patch_points: a.patch_points,
        bottleneck: a.d,
    };
    up.validate().map_err(from_training)?;
    let patch = up.patch_config(a.data.points).map_err(from_training)?;
    let cfg = TrainConfig {
        lambda: 0.0,
        lr: a.lr,
        batch: a.batch,
        max_steps: a.steps,
        seed: a.seed,
        log_every: a.log_every,
        checkpoint_path: Some(a.out.clone()),
        log_path: Some(loss_log_path(&a.out)),
        ..TrainConfig::new(spec, patch, up.model())
    };
    upsampler::train_upsampler(&cfg, log_report).map_err(from_training)?;
    eprintln!(
        "wrote {} and {}",
        a.out.display(),
        loss_log_path(&a.out).display()
    );
    Ok(())
}
