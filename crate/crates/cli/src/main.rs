mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use patchpc::codec::DEFAULT_CENTROID_BITS;
use patchpc::metrics::DEFAULT_PEAK;
use patchpc::training::{DEFAULT_BATCH, DEFAULT_LAMBDA, DEFAULT_LR, DEFAULT_MAX_STEPS};
use patchpc::upsampler::{DEFAULT_ALPHA, DEFAULT_MULTIPLE};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "patchpc", version, about = "Patch-based learned point cloud geometry codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// `key = value` file; flags given on the command line win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads for patch-parallel work (default: all cores)
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Directory of .off meshes and/or .ply clouds
    #[arg(long, conflicts_with = "shapes")]
    pub dataset: Option<PathBuf>,

    /// Comma-separated synthetic shapes (sphere, torus, cube_surface, cylinder, two_spheres)
    #[arg(long, value_delimiter = ',', default_value = "sphere")]
    pub shapes: Vec<String>,

    /// Points per training cloud
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,

    /// Patches per cloud (alternative to --alpha)
    #[arg(long = "S")]
    pub patches: Option<usize>,

    /// Points per patch
    #[arg(long = "K", default_value_t = 128)]
    pub patch_points: usize,

    /// Patch oversampling factor; S*K = alpha*N (default 2)
    #[arg(long)]
    pub alpha: Option<usize>,

    /// Bottleneck width
    #[arg(long, default_value_t = 16)]
    pub d: usize,

    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,

    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,

    #[arg(long, default_value_t = DEFAULT_MAX_STEPS)]
    pub steps: usize,

    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 50)]
    pub log_every: usize,

    #[arg(long, default_value_t = 1000)]
    pub checkpoint_every: usize,

    /// Checkpoint path; the loss log goes next to it as <stem>.csv
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct EncodeArgs {
    #[command(flatten)]
    pub common: Common,

    #[arg(long)]
    pub model: PathBuf,

    /// Input .ply cloud
    #[arg(long = "in")]
    pub input: PathBuf,

    /// Output .ppc stream
    #[arg(long)]
    pub out: PathBuf,

    /// Must match the model's K/k if given
    #[arg(long)]
    pub alpha: Option<usize>,

    /// Must match the model's patch size if given
    #[arg(long = "K")]
    pub patch_points: Option<usize>,

    /// Bits per centroid coordinate
    #[arg(long, default_value_t = DEFAULT_CENTROID_BITS, value_parser = clap::value_parser!(u8).range(8..=32))]
    pub centroid_bits: u8,
}

#[derive(Args, Debug, Clone)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub common: Common,

    #[arg(long)]
    pub model: PathBuf,

    /// Input .ppc stream
    #[arg(long = "in")]
    pub input: PathBuf,

    /// Output .ply cloud
    #[arg(long)]
    pub out: PathBuf,

    /// Write ASCII instead of binary PLY
    #[arg(long)]
    pub ascii: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,

    /// Reference cloud
    #[arg(long = "ref")]
    pub reference: PathBuf,

    /// Degraded (decoded) cloud
    #[arg(long = "deg")]
    pub degraded: PathBuf,

    /// Stream whose size gives the bpp column
    #[arg(long)]
    pub bitstream: Option<PathBuf>,

    #[arg(long, default_value_t = DEFAULT_PEAK)]
    pub peak: f64,

    /// Map both clouds into the reference's 64-unit box first
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,

    /// Bottleneck widths
    #[arg(long = "d", value_delimiter = ',', default_value = "4,8,16")]
    pub dims: Vec<String>,

    /// S:K pairs
    #[arg(long, value_delimiter = ',', default_value = "16:128")]
    pub grid: Vec<String>,

    #[arg(long, default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,

    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,

    #[arg(long, default_value_t = 2000)]
    pub steps: usize,

    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Where models are cached; existing ones are loaded instead of trained
    #[arg(long)]
    pub models_dir: Option<PathBuf>,

    /// CSV destination (default stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct UpsampleArgs {
    #[command(flatten)]
    pub common: Common,

    #[arg(long)]
    pub model: PathBuf,

    #[arg(long = "in")]
    pub input: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    /// Upsampling multiple; must match the model if given
    #[arg(long = "M")]
    pub multiple: Option<usize>,

    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: usize,

    #[arg(long)]
    pub ascii: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TrainUpsamplerArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long = "K", default_value_t = 128)]
    pub patch_points: usize,

    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: usize,

    #[arg(long = "M", default_value_t = DEFAULT_MULTIPLE)]
    pub multiple: usize,

    #[arg(long, default_value_t = 64)]
    pub d: usize,

    #[arg(long, default_value_t = DEFAULT_LR)]
    pub lr: f64,

    #[arg(long, default_value_t = 2000)]
    pub steps: usize,

    #[arg(long, default_value_t = DEFAULT_BATCH)]
    pub batch: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 50)]
    pub log_every: usize,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a compression model
    Train(TrainArgs),
    /// Compress a .ply cloud into a .ppc stream
    Encode(EncodeArgs),
    /// Reconstruct a .ply cloud from a .ppc stream
    Decode(DecodeArgs),
    /// D1/D2 PSNR and Chamfer between two clouds, as one CSV row
    Eval(EvalArgs),
    /// Rate-distortion sweep over d and (S, K)
    Sweep(SweepArgs),
    /// Upsample a cloud with a trained upsampler
    Upsample(UpsampleArgs),
    /// Train an upsampler against dense resamplings
    TrainUpsampler(TrainUpsamplerArgs),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train(a) => &a.common,
            Command::Encode(a) => &a.common,
            Command::Decode(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Sweep(a) => &a.common,
            Command::Upsample(a) => &a.common,
            Command::TrainUpsampler(a) => &a.common,
        }
    }
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(EXIT_USAGE)
}

fn main() -> ExitCode {
    let mut args: Vec<String> = std::env::args().collect();
    let cmd = Cli::command();
    if let Some(path) = config::config_path(&args).map(PathBuf::from) {
        let text = match config::read_config(&path) {
            Ok(t) => t,
            Err(e) => return usage(format!("cannot read config {}: {e}", path.display())),
        };
        args = match config::merge_config_file(&cmd, args, &text) {
            Ok(a) => a,
            Err(e) => return usage(e),
        };
    }
    let matches = match cmd.clone().try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Some((name, sub_matches)) = matches.subcommand() {
        let sub = cmd.find_subcommand(name).expect("parsed subcommand exists");
        eprint!("{}", config::resolved(sub, sub_matches));
    }
    if let Some(n) = cli.command.common().threads {
        if n == 0 {
            return usage("--threads must be >= 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return usage(e);
        }
    }
    let result = match cli.command {
        Command::Train(a) => commands::train(&a),
        Command::Encode(a) => commands::encode(&a),
        Command::Decode(a) => commands::decode(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Upsample(a) => commands::upsample(&a),
        Command::TrainUpsampler(a) => commands::train_upsampler(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
