//! Command-line front end: data preparation, training, coding, evaluation
//! and ablations.

pub mod ablation;
pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rawtobit::networks::System;

pub use ablation::Variant;

#[derive(Parser, Debug)]
#[command(name = "rawtobit", version, about = "RAW-to-bitstream camera ISP with learned compression")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for data generation, splits, initialization and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory that receives every output.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Multiplier on all iteration budgets.
    #[arg(long, global = true)]
    pub scale: Option<f64>,
    /// Dataset root holding `<id>.raw16`, `<id>.meta.json` and `<id>.srgb.png`.
    #[arg(long, global = true, env = "RAWTOBIT_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic RAW/sRGB pairs and check every pair in the data dir.
    PrepareData(PrepareArgs),
    /// Split the pairs in the data dir into train, validation and test ids.
    MakeSplit,
    /// Train one system.
    Train(TrainArgs),
    /// Code one RAW file into a `.rbb` bitstream.
    Encode(CodecArgs),
    /// Decode a `.rbb` bitstream to a 16-bit PNG.
    Decode(CodecArgs),
    /// Rate-distortion sweep over checkpoints: CSV and SVG.
    EvalRd(EvalArgs),
    /// Loss curves and error maps.
    #[command(subcommand)]
    Plot(PlotCommand),
    /// Train an RBN with one distillation variant and report its attention curves.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Number of synthetic pairs to generate before checking.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Mosaic height of synthetic pairs.
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    /// Mosaic width of synthetic pairs.
    #[arg(long, default_value_t = 256)]
    pub width: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SystemArg {
    Rbn,
    Unified,
    Cascaded,
    TeacherComp,
    TeacherIsp,
}

impl From<SystemArg> for System {
    fn from(s: SystemArg) -> Self {
        match s {
            SystemArg::Rbn => System::Rbn,
            SystemArg::Unified => System::Unified,
            SystemArg::Cascaded => System::Cascaded,
            SystemArg::TeacherComp => System::CompTeacher,
            SystemArg::TeacherIsp => System::IspTeacher,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Full,
    Tiny,
}

/// Overrides shared by `train` and `ablate`. Each one beats the config file,
/// which beats the preset.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainOpts {
    /// TOML training config; the preset is used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Split file from `make-split`; every pair trains when absent.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Compression-teacher checkpoint for distillation.
    #[arg(long)]
    pub teacher_comp: Option<PathBuf>,
    /// ISP-teacher checkpoint for distillation.
    #[arg(long)]
    pub teacher_isp: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub system: SystemArg,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub variant: Variant,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Args, Debug)]
pub struct CodecArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `.raw16` for encode, `.rbb` for decode.
    #[arg(long)]
    pub input: PathBuf,
    /// `.rbb` for encode, `.png` for decode. Relative paths land in `--out-dir`.
    #[arg(long)]
    pub output: PathBuf,
    /// Print bpp, and PSNR when `--ground-truth` is given.
    #[arg(long)]
    pub report: bool,
    /// Reference sRGB PNG for the PSNR report.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    /// Split file; its test ids are evaluated. Every pair is used when absent.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Also write one error map per checkpoint and test image.
    #[arg(long)]
    pub error_maps: bool,
}

#[derive(Subcommand, Debug)]
pub enum PlotCommand {
    /// Smoothed loss curves from one or more training logs.
    Loss {
        #[arg(long, required = true, num_args = 1..)]
        logs: Vec<PathBuf>,
        /// CSV column to draw.
        #[arg(long, default_value = "L_total")]
        column: String,
        /// EMA coefficient; 0 draws the raw values.
        #[arg(long, default_value_t = 0.9)]
        smoothing: f64,
        #[arg(long, default_value = "loss.svg")]
        output: PathBuf,
    },
    /// Fixed-scale error map between two sRGB PNGs.
    ErrorMap {
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long, default_value = "error_map.png")]
        output: PathBuf,
    },
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::PrepareData(a) => commands::prepare_data(g, &a),
        Command::MakeSplit => commands::make_split(g),
        Command::Train(a) => commands::train(g, a.system.into(), &a.opts).map(|_| ()),
        Command::Encode(a) => commands::encode(g, &a),
        Command::Decode(a) => commands::decode(g, &a),
        Command::EvalRd(a) => commands::eval_rd(g, &a),
        Command::Plot(p) => commands::plot(g, &p),
        Command::Ablate(a) => commands::ablate(g, a.variant, &a.opts),
    }
}
