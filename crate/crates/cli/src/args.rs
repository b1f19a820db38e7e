use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "splatcodec", version, about = "Encode images as budgeted sets of 2D Gaussians")]
pub struct Cli {
    /// Worker threads (default: all available cores). Output does not depend on this.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit primitives to an image and write a .ssplat file plus a JSON manifest.
    Encode(EncodeArgs),
    /// Rasterize a .ssplat file to PNG.
    Decode(DecodeArgs),
    /// Compare two images: PSNR, SSIM and MS-SSIM.
    Eval(EvalArgs),
    /// Train the initialization variants side by side and tabulate quality.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitChoice {
    Smart,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeChoice {
    Float,
    Quant,
}

/// Encoder settings shared by `encode` and `ablate`.
#[derive(Debug, Clone, Args)]
pub struct EncoderArgs {
    /// Target compression ratio relative to 24-bit RGB.
    #[arg(long, default_value_t = 50.0)]
    pub cr: f64,
    /// Optimization steps.
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight of gradient magnitude against colour variance in the saliency map.
    #[arg(long = "lambda-m")]
    pub lambda_m: Option<f64>,
    /// Fraction of the budget placed by saliency sampling.
    #[arg(long = "lambda-g")]
    pub lambda_g: Option<f64>,
    /// Weight of L1 against (1 - SSIM) in the loss.
    #[arg(long = "lambda-l")]
    pub lambda_l: Option<f64>,
    /// Side of the square sampling tiles, in pixels.
    #[arg(long = "tile-size")]
    pub tile_size: Option<usize>,
    /// Neighbours used for the scale of uniformly placed primitives.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    pub input: PathBuf,
    /// Output file (default: input with a .ssplat extension).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    #[arg(long, value_enum, default_value_t = InitChoice::Smart)]
    pub init: InitChoice,
    #[arg(long, value_enum, default_value_t = ModeChoice::Float)]
    pub mode: ModeChoice,
    /// Manifest path (default: output with a .json extension).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Write the stitched saliency weight map as a grayscale PNG.
    #[arg(long = "dump-weights")]
    pub dump_weights: Option<PathBuf>,
    /// Write the initial sample positions over the image as a PNG.
    #[arg(long = "dump-samples")]
    pub dump_samples: Option<PathBuf>,
    /// Write the per-step loss (and periodic PSNR) as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Print progress to stderr every 100 steps.
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    pub input: PathBuf,
    /// Output PNG (default: input with a .png extension).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Render at this multiple of the stored resolution.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub original: PathBuf,
    pub reconstruction: PathBuf,
    /// Print a CSV header and one data row instead of text.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub encoder: EncoderArgs,
    /// Comma-separated subset of random, means, scales, full.
    #[arg(long, value_delimiter = ',', default_value = "random,means,scales,full")]
    pub variants: Vec<String>,
    #[arg(long)]
    pub csv: bool,
}
