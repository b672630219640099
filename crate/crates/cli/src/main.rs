//! `dsslic`: train, encode, decode, evaluate and ablate.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 backend.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsslic::networks::Variant;

#[derive(Parser, Debug)]
#[command(name = "dsslic", version, about = "Layered semantic-segmentation-based learned image codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed for every random choice a command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// `flif` executable; enables FLIF for the lossless layers.
    #[arg(long, global = true, value_name = "PATH")]
    backend_flif: Option<PathBuf>,

    /// Directory holding `bpgenc` and `bpgdec`, or the `bpgenc` path itself.
    /// Enables BPG for the residual layer and the BPG baseline.
    #[arg(long, global = true, value_name = "PATH")]
    backend_bpg: Option<PathBuf>,

    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the networks of one variant.
    Train(TrainArgs),
    /// Encode an image into a layered container.
    Encode(EncodeArgs),
    /// Decode a container to PNG.
    Decode(DecodeArgs),
    /// Rate-distortion sweep over a dataset, with baselines.
    Eval(EvalArgs),
    /// Compare the variants without residual coding.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Trained weights (`.dssw`).
    #[arg(long, value_name = "PATH")]
    weights: PathBuf,

    /// Variant to run; defaults to the one the weights were trained as.
    /// `upComp` runs on `withSeg` weights.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,

    /// Expected downsampling factor; checked against the weights.
    #[arg(long)]
    alpha: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML training configuration; defaults are used for missing keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,

    /// `key=value` override, dotted for nested keys (`network.alpha=4`).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,

    #[arg(long)]
    alpha: Option<usize>,

    /// Output directory for checkpoints, loss history and weights.
    #[arg(long, short, value_name = "DIR")]
    output: Option<PathBuf>,

    /// Continue from a checkpoint.
    #[arg(long, value_name = "PATH")]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    input: PathBuf,

    #[arg(long, short, value_name = "PATH")]
    output: PathBuf,

    #[command(flatten)]
    model: ModelArgs,

    /// Label map of the input (8- or 16-bit grayscale).
    #[arg(long, value_name = "PATH")]
    labels: Option<PathBuf>,

    /// Segmentation program used when no label map is given, as a command
    /// line with `{input}` and `{output}` placeholders.
    #[arg(long, value_name = "COMMAND")]
    segmenter: Option<String>,

    /// Residual quality, 0 (finest) to 51.
    #[arg(long, default_value_t = 12)]
    quality: u8,

    /// Leave out the residual layer.
    #[arg(long)]
    no_residual: bool,
}

#[derive(Args, Debug)]
struct DecodeArgs {
    input: PathBuf,

    #[arg(long, short, value_name = "PATH")]
    output: PathBuf,

    #[command(flatten)]
    model: ModelArgs,

    /// Reject truncated containers (default).
    #[arg(long, conflicts_with = "resilient")]
    strict: bool,

    /// Decode whatever complete layers a truncated container still holds.
    #[arg(long)]
    resilient: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset directory with `images/` and, for DSSLIC, `labels/`.
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,

    #[arg(long, short, value_name = "DIR")]
    output: PathBuf,

    /// Weights for the `dsslic` codec.
    #[arg(long, value_name = "PATH")]
    weights: Option<PathBuf>,

    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,

    /// `NAME[:Q1,Q2,...]` with NAME one of dsslic, jpeg, jpeg2000, webp,
    /// bpg. Repeatable; defaults to dsslic (with --weights) and jpeg.
    #[arg(long = "codec", value_name = "SPEC")]
    codecs: Vec<String>,

    /// `KIND=ENCODER,DECODER` executables for an external baseline.
    #[arg(long = "baseline-bin", value_name = "KIND=ENC,DEC")]
    baseline_bins: Vec<String>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Dataset directory with `images/` and `labels/`.
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,

    #[arg(long, short, value_name = "DIR")]
    output: PathBuf,

    /// `VARIANT=PATH`, repeatable. `upComp` is derived from `withSeg`.
    #[arg(long = "weights", value_name = "VARIANT=PATH", required = true)]
    weights: Vec<String>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: dsslic::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
