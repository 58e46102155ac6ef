mod commands;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgeclass_gateway::ServeArgs;

use crate::failure::Failure;

/// Edge skin-lesion classifier toolkit: datasets, head training,
/// post-training quantization, evaluation, benchmarking and serving.
///
/// Exit codes: 0 ok, 1 internal, 2 usage, 3 data, 4 model, 5 inference, 6 I/O.
#[derive(Debug, Parser)]
#[command(name = "edgeclass", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Inspect, validate or generate model bundles.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Ingest, synthesize, augment and split image datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Train a classifier head on a frozen backbone and attach it.
    TrainHead(TrainHeadArgs),
    /// Fuse and convert an FP32 classifier to a lower-precision variant.
    Quantize(QuantizeArgs),
    /// Classify one image and print the label with its confidence.
    Infer(InferArgs),
    /// Score a classifier on a manifest, or cross-validate a backbone.
    Eval(EvalArgs),
    /// Measure latency and throughput of one or more variants.
    Bench(BenchArgs),
    /// Mean watts per window and ratios against the original model.
    PowerReport(PowerArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
enum ModelCmd {
    /// Print metadata, op census, sizes and tensor shapes.
    Inspect {
        /// Bundle directory.
        #[arg(long)]
        model: PathBuf,
        /// Write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load a bundle, check its checksum and graph, and run one zero input.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Write the seeded MicroMobileNet backbone (no head).
    Fixture {
        /// Output bundle directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Subcommand)]
enum DatasetCmd {
    /// Scan `<root>/<class>/<image>` into a manifest.
    Ingest {
        #[arg(long)]
        root: PathBuf,
        /// Manifest file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a two-class synthetic image tree and its manifest.
    Synth {
        /// Dataset root to create.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 250)]
        per_class: usize,
        /// Square image side in pixels.
        #[arg(long, default_value_t = 32)]
        size: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Add `factor - 1` seeded augmented copies of every original.
    Augment {
        #[arg(long)]
        manifest: PathBuf,
        /// Items per original after augmentation.
        #[arg(long, default_value_t = 14)]
        factor: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified 70/20/10 split per fold, grouped by original image.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Split plan (JSON) to write.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    /// Binary cross-entropy for two classes, categorical otherwise.
    Auto,
    Bce,
    Cce,
}

#[derive(Debug, Args)]
struct HyperArgs {
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Auto)]
    loss: LossArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature cache directory.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainHeadArgs {
    /// Backbone bundle with a free feature node.
    #[arg(long)]
    backbone: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Split plan; without one every item trains and none validates.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 0, requires = "split")]
    fold: usize,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Per-epoch training log (TSV).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Output classifier bundle directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecisionArg {
    Fp32opt,
    Fp16,
    Int8,
    /// Write `<out>-fp32opt`, `<out>-fp16` and `<out>-int8`.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CalibArg {
    Minmax,
    Percentile,
}

#[derive(Debug, Args)]
struct QuantizeArgs {
    #[arg(long, value_enum)]
    precision: PrecisionArg,
    /// Directory searched recursively for PNG/JPEG calibration images.
    #[arg(long)]
    calib_dir: PathBuf,
    /// Evenly spaced subset of the calibration images to use.
    #[arg(long, default_value_t = 100)]
    calib_count: usize,
    #[arg(long, value_enum, default_value_t = CalibArg::Minmax)]
    calibration: CalibArg,
    /// Percentile for `--calibration percentile`.
    #[arg(long, default_value_t = 99.99)]
    percentile: f64,
    /// Node ids kept at FP32.
    #[arg(long)]
    exclude: Vec<String>,
    /// FP32 classifier bundle.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output bundle directory (base path for `--precision all`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Write the prediction as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Classifier bundle, or a backbone for cross-validation.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Split plan. Required for cross-validation; selects a partition
    /// when scoring a classifier.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Fold scored when a classifier is given with `--split`.
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Bundle directories; repeat for a comparison table.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    /// Directory searched recursively for PNG/JPEG images.
    #[arg(long, conflicts_with = "synth")]
    images: Option<PathBuf>,
    /// Use this many synthetic images instead of a directory.
    #[arg(long)]
    synth: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Variant id the ratios are taken against.
    #[arg(long, default_value = "original")]
    original: String,
    /// Write the reports as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PowerArgs {
    /// Log with one `timestamp, watts` sample per line.
    #[arg(long)]
    log: PathBuf,
    /// `name=start/end` (RFC 3339, inclusive). Needs `idle` and `original`.
    #[arg(long = "window", required = true)]
    windows: Vec<String>,
    /// Write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    use commands::*;
    match cli.command {
        Command::Model(ModelCmd::Inspect { model, out }) => model::inspect(&model, out.as_deref()),
        Command::Model(ModelCmd::Validate { model }) => model::validate(&model),
        Command::Model(ModelCmd::Fixture { out, seed }) => model::fixture(&out, seed),
        Command::Dataset(DatasetCmd::Ingest { root, out }) => dataset::ingest(&root, &out),
        Command::Dataset(DatasetCmd::Synth { out, per_class, size, seed }) => {
            dataset::synth(&out, per_class, size, seed)
        }
        Command::Dataset(DatasetCmd::Augment { manifest, factor, seed, out }) => {
            dataset::augment(&manifest, factor, seed, &out)
        }
        Command::Dataset(DatasetCmd::Split { manifest, folds, seed, out }) => {
            dataset::split(&manifest, folds, seed, &out)
        }
        Command::TrainHead(a) => train::train_head(a),
        Command::Quantize(a) => quantize::quantize(a),
        Command::Infer(a) => measure::infer(a),
        Command::Eval(a) => train::eval(a),
        Command::Bench(a) => measure::bench(a),
        Command::PowerReport(a) => measure::power(a),
        Command::Serve(a) => measure::serve(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}
