//! `octnet` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 a testing
//! check in `reproduce-metrics` failed.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use octnet_core::data::{
    generate_synthetic_fixture, load_image, scan_dataset, split_dataset, AugmentConfig, FixtureSpec, Split,
};
use octnet_core::eval::{
    aggregate_metrics, reference_fixture, reproduce_published, ConfusionMatrix, DEFAULT_TOLERANCE,
};
use octnet_core::model::{build, predict, Arch, ArchConfig};
use octnet_core::train::{evaluate_split, fit, load_checkpoint, OptimizerKind, TrainConfig};
use octnet_core::Tensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "octnet", version, about = "Train and evaluate retinal OCT image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic four-class dataset in the train/val/test layout.
    Synth(SynthArgs),
    /// Train a network and write its accuracy curve and checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Classify one image file.
    Predict(PredictArgs),
    /// Recompute the published metrics from the published confusion matrices.
    ReproduceMetrics(ReproduceArgs),
    /// Print per-layer output shapes and parameter counts of an architecture.
    ArchReport(ArchReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output dataset root.
    #[arg(long)]
    out: PathBuf,
    /// Training images per class.
    #[arg(long, default_value_t = 32)]
    per_class: usize,
    /// Validation images per class (defaults to --per-class).
    #[arg(long)]
    val_per_class: Option<usize>,
    /// Test images per class (defaults to --per-class).
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Side length of the generated PNGs.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write into a non-empty directory.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// vanilla_cnn, xception, resnet50 or mobilenetv2.
    #[arg(long)]
    arch: Option<String>,
    /// Dataset root containing train/, val/ and test/.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// adam or sgd_momentum.
    #[arg(long)]
    optimizer: Option<String>,
    /// Required: seeds initialization, shuffling, augmentation and dropout.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for curve.csv (and the checkpoint by default).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint path [default: <out>/model.octm].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overwrite an existing checkpoint or curve.
    #[arg(long)]
    force: bool,
    /// JSON file with any of the above settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Divide every channel count by this factor.
    #[arg(long)]
    width_divisor: Option<usize>,
    /// Turn off rotation/shift/shear/flip augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Re-split all files as train:val:test percentages, e.g. 98.816:0.038:1.146.
    #[arg(long)]
    resplit: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// JPEG or PNG file.
    image: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ArchReportArgs {
    #[arg(long)]
    arch: String,
    #[arg(long, default_value_t = 1)]
    width_divisor: usize,
    #[arg(long)]
    json: bool,
}

/// Settings accepted by `train --config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    arch: Option<String>,
    data: Option<PathBuf>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    optimizer: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    width_divisor: Option<usize>,
    augment: Option<bool>,
    momentum: Option<f64>,
    resplit: Option<String>,
}

enum Failure {
    Usage(String),
    Runtime(String),
    Check(String),
}

impl From<octnet_core::Error> for Failure {
    fn from(e: octnet_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Runs the CLI with process stdout/stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the CLI writing to the given streams; returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    if let Err(msg) = configure_threads() {
        let _ = writeln!(err, "error: {msg}");
        return EXIT_USAGE;
    }
    let result = match cli.command {
        Command::Synth(a) => synth(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Predict(a) => predict_cmd(a, out),
        Command::ReproduceMetrics(a) => reproduce(a, out),
        Command::ArchReport(a) => arch_report(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_RUNTIME
        }
        Err(Failure::Check(msg)) => {
            let _ = writeln!(err, "check failed: {msg}");
            EXIT_CHECK
        }
    }
}

/// Honors `OCTNET_THREADS` by sizing the global worker pool once.
fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("OCTNET_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("OCTNET_THREADS must be a positive integer, got {value:?}"))?;
    // Fails only if the pool already exists (repeated in-process runs).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn parse_arch(name: &str) -> Result<Arch, Failure> {
    name.parse().map_err(|e: octnet_core::Error| usage(e.to_string()))
}

fn dir_has_entries(path: &Path) -> bool {
    fs::read_dir(path).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn synth(a: SynthArgs, out: &mut dyn Write) -> CmdResult {
    if a.per_class == 0 {
        return Err(usage("--per-class must be >= 1"));
    }
    if a.size < 8 {
        return Err(usage("--size must be >= 8"));
    }
    if dir_has_entries(&a.out) && !a.force {
        return Err(usage(format!("{} is not empty; pass --force to write into it", a.out.display())));
    }
    let spec = FixtureSpec {
        train_per_class: a.per_class,
        val_per_class: a.val_per_class.unwrap_or(a.per_class),
        test_per_class: a.test_per_class.unwrap_or(a.per_class),
        size: a.size,
        seed: a.seed,
    };
    generate_synthetic_fixture(&spec, &a.out)?;
    let manifest = scan_dataset(&a.out)?;
    for split in Split::ALL {
        let _ = writeln!(out, "{split}: {:?}", manifest.counts(split));
    }
    let _ = writeln!(out, "wrote {} images to {}", manifest.total(), a.out.display());
    Ok(())
}

fn parse_ratios(text: &str) -> Result<[f64; 3], Failure> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--resplit expects train:val:test percentages, got {text:?}")))?;
    <[f64; 3]>::try_from(parts).map_err(|_| usage(format!("--resplit expects three ratios, got {text:?}")))
}

struct TrainPlan {
    arch: Arch,
    arch_config: ArchConfig,
    data: PathBuf,
    out: PathBuf,
    resplit: Option<[f64; 3]>,
    config: TrainConfig,
}

/// Merges defaults, the optional JSON file, and flags (in that order of
/// increasing precedence) and validates the result.
fn plan_training(a: &TrainArgs) -> Result<TrainPlan, Failure> {
    let file: TrainFile = match &a.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).map_err(|e| usage(format!("cannot read --config {}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("bad --config {}: {e}", path.display())))?
        }
        None => TrainFile::default(),
    };
    let arch_name = a.arch.clone().or(file.arch).ok_or_else(|| usage("--arch is required"))?;
    let arch = parse_arch(&arch_name)?;
    let data = a.data.clone().or(file.data).ok_or_else(|| usage("--data is required"))?;
    let seed = a.seed.or(file.seed).ok_or_else(|| usage("--seed is required so training is reproducible"))?;
    let defaults = TrainConfig::default();
    let optimizer = match a.optimizer.clone().or(file.optimizer) {
        Some(name) => name.parse::<OptimizerKind>().map_err(|e| usage(e.to_string()))?,
        None => defaults.optimizer,
    };
    let out = a.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("runs").join(arch.name()));
    let checkpoint = a.checkpoint.clone().or(file.checkpoint).unwrap_or_else(|| out.join("model.octm"));
    let augment_on = !a.no_augment && file.augment.unwrap_or(true);
    let width_divisor = a.width_divisor.or(file.width_divisor).unwrap_or(1);
    if width_divisor == 0 {
        return Err(usage("--width-divisor must be >= 1"));
    }
    let resplit = match a.resplit.clone().or(file.resplit) {
        Some(text) => Some(parse_ratios(&text)?),
        None => None,
    };
    let config = TrainConfig {
        epochs: a.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        batch_size: a.batch_size.or(file.batch_size).unwrap_or(defaults.batch_size),
        learning_rate: a.lr.or(file.lr).unwrap_or(defaults.learning_rate),
        optimizer,
        momentum: file.momentum.unwrap_or(defaults.momentum),
        seed,
        augment: if augment_on { AugmentConfig::default() } else { AugmentConfig::disabled() },
        prefetch: defaults.prefetch,
        curve_path: Some(out.join("curve.csv")),
        checkpoint_path: Some(checkpoint),
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(TrainPlan {
        arch,
        arch_config: ArchConfig::default().with_width_divisor(width_divisor).with_seed(seed),
        data,
        out,
        resplit,
        config,
    })
}

fn train(a: TrainArgs, out: &mut dyn Write) -> CmdResult {
    let plan = plan_training(&a)?;
    let cfg = &plan.config;
    let targets = [cfg.curve_path.as_ref().unwrap(), cfg.checkpoint_path.as_ref().unwrap()];
    if !a.force {
        if let Some(existing) = targets.iter().find(|p| p.exists()) {
            return Err(usage(format!("{} exists; pass --force to overwrite", existing.display())));
        }
    }
    let mut manifest = scan_dataset(&plan.data)?;
    if let Some(ratios) = plan.resplit {
        manifest = split_dataset(&manifest, ratios, cfg.seed).map_err(|e| usage(e.to_string()))?;
    }
    let mut net = build::<f32>(plan.arch, &plan.arch_config)?;

    for dir in targets.iter().filter_map(|p| p.parent()).chain([plan.out.as_path()]) {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("creating {}: {e}", dir.display())))?;
        }
    }
    let _ = writeln!(
        out,
        "training {} ({} parameters) on {} images, validating on {}",
        plan.arch,
        net.param_count(),
        manifest.split(Split::Train).len(),
        manifest.split(Split::Val).len()
    );
    let _ = writeln!(out, "{}", octnet_core::train::CURVE_HEADER);
    let result = fit(&mut net, &manifest, cfg, |p| {
        let _ = writeln!(out, "{}", p.csv_row());
        let _ = out.flush();
    });
    result?;
    let _ = writeln!(out, "curve: {}", targets[0].display());
    let _ = writeln!(out, "checkpoint: {}", targets[1].display());
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> CmdResult {
    let split: Split = a.split.parse().map_err(|e: octnet_core::Error| usage(e.to_string()))?;
    if a.batch_size == 0 {
        return Err(usage("--batch-size must be >= 1"));
    }
    let ckpt = load_checkpoint::<f32>(&a.checkpoint)?;
    let manifest = scan_dataset(&a.data)?;
    let pass = evaluate_split(&ckpt.network, &manifest, split, a.batch_size)?;
    let cm = ConfusionMatrix::from_predictions(manifest.classes.clone(), &pass.truth, &pass.predictions)?;
    let report = aggregate_metrics(&cm)?;
    if a.json {
        let value = serde_json::json!({
            "arch": ckpt.header.arch,
            "split": split,
            "loss": pass.loss,
            "confusion_matrix": cm,
            "metrics": report,
        });
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&value).expect("serializes"));
    } else {
        let _ = writeln!(out, "{} on {split} ({} images), loss {:.6}", ckpt.header.arch, cm.total(), pass.loss);
        let _ = writeln!(out, "{cm}\n");
        let _ = write!(out, "{}", report.render(&[], DEFAULT_TOLERANCE));
    }
    Ok(())
}

fn predict_cmd(a: PredictArgs, out: &mut dyn Write) -> CmdResult {
    let ckpt = load_checkpoint::<f32>(&a.checkpoint)?;
    let img = load_image(&a.image)?;
    let batch = Tensor::new([1, img.shape()[0], img.shape()[1], img.shape()[2]], img.into_data())?;
    let (probs, labels) = predict(&ckpt.network, &batch)?;
    let names = octnet_core::model::CLASS_NAMES;
    if a.json {
        let value = serde_json::json!({
            "image": a.image,
            "probabilities": names.iter().zip(probs.data()).map(|(n, p)| (n.to_string(), serde_json::json!(p))).collect::<serde_json::Map<_, _>>(),
            "label": names[labels[0]],
        });
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&value).expect("serializes"));
    } else {
        for (name, p) in names.iter().zip(probs.data()) {
            let _ = writeln!(out, "{name:<7} {p:.6}");
        }
        let _ = writeln!(out, "label: {}", names[labels[0]]);
    }
    Ok(())
}

fn reproduce(a: ReproduceArgs, out: &mut dyn Write) -> CmdResult {
    if !(a.tolerance >= 0.0 && a.tolerance.is_finite()) {
        return Err(usage("--tolerance must be a non-negative number"));
    }
    let fixture = reference_fixture()?;
    let rep = reproduce_published(&fixture, a.tolerance)?;
    if a.json {
        let _ = writeln!(out, "{}", rep.to_json());
    } else {
        let _ = writeln!(out, "{}", rep.render());
    }
    match rep.failures() {
        0 => Ok(()),
        n => Err(Failure::Check(format!("{n} testing metric(s) outside tolerance {}", a.tolerance))),
    }
}

fn arch_report(a: ArchReportArgs, out: &mut dyn Write) -> CmdResult {
    let arch = parse_arch(&a.arch)?;
    if a.width_divisor == 0 {
        return Err(usage("--width-divisor must be >= 1"));
    }
    let net = build::<f32>(arch, &ArchConfig::default().with_width_divisor(a.width_divisor))?;
    let report = net.report();
    if a.json {
        let _ = writeln!(out, "{}", report.to_json());
    } else {
        let _ = writeln!(out, "{report}");
    }
    Ok(())
}
