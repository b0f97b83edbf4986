//! `stbc`: generate datasets, train and evaluate the CNN, classify frames and
//! run gradient checks from the command line.
//!
//! Exit codes: 0 on success, 1 on runtime or I/O failure, 2 on bad usage.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use stbc::baseline_corr::{calibrate_threshold_with, classify_samples, ThresholdRule};
use stbc::classifier::{self, Model, TrainConfig};
use stbc::dataset::{self, DatasetConfig, FrameSet, IqFrame, Manifest, DATASET_MAGIC};
use stbc::evaluation::{self, LossCurve, SnrEvaluation};
use stbc::rng::{derive_seed, stream};
use stbc::signal_model::AlamoutiVariant;
use stbc::tensor_nn::gradcheck::{micro_network, Stencil};
use stbc::{CodingScheme, Error};

#[derive(Parser)]
#[command(name = "stbc", version, about = "Alamouti vs spatial-multiplexing recognition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Shared {
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 1 is the determinism reference.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
    /// Output directory (for `generate`: the dataset file).
    #[arg(short = 'o', long = "out-dir")]
    out: Option<PathBuf>,
    /// File of `key=value` lines applied before the command-line flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled frame dataset and its manifest.
    #[command(args_override_self = true)]
    Generate(GenerateArgs),
    /// Train CNN2 on a dataset.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Accuracy per SNR and confusion matrices for a checkpoint or the
    /// correlation baseline.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Print `index,P_SM,P_AL,label` for every input frame.
    #[command(args_override_self = true)]
    Classify(ClassifyArgs),
    /// Check backprop against finite differences on random micro networks.
    #[command(args_override_self = true)]
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Matrix,
    Swapped,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    Binary,
    Csv,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long, default_value_t = -20.0, allow_negative_numbers = true)]
    snr_min: f64,
    #[arg(long, default_value_t = 20.0, allow_negative_numbers = true)]
    snr_max: f64,
    #[arg(long, default_value_t = 2.0)]
    snr_step: f64,
    /// Bursts per (scheme, SNR) cell.
    #[arg(long, default_value_t = 10)]
    bursts: usize,
    #[arg(long, default_value_t = 1024)]
    burst_len: usize,
    #[arg(long, default_value_t = 128)]
    window: usize,
    #[arg(long, default_value_t = 64)]
    shift: usize,
    #[arg(long, default_value_t = 3.0)]
    nakagami_m: f64,
    #[arg(long, value_enum, default_value_t = Variant::Matrix)]
    al_variant: Variant,
    /// Keep the raw received power instead of scaling frames to unit power.
    #[arg(long)]
    no_normalize: bool,
    #[arg(long, value_enum, default_value_t = Format::Binary)]
    format: Format,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Fraction of bursts per cell used for training.
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    /// Burst size when the dataset has no manifest.
    #[arg(long)]
    frames_per_burst: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    epochs: u64,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    batch_size: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    dropout: f64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    patience: u64,
    #[arg(long)]
    no_early_stop: bool,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Baseline {
    Cnn,
    Corr,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Part {
    All,
    Train,
    Val,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    shared: Shared,
    #[command(flatten)]
    split: SplitArgs,
    /// Required unless `--baseline corr`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Which side of the burst split to evaluate.
    #[arg(long = "split", value_enum, default_value_t = Part::Val)]
    part: Part,
    #[arg(long, value_enum, default_value_t = Baseline::Cnn)]
    baseline: Baseline,
    /// SNR of the threshold calibration run for `--baseline corr`.
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    calibrate_snr: f64,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(100..))]
    calibrate_trials: u64,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Binary dataset or CSV rows (256 values, optionally preceded by labels).
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    nets: u64,
    /// Defaults to 1e-4, or 1e-7 with `--linear-only`.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Defaults to 1e-5, or 3e-3 with `--linear-only`.
    #[arg(long)]
    step: Option<f64>,
    /// Only networks without ReLU or dropout, checked with the
    /// fourth-order five-point stencil.
    #[arg(long)]
    linear_only: bool,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

macro_rules! say {
    ($out:expr, $($t:tt)*) => {
        let _ = writeln!($out, $($t)*);
    };
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let code = run(args, &mut io::stdout().lock(), &mut io::stderr().lock());
    ExitCode::from(code)
}

/// Parses `args` and runs the command, returning the process exit code.
fn run(args: Vec<String>, out: &mut dyn Write, err: &mut dyn Write) -> u8 {
    let cli = match expand_config(args).and_then(|a| Cli::try_parse_from(a).map_err(Err)) {
        Ok(cli) => cli,
        Err(Ok(msg)) => {
            say!(err, "error: {msg}");
            return 2;
        }
        Err(Err(e)) => {
            let text = e.render();
            if e.use_stderr() {
                say!(err, "{text}");
                return 2;
            }
            say!(out, "{text}");
            return 0;
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Classify(a) => classify(a, out),
        Command::Gradcheck(a) => gradcheck(a, out, err),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            say!(err, "error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            say!(err, "error: {e}");
            1
        }
    }
}

type ParseFailure = std::result::Result<String, clap::Error>;

/// Splices `--key value` pairs from a `--config` file right after the
/// subcommand, so flags given on the command line override them.
fn expand_config(args: Vec<String>) -> std::result::Result<Vec<String>, ParseFailure> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let path = match args[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => args.get(pos + 1).cloned().ok_or_else(|| Ok("--config needs a file".to_string()))?,
    };
    let text = fs::read_to_string(&path).map_err(|e| Ok(format!("cannot read config {path}: {e}")))?;
    let cmd = Cli::command();
    let sub_idx = args
        .iter()
        .position(|a| cmd.get_subcommands().any(|s| s.get_name() == a))
        .ok_or_else(|| Ok("--config needs a subcommand".to_string()))?;
    let sub = cmd.find_subcommand(&args[sub_idx]).unwrap();
    let mut extra = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim().replace('_', "-"), v.trim()))
            .ok_or_else(|| Ok(format!("{path}:{}: expected key=value", n + 1)))?;
        let arg = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && key != "config")
            .ok_or_else(|| Ok(format!("{path}:{}: unknown key `{key}` for `{}`", n + 1, sub.get_name())))?;
        if arg.get_action().takes_values() {
            extra.push(format!("--{key}={value}"));
        } else {
            match value {
                "true" => extra.push(format!("--{key}")),
                "false" => {}
                _ => return Err(Ok(format!("{path}:{}: `{key}` takes true or false", n + 1))),
            }
        }
    }
    let mut out = args;
    out.splice(sub_idx + 1..sub_idx + 1, extra);
    Ok(out)
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> Outcome {
    let snr_grid = dataset::snr_range(a.snr_min, a.snr_max, a.snr_step).map_err(|e| usage(e.to_string()))?;
    let cfg = DatasetConfig {
        snr_grid,
        bursts_per_cell: a.bursts,
        burst_len: a.burst_len,
        window: a.window,
        shift: a.shift,
        seed: a.shared.seed,
        normalize: !a.no_normalize,
        nakagami_m: a.nakagami_m,
        al_variant: match a.al_variant {
            Variant::Matrix => AlamoutiVariant::Matrix,
            Variant::Swapped => AlamoutiVariant::Swapped,
        },
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if !(a.nakagami_m >= 0.5 && a.nakagami_m.is_finite()) {
        return Err(usage(format!("--nakagami-m must be >= 0.5, got {}", a.nakagami_m)));
    }
    let default_name = if a.format == Format::Csv { "dataset.csv" } else { "dataset.stbc" };
    let path = match a.shared.out {
        Some(p) if p.is_dir() => p.join(default_name),
        Some(p) => p,
        None => PathBuf::from(default_name),
    };
    let frames = dataset::generate_dataset(&cfg, a.shared.threads as usize)?;
    match a.format {
        Format::Binary => dataset::serialize_frames(&frames, &path)?,
        Format::Csv => dataset::write_csv(&frames, &path)?,
    }
    let manifest = Manifest::new(cfg, frames.len());
    fs::write(Manifest::path_for(&path), manifest.render())?;
    say!(out, "wrote {} frames to {}", frames.len(), path.display());
    Ok(())
}

fn load_frames(path: &Path) -> Result<FrameSet, Error> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(DATASET_MAGIC) || !path.extension().is_some_and(|e| e == "csv") {
        dataset::decode_frames(&bytes)
    } else {
        dataset::read_csv(BufReader::new(bytes.as_slice()))
    }
}

/// Loads a dataset and performs the seeded burst-level split.
fn split_dataset(s: &SplitArgs, seed: u64) -> Result<(FrameSet, FrameSet), Failure> {
    if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
        return Err(usage(format!("--train-fraction must be in (0, 1), got {}", s.train_fraction)));
    }
    let frames = load_frames(&s.dataset)?;
    let manifest_path = Manifest::path_for(&s.dataset);
    let per_burst = match (s.frames_per_burst, manifest_path.exists()) {
        (Some(n), _) => n,
        (None, true) => {
            let m = Manifest::parse(&fs::read_to_string(&manifest_path)?)?;
            if m.count != frames.len() {
                return Err(Failure::Runtime(Error::Shape(format!(
                    "manifest lists {} frames but the dataset holds {}",
                    m.count,
                    frames.len()
                ))));
            }
            m.frames_per_burst()
        }
        (None, false) => {
            return Err(usage(format!("no manifest at {}; pass --frames-per-burst", manifest_path.display())))
        }
    };
    Ok(dataset::split_train_val(&frames, per_burst, s.train_fraction, derive_seed(seed, &[0x5911]))?)
}

fn out_dir(shared: &Shared) -> Result<PathBuf, Failure> {
    let dir = shared.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Outcome {
    let cfg = TrainConfig {
        epochs: a.epochs as usize,
        batch_size: a.batch_size as usize,
        lr: a.lr,
        dropout: a.dropout,
        seed: a.shared.seed,
        patience: (!a.no_early_stop).then_some(a.patience as usize),
        threads: a.shared.threads as usize,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let (train_set, val_set) = split_dataset(&a.split, a.shared.seed)?;
    let dir = out_dir(&a.shared)?;
    say!(out, "training on {} frames, validating on {}", train_set.len(), val_set.len());
    say!(out, "epoch  train_loss  val_loss  val_acc");
    let model = Model::init(classifier::build_cnn2_with_dropout(a.dropout), derive_seed(a.shared.seed, &[0x1417]))?;
    let (model, history) = classifier::train_with(model, &train_set, &val_set, &cfg, |r| {
        say!(out, "{:>5}  {:>10.5}  {:>8.5}  {:>7.4}", r.epoch, r.train_loss, r.val_loss, r.val_accuracy);
    })?;
    let ckpt = dir.join("model.ckpt");
    classifier::save_checkpoint(&model, &ckpt)?;
    let loss = LossCurve::from_history(&history);
    evaluation::write_text(dir.join("loss.csv"), &evaluation::loss_csv(&loss))?;
    evaluation::write_text(dir.join("loss.svg"), &evaluation::loss_svg(&loss, "CNN2 training and validation loss")?)?;
    say!(out, 
        "best epoch {} of {}{}; checkpoint {}",
        history.best_epoch,
        history.len(),
        if history.stopped_early { " (early stop)" } else { "" },
        ckpt.display()
    );
    Ok(())
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Outcome {
    if a.baseline == Baseline::Cnn && a.checkpoint.is_none() {
        return Err(usage("--checkpoint is required for the cnn baseline"));
    }
    let (train_set, val_set) = split_dataset(&a.split, a.shared.seed)?;
    let frames = match a.part {
        Part::Train => train_set,
        Part::Val => val_set,
        Part::All => {
            let mut all = train_set;
            all.frames.extend(val_set.frames);
            all
        }
    };
    let threads = a.shared.threads as usize;
    let dir = out_dir(&a.shared)?;
    let (report, label) = match a.baseline {
        Baseline::Cnn => {
            let ckpt = a.checkpoint.as_ref().expect("checked above");
            let model = classifier::load_checkpoint(ckpt)?;
            let refs: Vec<&IqFrame> = frames.frames.iter().map(|f| &f.frame).collect();
            let preds: Vec<CodingScheme> =
                model.predict_many(&refs, threads)?.into_iter().map(classifier::decide).collect();
            (evaluation::evaluate_predictions(&frames.frames, &preds)?, "CNN2")
        }
        Baseline::Corr => {
            let variant = Manifest::parse(&fs::read_to_string(Manifest::path_for(&a.split.dataset)).unwrap_or_default())
                .map(|m| m.config.al_variant)
                .unwrap_or_default();
            let mut rng = stream(derive_seed(a.shared.seed, &[0xca1b]));
            let rule: ThresholdRule = calibrate_threshold_with(
                variant,
                stbc::signal_model::DEFAULT_NAKAGAMI_M,
                a.calibrate_snr,
                dataset::FRAME_LEN,
                a.calibrate_trials as usize,
                &mut rng,
            )?;
            say!(out, 
                "calibrated threshold {:.6} at {} dB over {} trials (error {:.4}{})",
                rule.threshold,
                rule.snr_db,
                rule.trials,
                rule.empirical_error,
                if rule.degenerate { ", degenerate" } else { "" }
            );
            let report = evaluation::accuracy_vs_snr(|f| classify_samples(&f.to_complex(), &rule), &frames, threads)?;
            (report, "correlation baseline")
        }
    };
    write_eval(&dir, &report, label)?;
    say!(out, "snr_db  accuracy  n");
    for p in &report.curve.points {
        say!(out, "{:>6}  {:>8.4}  {}", p.snr_db, p.accuracy, p.n);
    }
    say!(out, "overall {:.4}", report.overall().accuracy());
    Ok(())
}

fn write_eval(dir: &Path, report: &SnrEvaluation, label: &str) -> Result<(), Error> {
    evaluation::write_text(dir.join("accuracy.csv"), &evaluation::accuracy_csv(&report.curve))?;
    evaluation::write_text(dir.join("accuracy.svg"), &evaluation::accuracy_svg(&report.curve, &format!("{label}: accuracy vs SNR"))?)?;
    evaluation::write_text(
        dir.join("confusion.csv"),
        &evaluation::confusion_csv(report.confusion.iter().map(|(s, m)| (s.db(), m))),
    )?;
    for (snr, m) in &report.confusion {
        let stem = format!("confusion_{}dB", snr);
        evaluation::write_text(dir.join(format!("{stem}.csv")), &evaluation::confusion_csv([(snr.db(), m)]))?;
        evaluation::write_text(dir.join(format!("{stem}.svg")), &evaluation::confusion_svg(m, &format!("{label}, SNR {snr} dB")))?;
    }
    Ok(())
}

fn classify(a: ClassifyArgs, out: &mut dyn Write) -> Outcome {
    let model = classifier::load_checkpoint(&a.checkpoint)?;
    let bytes = fs::read(&a.input)?;
    let frames: Vec<IqFrame> = if bytes.starts_with(DATASET_MAGIC) {
        dataset::decode_frames(&bytes)?.frames.into_iter().map(|f| f.frame).collect()
    } else {
        dataset::read_frame_rows(BufReader::new(bytes.as_slice()))?
    };
    let refs: Vec<&IqFrame> = frames.iter().collect();
    let probs = model.predict_many(&refs, a.shared.threads as usize)?;
    let mut out = io::BufWriter::new(out);
    for (i, p) in probs.iter().enumerate() {
        writeln!(out, "{i},{},{},{}", p[0], p[1], classifier::decide(*p))?;
    }
    out.flush()?;
    Ok(())
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let tolerance = a.tolerance.unwrap_or(if a.linear_only { 1e-7 } else { 1e-4 });
    let step = a.step.unwrap_or(if a.linear_only { 3e-3 } else { 1e-5 });
    let stencil = if a.linear_only { Stencil::FivePoint } else { Stencil::ThreePoint };
    if !(tolerance > 0.0) || !(step > 0.0) {
        return Err(usage("--tolerance and --step must be positive"));
    }
    let mut worst_by_kind = std::collections::BTreeMap::<&str, f64>::new();
    let mut failures = Vec::new();
    for i in 0..a.nets {
        let seed = derive_seed(a.shared.seed, &[i]);
        let micro = micro_network(seed, a.linear_only)?;
        let r = micro.check_with(step, tolerance, stencil)?;
        for (k, v) in &r.per_kind {
            let e = worst_by_kind.entry(k).or_insert(0.0);
            *e = e.max(*v);
        }
        say!(out, 
            "net {i:>3}: {:>5} params, max rel error {:.3e}, {} kink(s) skipped{}",
            micro.net.params().num_params(),
            r.max_rel_error,
            r.kinks.len(),
            if r.passed { "" } else { "  FAIL" }
        );
        if !r.passed {
            failures.push(format!("net {i}: {} (rel error {:.3e})", r.worst.map(|w| w.to_string()).unwrap_or_default(), r.max_rel_error));
        }
    }
    for (k, v) in &worst_by_kind {
        say!(out, "{k:<8} max rel error {v:.3e}");
    }
    if failures.is_empty() {
        say!(out, "all {} networks pass at tolerance {tolerance:e}", a.nets);
        Ok(())
    } else {
        for f in &failures {
            say!(err, "failed: {f}");
        }
        Err(Failure::Runtime(Error::Param(format!("{} of {} networks exceed {tolerance:e}", failures.len(), a.nets))))
    }
}
