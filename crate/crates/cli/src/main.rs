use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use fusionseg::checks::{gradient_suite, GRAD_TOL};
use fusionseg::model::{Checkpoint, Model, ModelConfig, Variant};
use fusionseg::objective::METRIC_CSV_HEADER;
use fusionseg::pipeline::{
    ablate, evaluate_checkpoint, load_dataset, save_dataset, split, synth_dataset, train_on, write_predictions,
    AugmentConfig, Sample, TrainConfig,
};
use fusionseg::tensor::DType;
use fusionseg::{Error, Scalar};

#[derive(Parser, Debug)]
#[command(name = "fusionseg", version, about = "KAN-Mamba fusion network for binary image segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset (images/ and masks/) under --out.
    Synth(SynthArgs),
    /// Train on a dataset directory.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Write thresholded predicted masks (0/255 PNG) for every image.
    Predict(PredictArgs),
    /// Finite-difference gradient checks of every layer.
    Gradcheck(GradcheckArgs),
    /// Train all four variants from one seed and compare them.
    Ablate(AblateArgs),
    /// Parameter and multiply-accumulate counts of a configuration.
    Complexity(ComplexityArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// JSON run config ({"model": {...}, "train": {...}}, or a bare model
    /// config), or the preset name `tiny` / `reference`.
    #[arg(long)]
    config: Option<String>,
    /// Seed for weights, split, shuffling and augmentation.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    /// Resize every sample to SIZE x SIZE on load.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    min_lr: Option<f64>,
    /// Disable flips and rotations.
    #[arg(long)]
    no_augment: bool,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    size: Option<usize>,
    /// Also write eval.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Dataset directory; a synthetic set is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Number of synthetic samples when --data is absent.
    #[arg(long, default_value_t = 40)]
    n: usize,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct ComplexityArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Input height and width.
    #[arg(long, default_value_t = 256)]
    size: usize,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: ModelConfig,
    train: TrainConfig,
}

/// Failure with its exit status.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config(_)) { 1 } else { 2 };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 2, msg: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

fn runtime(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

type Outcome = Result<(), Failure>;

fn load_config(source: Option<&str>) -> Result<RunConfig, Failure> {
    let Some(source) = source else {
        return Ok(RunConfig::default());
    };
    let path = Path::new(source);
    if !path.exists() {
        return match source {
            "tiny" | "reference" => Ok(RunConfig { model: ModelConfig::preset(source)?, ..Default::default() }),
            _ => Err(usage(format!("config file `{source}` not found"))),
        };
    }
    let text = fs::read_to_string(path)?;
    match serde_json::from_str::<RunConfig>(&text) {
        Ok(c) => Ok(c),
        Err(run_err) => match serde_json::from_str::<ModelConfig>(&text) {
            Ok(model) => Ok(RunConfig { model, ..Default::default() }),
            Err(_) => Err(usage(format!("invalid config `{source}`: {run_err}"))),
        },
    }
}

impl ModelArgs {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut rc = load_config(self.config.as_deref())?;
        if let Some(s) = self.seed {
            rc.model.seed = s;
            rc.train.seed = s;
        }
        if let Some(v) = self.variant {
            rc.model.variant = v;
        }
        rc.model.validate()?;
        Ok(rc)
    }
}

fn read_data(dir: &Path, size: Option<usize>) -> Result<Vec<Sample>, Failure> {
    if !dir.is_dir() {
        return Err(usage(format!("data directory `{}` does not exist", dir.display())));
    }
    let data = load_dataset(dir, size)?;
    if data.is_empty() {
        return Err(runtime(format!("no samples under `{}`", dir.join("images").display())));
    }
    Ok(data)
}

fn synth(a: &SynthArgs) -> Outcome {
    let data = synth_dataset(a.n, a.size, a.seed)?;
    save_dataset(&a.out, &data)?;
    println!("wrote {} samples of {}x{} to {}", data.len(), a.size, a.size, a.out.display());
    Ok(())
}

fn progress(quiet: bool, tag: &str, log: &fusionseg::pipeline::EpochLog) {
    if quiet {
        return;
    }
    let mut line = format!("{tag}epoch {:4}  lr {:.3e}  loss {:.5}", log.epoch, log.lr, log.train_loss);
    if let Some((r, _)) = &log.train {
        line += &format!("  train iou {:.4}", r.iou);
    }
    if let Some((r, _)) = &log.val {
        line += &format!("  val iou {:.4} f1 {:.4}", r.iou, r.f1);
    }
    eprintln!("{line}");
}

fn run_train<T: Scalar>(model_cfg: &ModelConfig, cfg: &TrainConfig, data: &[Sample], quiet: bool) -> Outcome {
    let mut model = Model::<T>::build(model_cfg)?;
    let ratio = fusionseg::pipeline::parse_ratio(&cfg.split)?;
    let (tr, va) = split(data, ratio, cfg.seed);
    let s = train_on(&mut model, cfg, &tr, &va, &mut |log| progress(quiet, "", log))?;
    let dir = cfg.out_dir.as_deref().expect("set by caller");
    println!(
        "trained {} epochs on {} samples ({} validation); best iou {:.4} at epoch {}; outputs in {}",
        cfg.epochs,
        s.train_size,
        s.val_size,
        s.best_iou,
        s.best_epoch.map(|e| e.to_string()).unwrap_or_else(|| "-".into()),
        dir.display()
    );
    Ok(())
}

fn train_config(rc: &RunConfig, epochs: Option<usize>, no_augment: bool, out: &Path) -> TrainConfig {
    let mut t = rc.train.clone();
    if let Some(e) = epochs {
        t.epochs = e;
    }
    if no_augment {
        t.augment = AugmentConfig::NONE;
    }
    t.out_dir = Some(out.to_path_buf());
    t
}

fn train(a: &TrainArgs) -> Outcome {
    let rc = a.model.resolve()?;
    let mut cfg = train_config(&rc, a.epochs, a.no_augment, &a.out);
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.base_lr = lr;
    }
    if let Some(lr) = a.min_lr {
        cfg.min_lr = lr;
    }
    cfg.validate()?;
    let data = read_data(&a.data, a.size)?;
    match a.precision {
        Precision::F32 => run_train::<f32>(&rc.model, &cfg, &data, a.quiet),
        Precision::F64 => run_train::<f64>(&rc.model, &cfg, &data, a.quiet),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    if !path.is_file() {
        return Err(usage(format!("checkpoint `{}` does not exist", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn eval(a: &EvalArgs) -> Outcome {
    let ck = load_checkpoint(&a.checkpoint)?;
    let data = read_data(&a.data, a.size)?;
    let report = evaluate_checkpoint(&ck, &data, a.batch_size, a.threshold)?;
    let csv = format!("{METRIC_CSV_HEADER}\n{}\n", report.csv_row(0, "eval"));
    print!("{csv}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("eval.csv"), &csv)?;
    }
    Ok(())
}

fn predict(a: &PredictArgs) -> Outcome {
    let ck = load_checkpoint(&a.checkpoint)?;
    let data = read_data(&a.data, a.size)?;
    let files = match ck.manifest.dtype {
        DType::F32 => write_predictions(&mut ck.into_model::<f32>()?, &data, &a.out, a.batch_size, a.threshold)?,
        DType::F64 => write_predictions(&mut ck.into_model::<f64>()?, &data, &a.out, a.batch_size, a.threshold)?,
    };
    println!("wrote {} masks to {}", files.len(), a.out.display());
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Outcome {
    if a.precision != Precision::F64 {
        return Err(usage("gradient checks run at 64-bit precision; use --precision f64"));
    }
    let checks = gradient_suite(a.seed)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<20} {:>12} {:>8} {:>6}  status", "layer", "max_rel_err", "checked", "kinks")?;
    let mut ok = true;
    for c in &checks {
        let pass = c.passed();
        ok &= pass;
        writeln!(
            out,
            "{:<20} {:>12.3e} {:>8} {:>6}  {}",
            c.layer,
            c.report.max_rel_err,
            c.report.checked,
            c.report.kinks,
            if pass { "ok" } else { "FAIL" }
        )?;
    }
    if ok {
        Ok(())
    } else {
        Err(runtime(format!("gradient check above tolerance {GRAD_TOL}")))
    }
}

fn run_ablate<T: Scalar>(rc: &RunConfig, cfg: &TrainConfig, data: &[Sample], quiet: bool) -> Outcome {
    let rows =
        ablate::<T>(&rc.model, cfg, data, &Variant::ALL, &mut |v, log| progress(quiet, &format!("[{v}] "), log))?;
    print!("{}", fusionseg::pipeline::ablation_csv(&rows));
    Ok(())
}

fn ablate_cmd(a: &AblateArgs) -> Outcome {
    let rc = a.model.resolve()?;
    let cfg = train_config(&rc, a.epochs, a.no_augment, &a.out);
    cfg.validate()?;
    let data = match &a.data {
        Some(d) => read_data(d, Some(a.size))?,
        None => synth_dataset(a.n, a.size, cfg.seed)?,
    };
    match a.precision {
        Precision::F32 => run_ablate::<f32>(&rc, &cfg, &data, a.quiet),
        Precision::F64 => run_ablate::<f64>(&rc, &cfg, &data, a.quiet),
    }
}

fn complexity(a: &ComplexityArgs) -> Outcome {
    let rc = a.model.resolve()?;
    let mut model = Model::<f32>::build(&rc.model)?;
    let params = model.count_params();
    let macs = model.count_flops(&[1, rc.model.in_channels, a.size, a.size])?;
    println!("variant {}", rc.model.variant);
    println!("input 1x{}x{}x{}", rc.model.in_channels, a.size, a.size);
    println!("params {params}");
    println!("macs {macs}");
    println!("gmacs {:.4}", macs as f64 / 1e9);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Complexity(a) => complexity(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
