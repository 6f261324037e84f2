use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ldsa_core::bench::{
    bench_runtime, fit_loglog_slope, sweep_context_width, write_bench_csv, write_sweep_csv, BenchConfig, SlopeFit,
    MIN_FIT_POINTS,
};
use ldsa_core::checkpoint::{load_encoder, save_encoder};
use ldsa_core::encoder::{count_params, encoder_forward, EncoderConfig, EncoderParams, Variant};
use ldsa_core::numerics::io::{load_matrix_csv, write_matrix_csv};
use ldsa_core::numerics::Rng;
use ldsa_core::train::{
    all_passed, gen_separable_task, gen_toy_task, grad_check_suite, train_overfit, write_metrics_csv, GradReport,
    TrainConfig, DESK_WARMUP,
};
use ldsa_core::{Error, Result};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_THRESHOLD: u8 = 3;

/// Attention scaling benchmarks, parameter reports, gradient checks and toy
/// training for SA / DSA / LDSA / hybrid encoders.
#[derive(Parser, Debug)]
#[command(name = "ldsa", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Time single attention layers (or whole blocks) over a list of lengths.
    Bench(BenchArgs),
    /// Run the finite-difference gradient check suite.
    Gradcheck(GradcheckArgs),
    /// Print the parameter table of an encoder config.
    Params(ConfigArgs),
    /// Parameter counts and LDSA runtime for several context widths.
    SweepC(SweepArgs),
    /// Train an encoder plus linear classifier on a synthetic task.
    Overfit(OverfitArgs),
    /// Run an encoder over a CSV feature matrix.
    Forward(ForwardArgs),
    /// Write freshly initialized encoder weights.
    InitWeights(InitArgs),
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    variant: Variant,
    /// Comma-separated sequence lengths.
    #[arg(long = "T", value_delimiter = ',', required = true)]
    t: Vec<usize>,
    #[arg(long, default_value_t = 31)]
    c: usize,
    #[arg(long, default_value_t = 320)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    h: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// DSA capacity (defaults to the largest T).
    #[arg(long)]
    t_max: Option<usize>,
    /// Time whole encoder blocks instead of the attention layer.
    #[arg(long)]
    full_block: bool,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail with exit code 3 unless the fitted slope lies in `LO,HI`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    expect_slope: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// EncoderConfig JSON file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config `full:<variant>` or `tiny:<variant>`.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    c: Vec<usize>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long = "T", default_value_t = 512)]
    t: usize,
    #[arg(long, default_value_t = 9)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OverfitArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    utts: usize,
    /// Input frames per utterance (84 gives 20 frames after the frontend).
    #[arg(long, default_value_t = 84)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Label each frame from its center input frame instead of the window mean.
    #[arg(long)]
    separable: bool,
    #[arg(long, default_value_t = DESK_WARMUP)]
    warmup: usize,
    #[arg(long, default_value_t = 1.0)]
    lr_scale: f64,
    /// Accuracy needed for exit code 0.
    #[arg(long, default_value_t = 0.95)]
    target: f64,
    /// Stop as soon as the target is reached.
    #[arg(long)]
    early_stop: bool,
    /// Per-step metrics CSV.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Final JSON report; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ForwardArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    weights: PathBuf,
    /// `T × feat_dim` CSV.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InitArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leave out the sinusoidal positional encoding.
    #[arg(long)]
    no_positional_encoding: bool,
}

enum Outcome {
    Ok,
    ThresholdFailed(String),
}

fn load_config(args: &ConfigArgs) -> Result<EncoderConfig> {
    match (&args.config, &args.preset) {
        (Some(path), _) => EncoderConfig::load(path),
        (None, Some(preset)) => {
            let (size, variant) = preset
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("preset {preset:?} is not <size>:<variant>")))?;
            let variant: Variant = variant.parse()?;
            match size {
                "full" => Ok(EncoderConfig::full(variant)),
                "tiny" => Ok(EncoderConfig::tiny(variant)),
                other => Err(Error::Config(format!("unknown preset size {other:?}"))),
            }
        }
        (None, None) => Err(Error::Config("either --config or --preset is required".into())),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<Outcome> {
    if a.expect_slope.as_ref().is_some_and(|r| r.len() != 2 || r[0] > r[1]) {
        return Err(Error::Config("--expect-slope takes LO,HI with LO <= HI".into()));
    }
    let cfg = BenchConfig {
        d: a.d,
        h: a.h,
        c: a.c,
        reps: a.reps,
        seed: a.seed,
        t_max: a.t_max,
        full_block: a.full_block,
        ..BenchConfig::default()
    };
    let records = bench_runtime(a.variant, &a.t, &cfg)?;
    let mut out = output(a.out.as_deref())?;
    write_bench_csv(&records, &mut out)?;
    out.flush()?;
    drop(out);
    if records.len() < MIN_FIT_POINTS {
        eprintln!("slope fit skipped: {} lengths, need {MIN_FIT_POINTS}", records.len());
        return match a.expect_slope {
            Some(_) => Err(Error::InsufficientPoints {
                needed: MIN_FIT_POINTS,
                got: records.len(),
            }),
            None => Ok(Outcome::Ok),
        };
    }
    let SlopeFit { slope, intercept, r2 } = fit_loglog_slope(&records)?;
    eprintln!("log-log slope {slope:.4} (intercept {intercept:.4}, r2 {r2:.4})");
    if let Some(range) = a.expect_slope {
        let (lo, hi) = (range[0], range[1]);
        if !(lo..=hi).contains(&slope) {
            return Ok(Outcome::ThresholdFailed(format!(
                "slope {slope:.4} outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(Outcome::Ok)
}

#[derive(Serialize)]
struct GradcheckOutput {
    seed: u64,
    passed: bool,
    reports: Vec<GradReport>,
}

fn run_gradcheck(a: GradcheckArgs) -> Result<Outcome> {
    let reports = grad_check_suite(a.seed)?;
    let passed = all_passed(&reports);
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} {} {}: {:.3e}", r.level, r.case, r.parameter, r.max_rel_error))
        .collect();
    write_json(
        &GradcheckOutput {
            seed: a.seed,
            passed,
            reports,
        },
        a.out.as_deref(),
    )?;
    Ok(if passed {
        Outcome::Ok
    } else {
        Outcome::ThresholdFailed(format!("gradient check failed: {}", failed.join("; ")))
    })
}

fn run_params(a: ConfigArgs) -> Result<Outcome> {
    let cfg = load_config(&a)?;
    let mut out = io::stdout().lock();
    writeln!(out, "{}", count_params(&cfg)?.to_json())?;
    Ok(Outcome::Ok)
}

fn run_sweep(a: SweepArgs) -> Result<Outcome> {
    let cfg = load_config(&a.config)?;
    let rows = sweep_context_width(&a.c, &cfg, a.t, a.reps, a.seed)?;
    let mut out = output(a.out.as_deref())?;
    write_sweep_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(Outcome::Ok)
}

fn run_overfit(a: OverfitArgs) -> Result<Outcome> {
    let cfg = load_config(&a.config)?;
    let data = if a.separable {
        gen_separable_task(a.seed, a.utts, a.frames, cfg.feat_dim, a.classes)?
    } else {
        gen_toy_task(a.seed, a.utts, a.frames, cfg.feat_dim, a.classes)?
    };
    let train = TrainConfig {
        steps: a.steps,
        warmup: a.warmup,
        lr_scale: a.lr_scale,
        seed: a.seed,
        target_accuracy: a.early_stop.then_some(a.target),
        ..TrainConfig::default()
    };
    let (_, report) = train_overfit(&cfg, &data, &train)?;
    if let Some(path) = &a.metrics {
        write_metrics_csv(&report.history, BufWriter::new(File::create(path)?))?;
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        variant: &'a str,
        steps_run: usize,
        frames: usize,
        n_classes: usize,
        initial_loss: f64,
        initial_accuracy: f64,
        final_loss: f64,
        final_accuracy: f64,
        best_accuracy: f64,
        target: f64,
        reached_target_at: Option<usize>,
    }
    let final_accuracy = report.final_accuracy;
    write_json(
        &Summary {
            variant: &report.variant,
            steps_run: report.steps_run,
            frames: report.frames,
            n_classes: report.n_classes,
            initial_loss: report.initial_loss,
            initial_accuracy: report.initial_accuracy,
            final_loss: report.final_loss,
            final_accuracy,
            best_accuracy: report.best_accuracy,
            target: a.target,
            reached_target_at: report.reached_target_at,
        },
        a.report.as_deref(),
    )?;
    Ok(if final_accuracy >= a.target {
        Outcome::Ok
    } else {
        Outcome::ThresholdFailed(format!("final accuracy {final_accuracy:.4} below target {}", a.target))
    })
}

fn run_forward(a: ForwardArgs) -> Result<Outcome> {
    let cfg = load_config(&a.config)?;
    let (_, params) = load_encoder(&a.weights, Some(&cfg))?;
    let features = load_matrix_csv(&a.features)?;
    let y = encoder_forward(&features, &cfg, &params)?;
    let mut out = output(a.out.as_deref())?;
    write_matrix_csv(&y, &mut out)?;
    out.flush()?;
    Ok(Outcome::Ok)
}

fn run_init(a: InitArgs) -> Result<Outcome> {
    let cfg = load_config(&a.config)?;
    let mut params = EncoderParams::init(&cfg, &mut Rng::new(a.seed))?;
    params.frontend.positional_encoding = !a.no_positional_encoding;
    save_encoder(&a.out, &cfg, &params)?;
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Bench(a) => run_bench(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Params(a) => run_params(a),
        Command::SweepC(a) => run_sweep(a),
        Command::Overfit(a) => run_overfit(a),
        Command::Forward(a) => run_forward(a),
        Command::InitWeights(a) => run_init(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ThresholdFailed(msg)) => {
            eprintln!("threshold not met: {msg}");
            ExitCode::from(EXIT_THRESHOLD)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE })
        }
    }
}
