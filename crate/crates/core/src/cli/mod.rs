//! The `decompssm` command line: train, evaluate, forecast, decompose, synth.
//!
//! Failures print one line `ERROR <code>: <message>` on stderr and exit
//! with the matching status (see [`error_code`]).

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{synth_spec_from_text, KeyValues, RunConfig};

use crate::data::{load_csv, synth_generate, write_csv, Dataset, SeriesFrame};
use crate::error::{Error, Result};
use crate::model::{variate_major, DecompModel};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::{
    evaluate, history_csv, load_checkpoint, rng, save_checkpoint, train, Checkpoint, TrainState,
};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TEST_METRICS_FILE: &str = "test_metrics.csv";

#[derive(Debug, Parser)]
#[command(name = "decompssm", version, about = "Decomposition state-space forecaster")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on the configured CSV; writes the best checkpoint, per-epoch
    /// metrics and test metrics.
    Train(TrainArgs),
    /// Score a checkpoint on the test split.
    Evaluate(EvaluateArgs),
    /// Forecast the next H steps after the series end, or for one test window.
    Forecast(ForecastArgs),
    /// Dump the embedded input, the three refined components and the forecast
    /// for one test window.
    Decompose(DecomposeArgs),
    /// Generate a synthetic series and its trend/seasonal/noise parts.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Defaults to `model.ckpt` in the configured `out_dir`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Must equal the configured horizon, which is fixed by the trained head.
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Test window index; omitted means "after the last observation".
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub window: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic spec file.
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to the spec's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Short machine-readable name and exit status for an error.
pub fn error_code(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Io { .. } => ("io", 2),
        Error::Csv { .. } | Error::Data(_) => ("data", 3),
        Error::Config { .. } => ("config", 4),
        Error::BadMagic
        | Error::VersionMismatch { .. }
        | Error::Truncated { .. }
        | Error::CorruptHeader(_)
        | Error::UnknownTensor(_)
        | Error::MissingTensor(_)
        | Error::TensorShape { .. } => ("checkpoint", 5),
        Error::NonFinite(_) | Error::NanGradient(_) => ("numeric", 6),
        Error::Shape { .. } | Error::InvalidArgument { .. } | Error::NonScalarLoss(_) => ("internal", 1),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (name, code) = error_code(&e);
            let msg = e.to_string().replace('\n', " ");
            eprintln!("ERROR {name}: {msg}");
            ExitCode::from(code)
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Forecast(a) => cmd_forecast(&a),
        Command::Decompose(a) => cmd_decompose(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

struct Run {
    config: RunConfig,
    data: Dataset,
    model: DecompModel,
    out_dir: PathBuf,
}

fn prepare(args: &RunArgs, seed: Option<u64>) -> Result<Run> {
    let mut config = RunConfig::read(&args.config)?;
    if let Some(s) = seed {
        config.train.seed = s;
    }
    let raw = load_csv(&config.data, &config.csv)?;
    let mut warnings = Vec::new();
    let data = Dataset::prepare(
        &raw,
        config.split,
        config.lookback,
        config.horizon,
        config.train_stride,
        &mut warnings,
    )?;
    for w in warnings {
        eprintln!("WARN: {w}");
    }
    let model = DecompModel::new(config.model_config(raw.n_vars()))?;
    let out_dir = args.out.clone().unwrap_or_else(|| config.out_dir.clone());
    Ok(Run {
        config,
        data,
        model,
        out_dir,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn test_metrics_text(horizon: usize, mse: f64, mae: f64) -> String {
    format!("horizon,mse,mae\n{horizon},{mse},{mae}\n")
}

/// Loads a checkpoint and checks it against the configured model.
fn load_params(run: &Run, checkpoint: &Option<PathBuf>) -> Result<ParamStore> {
    let path = checkpoint.clone().unwrap_or_else(|| run.config.out_dir.join(CHECKPOINT_FILE));
    let ck = load_checkpoint(&path)?;
    ck.check_compatible(&run.model.init(&mut rng(0, 0))?)?;
    Ok(ck.params)
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let run = prepare(&args.run, args.seed)?;
    let Run { config, data, model, out_dir } = &run;
    create_dir(out_dir)?;
    eprintln!(
        "training on {} windows ({} val, {} test), {} parameters",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        model.init(&mut rng(0, 0))?.num_values()
    );
    let state = TrainState::init(model, &config.train)?;
    let outcome = train(model, data, &config.train, state, |r| {
        eprintln!(
            "epoch {:>4}  train_loss {:.6}  val_mse {:.6}  val_mae {:.6}",
            r.epoch, r.train_loss, r.val_mse, r.val_mae
        );
    })?;
    write_text(&out_dir.join(METRICS_FILE), &history_csv(&outcome.history))?;
    let ck = Checkpoint::from_state(&outcome.best, config.to_text());
    save_checkpoint(out_dir.join(CHECKPOINT_FILE), &ck)?;

    let test = evaluate(model, &outcome.best.params, &data.frame, &data.test, config.train.eval_batch)?;
    write_text(&out_dir.join(TEST_METRICS_FILE), &test_metrics_text(config.horizon, test.mse, test.mae))?;
    println!(
        "best epoch {}  test_mse {}  test_mae {}",
        outcome.best_epoch, test.mse, test.mae
    );
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let run = prepare(&args.run, None)?;
    if let Some(h) = args.horizon {
        if h != run.config.horizon {
            return Err(Error::Config {
                key: "horizon".into(),
                msg: format!(
                    "--horizon {h} differs from the trained horizon {}; the forecast head fixes it",
                    run.config.horizon
                ),
            });
        }
    }
    let params = load_params(&run, &args.checkpoint)?;
    let test = evaluate(&run.model, &params, &run.data.frame, &run.data.test, run.config.train.eval_batch)?;
    create_dir(&run.out_dir)?;
    let text = test_metrics_text(run.config.horizon, test.mse, test.mae);
    write_text(&run.out_dir.join(TEST_METRICS_FILE), &text)?;
    print!("{text}");
    Ok(())
}

fn check_window(run: &Run, i: usize) -> Result<()> {
    let n = run.data.test.len();
    if i >= n {
        let valid = if n == 0 {
            "the test split has no windows".to_string()
        } else {
            format!("valid range is 0..={}", n - 1)
        };
        return Err(Error::Data(format!("window {i} is out of range: {valid}")));
    }
    Ok(())
}

/// Forecast `[H, M]` (row-major, standardized units) for one input block.
fn forecast_block(run: &Run, params: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
    let (m, t, h) = (run.data.frame.n_vars(), run.config.lookback, run.config.horizon);
    let x = variate_major(&[input], t, m)?;
    let out = run.model.forward_batch(&params.bind(false), &x)?;
    let f = out.forecast.data();
    Ok((0..h).flat_map(|s| (0..m).map(move |j| f[j * h + s])).collect())
}

fn forecast_frame(run: &Run, standardized: &[f64], first_step: usize) -> Result<SeriesFrame> {
    let values = run.data.scaler.inverse(standardized);
    let steps = (0..run.config.horizon).map(|s| (first_step + s).to_string()).collect();
    let mut frame = SeriesFrame::new(run.data.frame.names.clone(), Some(steps), values)?;
    frame.index_name = "step".into();
    Ok(frame)
}

fn cmd_forecast(args: &ForecastArgs) -> Result<()> {
    let run = prepare(&args.run, None)?;
    let params = load_params(&run, &args.checkpoint)?;
    let frame = &run.data.frame;
    let (input, first_step) = match args.window {
        Some(i) => {
            check_window(&run, i)?;
            let start = run.data.test.starts[i] + run.config.lookback;
            (run.data.test.input(frame, i), start)
        }
        None => {
            let n = frame.len();
            if n < run.config.lookback {
                return Err(Error::Data(format!(
                    "series has {n} rows, fewer than the look-back {}",
                    run.config.lookback
                )));
            }
            (frame.rows(n - run.config.lookback..n), n)
        }
    };
    let out = forecast_frame(&run, &forecast_block(&run, &params, input)?, first_step)?;
    create_dir(&run.out_dir)?;
    let path = run.out_dir.join("forecast.csv");
    write_csv(&path, &out)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_tokens(path: &Path, names: &[String], t: &Tensor) -> Result<()> {
    let d = t.shape()[1];
    let mut header = vec!["variable".to_string()];
    header.extend((0..d).map(|k| format!("d{k}")));
    let io_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(&header).map_err(io_err)?;
    for (name, row) in names.iter().zip(t.data().chunks(d)) {
        let mut record = vec![name.clone()];
        record.extend(row.iter().map(|v| format!("{v}")));
        w.write_record(&record).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn cmd_decompose(args: &DecomposeArgs) -> Result<()> {
    let run = prepare(&args.run, None)?;
    let params = load_params(&run, &args.checkpoint)?;
    check_window(&run, args.window)?;
    let frame = &run.data.frame;
    let input = run.data.test.input(frame, args.window);
    let x = Tensor::new(&[run.config.lookback, frame.n_vars()], input.to_vec())?;
    let out = run.model.forward(&params.bind(false), &x)?;
    create_dir(&run.out_dir)?;
    let names = &frame.names;
    write_tokens(&run.out_dir.join("embedded.csv"), names, &out.embedded)?;
    for (c, t) in crate::model::Component::ALL.iter().zip(&out.components) {
        write_tokens(&run.out_dir.join(format!("{c}.csv")), names, t)?;
    }
    let start = run.data.test.starts[args.window] + run.config.lookback;
    write_csv(run.out_dir.join("forecast.csv"), &forecast_frame(&run, out.forecast.data(), start)?)?;
    println!("wrote decomposition of test window {} to {}", args.window, run.out_dir.display());
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let mut spec = synth_spec_from_text(&text)?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let out = synth_generate(&spec)?;
    let dir = match &args.out {
        Some(d) => d.clone(),
        None => args.config.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    create_dir(&dir)?;
    write_csv(dir.join("series.csv"), &out.frame)?;
    for (name, f) in ["trend", "seasonal", "noise"].iter().zip(&out.components) {
        write_csv(dir.join(format!("{name}.csv")), f)?;
    }
    println!("wrote {} rows x {} variables to {}", spec.n, spec.m, dir.display());
    Ok(())
}
