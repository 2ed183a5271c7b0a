use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sdanet::data::{DatasetIndex, Split};
use sdanet::inference::{self, export_heatmap, write_density, InferenceError};
use sdanet::trainer::{self, TrainConfig, TrainError, TrainOutput, FINAL_CHECKPOINT};

#[derive(Parser)]
#[command(
    name = "sdanet",
    version,
    about = "Train, evaluate and run the crowd-counting network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON run configuration.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Predict the density map of one image.
    Predict(PredictArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for checkpoints and the training log.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    #[arg(long)]
    no_amg: bool,
    #[arg(long)]
    no_dense: bool,
    #[arg(long)]
    no_refine: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset index file.
    #[arg(long)]
    data: PathBuf,
    /// Write the per-image report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Ground-truth Gaussian bandwidth.
    #[arg(long, default_value_t = 4.0)]
    sigma: f64,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// 8-bit heatmap, PNG or PGM by extension.
    #[arg(long)]
    heatmap: Option<PathBuf>,
    /// Raw density map: JSON header plus little-endian f32 values.
    #[arg(long)]
    density_out: Option<PathBuf>,
}

/// Training configuration file: every `TrainConfig` field plus the dataset
/// index, resolved against the file's directory.
#[derive(Serialize, Deserialize)]
struct RunConfig {
    data: PathBuf,
    #[serde(flatten)]
    train: TrainConfig,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Model(sdanet::model::ModelError::Config(_)) => {
                CliError::Usage(e.to_string())
            }
            TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<InferenceError> for CliError {
    fn from(e: InferenceError) -> Self {
        CliError::Data(e.to_string())
    }
}

fn load_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if cfg.data.is_relative() {
        if let Some(dir) = path.parent() {
            cfg.data = dir.join(&cfg.data);
        }
    }
    Ok(cfg)
}

fn run_train(args: TrainArgs) -> Result<(), CliError> {
    let RunConfig {
        data,
        train: mut cfg,
    } = load_run_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.model.use_amg &= !args.no_amg;
    cfg.model.use_dense &= !args.no_dense;
    cfg.model.use_refine &= !args.no_refine;
    cfg.validate()?;

    let index = DatasetIndex::load(&data).map_err(|e| CliError::Data(e.to_string()))?;
    let load = |split| {
        index
            .load_split(split, cfg.model.input_channels, cfg.sigma)
            .map_err(|e| CliError::Data(e.to_string()))
    };
    let train_set = load(Split::Train)?;
    let validation = load(Split::Test)?;
    log::info!(
        "training on {} images ({} validation), {} parameters",
        train_set.len(),
        validation.len(),
        sdanet::model::param_count(&cfg.model)
    );

    let output = TrainOutput {
        dir: Some(args.out.clone()),
    };
    let (params, log) = trainer::train(&cfg, &train_set, &validation, &output)?;
    let config_out = args.out.join("config.json");
    let run = RunConfig { data, train: cfg };
    std::fs::write(
        &config_out,
        serde_json::to_string_pretty(&run).expect("config serializes"),
    )
    .map_err(|e| CliError::Data(format!("{}: {e}", config_out.display())))?;

    let report = inference::evaluate_samples(&params, train_set.into_iter().map(Ok).collect());
    let last = log.steps.last().expect("at least one step");
    println!("final loss {:.6e}", last.loss.total);
    if let Some(m) = report.metrics {
        println!("train MAE {:.4} MSE {:.4}", m.mae, m.mse);
    }
    if let Some(v) = log.validation.last() {
        println!(
            "validation MAE {:.4} MSE {:.4}",
            v.metrics.mae, v.metrics.mse
        );
    }
    println!("checkpoint {}", args.out.join(FINAL_CHECKPOINT).display());
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let report = inference::evaluate(&args.checkpoint, &args.data, split, args.sigma)?;
    for row in &report.rows {
        if let Some(err) = &row.error {
            log::warn!("{}: {err}", row.id);
        }
    }
    if let Some(path) = &args.report {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(path, text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    let m = report.metrics.expect("evaluate returns metrics");
    println!(
        "{}",
        serde_json::json!({
            "mae": m.mae,
            "mse": m.mse,
            "evaluated": report.evaluated,
            "total": report.total,
            "partial": report.partial,
        })
    );
    Ok(())
}

fn run_predict(args: PredictArgs) -> Result<(), CliError> {
    let prediction = inference::predict(&args.checkpoint, &args.image)?;
    if !prediction.count.is_finite() {
        return Err(CliError::Numeric(format!(
            "non-finite count {}",
            prediction.count
        )));
    }
    if let Some(path) = &args.heatmap {
        export_heatmap(&prediction.density, path)?;
    }
    if let Some(path) = &args.density_out {
        write_density(&prediction.density, path)?;
    }
    println!("{:.4}", prediction.count);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Predict(a) => run_predict(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
