mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use airfuse::eval::{Method, Strategy};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{RunConfig, DEFAULT_CONFIG};

/// Daily PM2.5 surfaces from monitors and gridded model output: synthetic
/// data, model fitting, grid prediction and site-level cross-validation.
#[derive(Debug, Parser)]
#[command(name = "airfuse", version, after_long_help = config_help())]
pub struct Cli {
    /// TOML run configuration; every key is optional (see below for defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads, 0 = one per core; overrides the config.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory holding monitors.csv, grid.csv and grid-meta.csv.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

fn config_help() -> String {
    format!("Configuration keys and defaults:\n\n{DEFAULT_CONFIG}")
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic study into the output directory.
    Synth {
        #[arg(long)]
        n_sites: Option<usize>,
        #[arg(long)]
        n_days: Option<usize>,
    },
    /// Best-subset selection of regressors by site-level CV.
    SelectVars,
    /// Choose the IDW exponent by site-level CV.
    TuneIdw,
    /// Fit a method on all monitors and write its artifacts.
    Fit(FitArgs),
    /// Predict every grid cell for one day and write ESRI ASCII rasters.
    PredictGrid(PredictArgs),
    /// Cross-validate methods and write records, notes and the report.
    Cv(CvArgs),
    /// Score held-out predictions produced elsewhere.
    ScoreExternal(ExternalArgs),
    /// Stratified metric tables from a records file.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMethod {
    Ols,
    Uk,
    Downscaler,
    Rf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridMethod {
    Ols,
    Idw,
    Uk,
    Downscaler,
    Rf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpecArg {
    Cmaq,
    Covs,
    Both,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    method: FitMethod,
    /// Mean specification for OLS and UK.
    #[arg(long, value_enum, default_value = "both")]
    spec: SpecArg,
    /// UK: one covariance from time-averaged residuals instead of daily ML.
    #[arg(long)]
    shared_cov: bool,
    /// Downscaler: also write posterior samples per day.
    #[arg(long)]
    samples: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_enum)]
    method: GridMethod,
    #[arg(long, value_enum, default_value = "both")]
    spec: SpecArg,
    /// Day as a 0-based index or a YYYY-MM-DD date.
    #[arg(long)]
    day: String,
    /// Write the natural log of the predictions.
    #[arg(long)]
    log: bool,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    /// Comma-separated methods; overrides the config.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Folds; overrides the config.
    #[arg(long)]
    k: Option<usize>,
    /// Reuse a fold plan instead of drawing one.
    #[arg(long)]
    foldplan: Option<PathBuf>,
    /// Average metrics over days instead of pooling all records.
    #[arg(long)]
    day_averaged: bool,
}

#[derive(Debug, Args)]
pub struct ExternalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    foldplan: PathBuf,
    #[arg(long)]
    day_averaged: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    /// Comma-separated stratification strategies.
    #[arg(long, value_delimiter = ',', default_value = "overall")]
    strategies: Vec<Strategy>,
    #[arg(long)]
    day_averaged: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(d) = cli.data {
        cfg.data.dir = d;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    pool.install(|| commands::dispatch(&cfg, cli.command))
}
