//! Command-line front end.

mod commands;
mod config;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use commands::{read_series, Series};
pub use config::{BacktestConfig, DataPaths, RunConfig};
pub use output::{write_file_atomic, OutputSet};

use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "aceformer", version, about = "Ensemble EMD denoising and trend forecasting for daily OHLCV data")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Emd,
    Aceemd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Predictor {
    /// The trained checkpoint.
    Model,
    /// The realized close (perfect foresight).
    Oracle,
    /// Always calls a rise.
    AlwaysUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for crate::data::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Self::Train,
            SplitArg::Val => Self::Val,
            SplitArg::Test => Self::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a series into intrinsic mode functions.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        /// Value column of the input file.
        #[arg(long, default_value = "close")]
        column: String,
        #[arg(long, value_enum, default_value = "aceemd")]
        method: Method,
    },
    /// Remove the first intrinsic mode function from a series.
    Denoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "close")]
        column: String,
        #[arg(long, value_enum, default_value = "aceemd")]
        method: Method,
    },
    /// Train one model.
    Train,
    /// Train five seeds and select one on the validation split.
    TrainFive,
    /// Forecast every sample of a split.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Score direction calls and trading returns on a split.
    Backtest {
        /// Required for the model predictor.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "model")]
        predictor: Predictor,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Merge value columns of several series files into one table.
    PlotData {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "plot_data.csv")]
        name: String,
    },
}

/// Parses `args` and runs the command, returning the written paths.
pub fn run<I, T>(args: I) -> Result<Vec<PathBuf>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(Vec::new());
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(Error::Config(first.trim_start_matches("error: ").to_string()));
        }
    };
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let cfg = cfg.finalize()?;
    commands::dispatch(&cli, &cfg)
}
