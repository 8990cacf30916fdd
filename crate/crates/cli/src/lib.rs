//! Command-line front end: argument parsing, report documents and the
//! commands that write them. `main.rs` only maps results to exit codes.

pub mod commands;
pub mod report;
pub mod svg;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use lesion_bench_core::dataset_io::DatasetError;
use lesion_bench_core::synth::SynthError;
use lesion_bench_core::MetricError;

pub const THREADS_ENV: &str = "LESION_BENCH_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "lesion-bench",
    version,
    about = "Score lesion analysis challenge submissions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score a directory of predicted segmentation masks.
    ScoreSeg {
        manifest: PathBuf,
        submission_dir: PathBuf,
        /// Jaccard threshold; defaults to the manifest's value, then 0.65.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the submission directory name.
        #[arg(long)]
        submission_id: Option<String>,
    },
    /// Score a directory of predicted attribute masks.
    ScoreAttr {
        manifest: PathBuf,
        submission_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        submission_id: Option<String>,
    },
    /// Score a classification probability CSV.
    ScoreCls {
        manifest: PathBuf,
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the CSV file stem.
        #[arg(long)]
        submission_id: Option<String>,
    },
    /// Build leaderboards and cross-submission analyses from report files.
    Rank {
        /// Report paths or glob patterns.
        #[arg(required = true)]
        reports: Vec<String>,
        /// Ranking metric; defaults per task (thresholded_jaccard, mean_attribute_jaccard, bacc).
        #[arg(long)]
        metric: Option<String>,
        /// Second metric for rank divergence; defaults per task (jaccard, mean_attribute_jaccard, acc).
        #[arg(long)]
        compare_metric: Option<String>,
        #[arg(long, default_value_t = lesion_bench_core::ranking_analysis::DEFAULT_BIN_WIDTH)]
        bin_width: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate synthetic datasets and submissions from a JSON config.
    Synth {
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Derive a Jaccard threshold from interobserver agreement values.
    DeriveThreshold {
        #[arg(required = true, num_args = 1..)]
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Error,
    Warning,
    Info,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Error => "ERROR",
            Level::Warning => "WARNING",
            Level::Info => "INFO",
        })
    }
}

/// One stderr line: `LEVEL: code: message`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub level: Level,
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(level: Level, code: impl Into<String>, message: impl Into<String>) -> Self {
        Diagnostic {
            level,
            code: code.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // keep one diagnostic per line
        let message = self.message.replace('\n', " ");
        write!(f, "{}: {}: {}", self.level, self.code, message)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{message}")]
    Input { code: &'static str, message: String },
    #[error("{}: {source}", .path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn input(code: &'static str, message: impl Into<String>) -> Self {
        CliError::Input {
            code,
            message: message.into(),
        }
    }

    pub fn code(&self) -> &str {
        match self {
            CliError::Dataset(e) => e.code(),
            CliError::Metric(e) => e.code(),
            CliError::Synth(e) => e.code(),
            CliError::Input { code, .. } => code,
            CliError::Output { .. } => "output_error",
        }
    }

    /// 2 for rejected input, 1 for failures on our side.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Output { .. } => 1,
            _ => 2,
        }
    }

    pub fn diagnostic(&self) -> Diagnostic {
        Diagnostic::new(Level::Error, self.code(), self.to_string())
    }
}

/// Worker count from `LESION_BENCH_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::input(
            "invalid_threads",
            format!("{THREADS_ENV}: {e}"),
        )),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::input(
                "invalid_threads",
                format!("{THREADS_ENV}={v:?} must be a positive integer"),
            )),
        },
    }
}

/// Runs one command. Non-fatal diagnostics are returned for the caller to print.
pub fn run(cli: &Cli) -> Result<Vec<Diagnostic>, CliError> {
    match &cli.command {
        Command::ScoreSeg {
            manifest,
            submission_dir,
            threshold,
            out,
            submission_id,
        } => commands::score_seg(
            manifest,
            submission_dir,
            *threshold,
            out,
            submission_id.as_deref(),
        ),
        Command::ScoreAttr {
            manifest,
            submission_dir,
            out,
            submission_id,
        } => commands::score_attr(manifest, submission_dir, out, submission_id.as_deref()),
        Command::ScoreCls {
            manifest,
            csv,
            out,
            submission_id,
        } => commands::score_cls(manifest, csv, out, submission_id.as_deref()),
        Command::Rank {
            reports,
            metric,
            compare_metric,
            bin_width,
            out,
        } => commands::rank(
            reports,
            metric.as_deref(),
            compare_metric.as_deref(),
            *bin_width,
            out,
        ),
        Command::Synth { config, out_dir } => commands::synth(config, out_dir),
        Command::DeriveThreshold { values } => commands::derive_threshold(values),
    }
}
