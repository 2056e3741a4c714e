//! `forecal`: generate synthetic forecasts, evaluate calibration, and fit
//! or apply calibrators.
//!
//! Exit codes: 0 success, 1 usage error, 2 data validation error,
//! 3 numerical failure.

mod commands;
mod runinfo;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use forecal::calibrators::{CalibrationError, Method};
use forecal::diffnet::NetError;
use forecal::metrics::{F1Rule, MetricsError};
use forecal::synth::{Distortion, SynthError};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "forecal", version, about = "Calibration toolkit for multiclass precipitation forecasts")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known calibration.
    Synth(SynthArgs),
    /// Compute ECE, SCE, ETCE and F1 for a dataset or calibrated probabilities.
    Eval(EvalArgs),
    /// Fit a calibrator and write it as a bundle directory.
    Fit(FitArgs),
    /// Apply a fitted bundle and write calibrated probabilities.
    Apply(ApplyArgs),
    /// Export reliability-diagram rows as CSV.
    Diagram(DiagramArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub samples: usize,
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    #[arg(long, default_value_t = 12)]
    pub classes: usize,
    #[arg(long, default_value_t = 6)]
    pub lead_times: usize,
    /// none | temp:TAU | schedule:TAU0,TAU1,... | planted[:TAU_BAD,GAP]
    #[arg(long, default_value = "none", value_parser = parse_distortion)]
    pub distortion: Distortion,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleArg {
    /// Event predicted when P(rate > threshold) > 0.5.
    Exceedance,
    /// Event predicted when the most likely class lies above the threshold.
    Argmax,
}

impl From<RuleArg> for F1Rule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Exceedance => F1Rule::ExceedanceAboveHalf,
            RuleArg::Argmax => F1Rule::Argmax,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct BinningArgs {
    /// Confidence bins.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// Class edges in mm/h, comma separated; defaults to the standard edges for K classes.
    #[arg(long, value_delimiter = ',')]
    pub rate_edges: Option<Vec<f64>>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Dataset directory with logits.fct1, labels.fct1 and lead_times.fct1.
    #[arg(long)]
    pub data: PathBuf,
    /// Calibrated probabilities to evaluate instead of softmax(logits).
    #[arg(long)]
    pub probs: Option<PathBuf>,
    #[command(flatten)]
    pub binning: BinningArgs,
    /// Rate threshold for F1 in mm/h [default: 1.0 when it is a class edge].
    #[arg(long)]
    pub f1_threshold: Option<f64>,
    #[arg(long, value_enum, default_value_t = RuleArg::Exceedance)]
    pub f1_rule: RuleArg,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write every reliability-diagram row to this CSV.
    #[arg(long)]
    pub diagram: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Ts,
    Lts,
    Ss,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ts => Method::Ts,
            MethodArg::Lts => Method::Lts,
            MethodArg::Ss => Method::Ss,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub method: MethodArg,
    #[arg(long)]
    pub data: PathBuf,
    /// Bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Lead-time conditioning for LTS.
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    pub conditioned: bool,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ApplyArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output probability tensor.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagramArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub probs: Option<PathBuf>,
    #[command(flatten)]
    pub binning: BinningArgs,
    /// Keep only this rate threshold (mm/h).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Keep only this lead-time index.
    #[arg(long)]
    pub lead_time: Option<usize>,
    /// CSV path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_distortion(s: &str) -> Result<Distortion, String> {
    let numbers = |v: &str| -> Result<Vec<f64>, String> {
        v.split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|_| format!("{x:?} is not a number")))
            .collect()
    };
    let (mode, rest) = match s.split_once(':') {
        Some((m, r)) => (m, Some(r)),
        None => (s, None),
    };
    match (mode, rest) {
        ("none", None) => Ok(Distortion::None),
        ("temp", Some(r)) => match numbers(r)?.as_slice() {
            [tau] => Ok(Distortion::Temperature { tau: *tau }),
            _ => Err("temp takes one temperature, e.g. temp:0.5".into()),
        },
        ("schedule", Some(r)) => Ok(Distortion::Schedule { taus: numbers(r)? }),
        ("planted", None) => Ok(Distortion::planted_default()),
        ("planted", Some(r)) => match numbers(r)?.as_slice() {
            [tau_bad, gap] => Ok(Distortion::PlantedCorruption {
                tau_bad: *tau_bad,
                gap: *gap,
            }),
            _ => Err("planted takes TAU_BAD,GAP, e.g. planted:0.2,0.3".into()),
        },
        _ => Err(format!(
            "unknown distortion {s:?}; use none, temp:TAU, schedule:TAU0,TAU1,... or planted[:TAU_BAD,GAP]"
        )),
    }
}

/// A bad flag value or combination noticed after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<SynthError>() {
            return if matches!(e, SynthError::Invalid(_)) { 1 } else { 2 };
        }
        if let Some(e) = cause.downcast_ref::<MetricsError>() {
            return match e {
                MetricsError::UnknownThreshold(_) | MetricsError::InvalidBinning(_) => 1,
                _ => 2,
            };
        }
        if let Some(e) = cause.downcast_ref::<CalibrationError>() {
            return match e {
                CalibrationError::Diverged { .. } | CalibrationError::Network(NetError::NonFinite(_)) => 3,
                _ => 2,
            };
        }
        if let Some(NetError::NonFinite(_)) = cause.downcast_ref::<NetError>() {
            return 3;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Eval(a) => commands::eval(a),
        Command::Fit(a) => commands::fit(a),
        Command::Apply(a) => commands::apply(a),
        Command::Diagram(a) => commands::diagram(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
