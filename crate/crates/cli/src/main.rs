//! `iqamix`: dataset conversion, scoring, evaluation and data-mixture search.
//!
//! Exit codes: 0 success, 1 data error, 2 configuration error, 3 oracle
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use iqamix_core::ErrorClass;

mod commands;
mod config;
mod record;

#[derive(Debug, Parser)]
#[command(name = "iqamix", version, about, propagate_version = true)]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a MOS table into five-level scoring instruction pairs.
    Convert(ConvertArgs),
    /// Turn per-level logits into quality scores.
    Score(ScoreArgs),
    /// SRCC / PLCC of predicted scores against MOS.
    EvalIqa(EvalIqaArgs),
    /// Multiple-choice accuracy by question type and concern quadrant.
    EvalMcq(EvalMcqArgs),
    /// Completeness / precision / relevance summary of judged descriptions.
    EvalDesc(EvalDescArgs),
    /// Balanced subsample of a MOS table.
    Subsample(SubsampleArgs),
    /// Two-stage coarse search for the D1:D2:D3 mixture ratio.
    MixSearch(MixSearchArgs),
    /// Per-epoch loss-ratio adjustment starting from a coarse result.
    MixAdjust(MixAdjustArgs),
    /// Sample a training manifest at a given ratio or counts.
    Sample(SampleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    /// Five levels, bad to excellent.
    FiveLevel,
    /// Two levels, good vs poor.
    Binary,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlccArg {
    Raw,
    /// Fit a four-parameter logistic before PLCC.
    Logistic,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// MOS table with `image_id` and `mos` columns.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Score range as `min,max`.
    #[arg(long, env = "IQAMIX_SCALE", allow_hyphen_values = true)]
    pub scale: String,
    /// Output pair file (line-delimited JSON).
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Skip bad rows instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Put the system prefix at the start of the question.
    #[arg(long)]
    pub inline_system: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Logit records, one JSON object per line.
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::FiveLevel)]
    pub mode: ModeArg,
    /// Skip malformed records instead of failing.
    #[arg(long)]
    pub lenient: bool,
    /// Map scores onto this `min,max` range.
    #[arg(long, allow_hyphen_values = true)]
    pub scale: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalIqaArgs {
    /// Predicted scores (`{"id", "score"}` per line).
    #[arg(long)]
    pub scores: PathBuf,
    /// Ground-truth MOS table.
    #[arg(long)]
    pub mos: PathBuf,
    /// Declared MOS range; rows outside it are rejected.
    #[arg(long, env = "IQAMIX_SCALE", allow_hyphen_values = true)]
    pub scale: Option<String>,
    #[arg(long, value_enum, default_value_t = PlccArg::Raw)]
    pub plcc: PlccArg,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalMcqArgs {
    /// Answered questions, one JSON object per line.
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalDescArgs {
    /// Judged ratings, one JSON object per line.
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SubsampleArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long, env = "IQAMIX_SCALE", allow_hyphen_values = true)]
    pub scale: String,
    /// Number of records to keep.
    #[arg(long)]
    pub target: usize,
    /// Equal-width MOS bins to balance over.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    #[arg(long, env = "IQAMIX_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct MixSearchArgs {
    /// TOML configuration with [pools], [oracle] and optional [search].
    #[arg(short, long, env = "IQAMIX_CONFIG")]
    pub config: PathBuf,
    /// Coarse result (JSON).
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, env = "IQAMIX_SEED")]
    pub seed: Option<u64>,
    /// Concurrent oracle calls.
    #[arg(short, long, env = "IQAMIX_JOBS")]
    pub jobs: Option<usize>,
    /// Scratch directory for manifests.
    #[arg(long, env = "IQAMIX_WORK_DIR")]
    pub work_dir: Option<PathBuf>,
    #[arg(long)]
    pub keep_manifests: bool,
}

#[derive(Debug, Args)]
pub struct MixAdjustArgs {
    #[arg(short, long, env = "IQAMIX_CONFIG")]
    pub config: PathBuf,
    /// Result of `mix-search`.
    #[arg(long)]
    pub coarse: PathBuf,
    /// Trajectory file (line-delimited JSON).
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, env = "IQAMIX_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<u32>,
    /// Relative half-width of the accepted loss-ratio band.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Growth factor applied to the lagging side.
    #[arg(long)]
    pub factor: Option<f64>,
    /// Reference loss ratio; defaults to the coarse result's.
    #[arg(long)]
    pub lambda_loss: Option<f64>,
    #[arg(long, env = "IQAMIX_WORK_DIR")]
    pub work_dir: Option<PathBuf>,
    #[arg(long)]
    pub keep_manifests: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(short, long, env = "IQAMIX_CONFIG")]
    pub config: PathBuf,
    /// Ratio `d1:d2:d3`, scaled so D1 gets `--base` pairs (default: all of D1).
    #[arg(long, conflicts_with = "counts")]
    pub ratio: Option<String>,
    #[arg(long, requires = "ratio")]
    pub base: Option<u64>,
    /// Explicit counts `d1,d2,d3`.
    #[arg(long)]
    pub counts: Option<String>,
    #[arg(long, env = "IQAMIX_SEED")]
    pub seed: Option<u64>,
    /// Draw with repetition when a count exceeds its pool.
    #[arg(long)]
    pub allow_replacement: bool,
    #[arg(short, long)]
    pub out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<config::ConfigError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<iqamix_core::Error>() {
            return match e.class() {
                ErrorClass::Data => 1,
                ErrorClass::Config => 2,
                ErrorClass::Oracle => 3,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "warn",
        (false, 1) => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IQAMIX_LOG", level)).init();

    let result = match &cli.command {
        Command::Convert(a) => commands::convert(a),
        Command::Score(a) => commands::score(a),
        Command::EvalIqa(a) => commands::eval_iqa(a),
        Command::EvalMcq(a) => commands::eval_mcq(a),
        Command::EvalDesc(a) => commands::eval_desc(a),
        Command::Subsample(a) => commands::subsample(a),
        Command::MixSearch(a) => commands::mix_search(a),
        Command::MixAdjust(a) => commands::mix_adjust(a),
        Command::Sample(a) => commands::sample(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes_follow_error_class() {
        let data: anyhow::Error = iqamix_core::Error::Degenerate("x".into()).into();
        assert_eq!(exit_code(&data), 1);
        let cfg: anyhow::Error = iqamix_core::Error::Config("x".into()).into();
        assert_eq!(exit_code(&cfg), 2);
        assert_eq!(exit_code(&config::config_error("x")), 2);
        let oracle: anyhow::Error = iqamix_core::Error::Oracle("x".into()).into();
        assert_eq!(exit_code(&oracle.context("while searching")), 3);
        assert_eq!(exit_code(&anyhow::anyhow!("io")), 1);
    }
}
