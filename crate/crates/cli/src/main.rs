//! `flowood`: data generation, training, scoring, evaluation and the named
//! experiments, each driven by a JSON config.
//!
//! Exit codes: 0 success, 1 invalid invocation or config, 2 runtime failure.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "flowood", version, about = "Likelihood-based OOD detection experiments with normalizing flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct CommonArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (falls back to the config's `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate image sets as PGM/PPM files plus manifests.
    GenData(CommonArgs),
    /// Train the In-Dist flow and write a checkpoint.
    Train(CommonArgs),
    /// Score image sets with a trained checkpoint.
    Score(CommonArgs),
    /// AUROC/AUPR report from score tables.
    Eval(CommonArgs),
    /// Complexity vs. latent norm over the pooling ladder.
    Exp1(CommonArgs),
    /// Volume vs. latent norm over the manipulated sets.
    Exp2(CommonArgs),
    /// Latent-ball reconstruction MSE vs. complexity.
    #[command(name = "exp-c2")]
    ExpC2(CommonArgs),
    /// Detection benchmark over every score and OOD set.
    Exp4(CommonArgs),
    /// Entropy/MSE identity for isotropic Gaussians.
    #[command(name = "check-lemma2")]
    CheckLemma2(CommonArgs),
    /// Gaussian annulus tail bound.
    #[command(name = "check-tailbound")]
    CheckTailbound(CommonArgs),
    /// Evaluate the complexity inequality with estimated quantities.
    ProbeHypothesis(CommonArgs),
}

impl Command {
    fn split(&self) -> (&'static str, &CommonArgs) {
        match self {
            Command::GenData(a) => ("gen-data", a),
            Command::Train(a) => ("train", a),
            Command::Score(a) => ("score", a),
            Command::Eval(a) => ("eval", a),
            Command::Exp1(a) => ("exp1", a),
            Command::Exp2(a) => ("exp2", a),
            Command::ExpC2(a) => ("exp-c2", a),
            Command::Exp4(a) => ("exp4", a),
            Command::CheckLemma2(a) => ("check-lemma2", a),
            Command::CheckTailbound(a) => ("check-tailbound", a),
            Command::ProbeHypothesis(a) => ("probe-hypothesis", a),
        }
    }
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;

fn run(argv: impl IntoIterator<Item = OsString>) -> u8 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (name, args) = cli.command.split();
    let level = match args.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    commands::dispatch(name, args)
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
