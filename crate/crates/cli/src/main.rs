use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qtail_cli::{run_analyze, synth_prices, synth_returns, write_price_files, AnalysisArgs, CliError, Stages, SynthKind};

/// Tail exponents, q-Gaussian fits, multifractal spectra and autocorrelations
/// of intraday returns.
#[derive(Parser)]
#[command(name = "qtail", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every analysis on the inputs.
    Analyze(AnalysisArgs),
    /// Tail exponents and q-Gaussian fits per sampling interval.
    Tail(AnalysisArgs),
    /// Singularity spectrum of the finest sampling interval plus its shuffled baseline.
    Mfdfa(AnalysisArgs),
    /// Autocorrelation of the finest sampling interval.
    Acf(AnalysisArgs),
    /// Write a synthetic price series with known properties.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Gaussian,
    StudentT,
    Qgaussian,
    Ar1,
    Cascade,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// Number of returns (cascades use 2^levels).
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Student-t degrees of freedom.
    #[arg(long, default_value_t = 3.0)]
    nu: f64,
    /// q-Gaussian index.
    #[arg(long, default_value_t = 1.5)]
    q: f64,
    /// AR(1) coefficient.
    #[arg(long, default_value_t = 0.5)]
    phi: f64,
    /// Cascade depth.
    #[arg(long, default_value_t = 16)]
    levels: u32,
    /// Cascade weight.
    #[arg(long, default_value_t = 0.6)]
    w1: f64,
    /// Log-return per unit of the generated variable.
    #[arg(long, default_value_t = 1e-3)]
    scale: f64,
    /// Output price file; sessions go to `<stem>.sessions.csv` beside it.
    #[arg(long)]
    out: PathBuf,
}

fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let kind = match a.kind {
        Kind::Gaussian => SynthKind::Gaussian,
        Kind::StudentT => SynthKind::StudentT { nu: a.nu },
        Kind::Qgaussian => SynthKind::QGaussian { q: a.q },
        Kind::Ar1 => SynthKind::Ar1 { phi: a.phi },
        Kind::Cascade => SynthKind::Cascade { levels: a.levels, w1: a.w1 },
    };
    let r = synth_returns(kind, a.n, a.seed)?;
    let prices = synth_prices(&r, a.scale)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    write_price_files(&a.out, &prices)
}

fn analyze(args: &AnalysisArgs, stages: Stages, command: &str) -> Result<bool, CliError> {
    let cfg = args.resolve()?;
    let summary = run_analyze(&cfg, stages, command)?;
    eprintln!(
        "{} of {} inputs analysed; manifest at {}",
        summary.succeeded,
        summary.succeeded + summary.failed,
        summary.manifest_path.display()
    );
    Ok(summary.succeeded > 0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(a) => analyze(a, Stages::ALL, "analyze"),
        Command::Tail(a) => analyze(a, Stages::TAIL, "tail"),
        Command::Mfdfa(a) => analyze(a, Stages::MFDFA, "mfdfa"),
        Command::Acf(a) => analyze(a, Stages::ACF, "acf"),
        Command::Synth(a) => synth(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("qtail: every input failed; see the manifest for details");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("qtail: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
