//! Command-line pipeline for tail, multifractal and correlation analysis of
//! intraday returns.

use std::path::{Path, PathBuf};

use qtail_core::io::{sibling_sessions_path, write_prices, write_sessions};
use qtail_core::returns::{PriceSeries, Session};
use qtail_core::surrogate::{gen_ar1, gen_cascade, gen_gaussian, gen_qgaussian, gen_student_t};
use qtail_core::ReturnSeries;

pub mod config;
pub mod pipeline;

pub use config::{AnalysisArgs, AnalysisConfig};
pub use pipeline::{run_analyze, RunSummary, Stages};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid configuration; nothing has been computed.
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] qtail_core::Error),

    #[error("analysis failed: {0}")]
    Analysis(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 2 for configuration errors, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Start of synthetic price series (2004-05-03 13:30 UTC).
pub const SYNTH_START: i64 = 1_083_591_000;
/// Spacing of synthetic prices in seconds.
pub const SYNTH_STEP: i64 = 60;
pub const SYNTH_P0: f64 = 100.0;

/// Synthetic processes available to `qtail synth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthKind {
    Gaussian,
    StudentT { nu: f64 },
    QGaussian { q: f64 },
    Ar1 { phi: f64 },
    /// `2^levels` values; the requested length is ignored.
    Cascade { levels: u32, w1: f64 },
}

pub fn synth_returns(kind: SynthKind, n: usize, seed: u64) -> Result<ReturnSeries, CliError> {
    Ok(match kind {
        SynthKind::Gaussian => gen_gaussian(n, seed)?,
        SynthKind::StudentT { nu } => gen_student_t(n, nu, seed)?,
        SynthKind::QGaussian { q } => gen_qgaussian(n, q, seed)?,
        SynthKind::Ar1 { phi } => gen_ar1(n, phi, seed)?,
        SynthKind::Cascade { levels, w1 } => gen_cascade(levels, w1, seed)?,
    })
}

/// Prices whose one-step log-returns are `scale * (r - mean(r))`, one per
/// minute from [`SYNTH_START`], inside a single session.
///
/// The mean is removed so that long positive series (cascades) do not
/// overflow the price; the analysis standardises returns anyway.
pub fn synth_prices(r: &ReturnSeries, scale: f64) -> Result<PriceSeries, CliError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(CliError::Config(format!("scale must be positive, got {scale}")));
    }
    let mean = r.values.iter().sum::<f64>() / r.values.len() as f64;
    let mut log_p = SYNTH_P0.ln();
    let mut obs = Vec::with_capacity(r.len() + 1);
    obs.push((SYNTH_START, SYNTH_P0));
    for (i, v) in r.values.iter().enumerate() {
        log_p += scale * (v - mean);
        obs.push((SYNTH_START + SYNTH_STEP * (i as i64 + 1), log_p.exp()));
    }
    let session = Session { start: SYNTH_START, end: obs[obs.len() - 1].0 };
    Ok(PriceSeries::new(r.instrument_id.clone(), obs, vec![session])?)
}

/// Writes `prices` to `path` and its sessions to the sibling sessions file.
pub fn write_price_files(path: &Path, prices: &PriceSeries) -> Result<(), CliError> {
    pipeline::write_atomic(path, |w| write_prices(w, prices))?;
    pipeline::write_atomic(&sibling_sessions_path(path), |w| write_sessions(w, prices.sessions()))
}
