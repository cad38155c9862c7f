//! Sample autocorrelation with an i.i.d. noise band.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::returns::ReturnSeries;

/// Two-sided 95% normal quantile.
pub const DEFAULT_Z: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfResult {
    /// `rho[k]` at lag `k` (in units of the series' sampling interval),
    /// `k = 0..=max_lag`.
    pub rho: Vec<f64>,
    /// `z / sqrt(N)`.
    pub noise_level: f64,
    pub z: f64,
    /// Smallest lag `k >= 1` with `|rho[k]| < noise_level`; `None` if the
    /// correlation stays above the band up to `max_lag`.
    pub decay_lag: Option<usize>,
}

impl AcfResult {
    pub fn max_lag(&self) -> usize {
        self.rho.len() - 1
    }
}

/// Autocorrelation with the default 1.96 noise band.
pub fn acf(r: &ReturnSeries, max_lag: usize) -> Result<AcfResult> {
    acf_with_z(r, max_lag, DEFAULT_Z)
}

/// Biased (`1/N`-normalised) sample autocorrelation of the mean-removed
/// series, which is always a valid (positive semi-definite) correlation
/// sequence.
pub fn acf_with_z(r: &ReturnSeries, max_lag: usize, z: f64) -> Result<AcfResult> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::Domain(format!("noise quantile must be positive, got {z}")));
    }
    if max_lag == 0 {
        return Err(Error::Domain("max_lag must be at least 1".into()));
    }
    let n = r.values.len();
    if n <= 10 * max_lag {
        return Err(Error::InsufficientData(format!(
            "{}: length {n} must exceed 10 x max_lag = {}",
            r.instrument_id,
            10 * max_lag
        )));
    }
    let mean = r.values.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = r.values.iter().map(|v| v - mean).collect();
    let c0: f64 = centred.iter().map(|v| v * v).sum();
    if !(c0 > 0.0) {
        return Err(Error::DegenerateSeries(format!("{}: constant series", r.instrument_id)));
    }
    let mut rho = Vec::with_capacity(max_lag + 1);
    rho.push(1.0);
    for k in 1..=max_lag {
        let ck: f64 = centred.iter().zip(&centred[k..]).map(|(a, b)| a * b).sum();
        rho.push(ck / c0);
    }
    let noise_level = z / (n as f64).sqrt();
    let decay_lag = (1..=max_lag).find(|&k| rho[k].abs() < noise_level);
    Ok(AcfResult { rho, noise_level, z, decay_lag })
}
