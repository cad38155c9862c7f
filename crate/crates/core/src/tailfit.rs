//! Tail scaling exponents from log-log regression of the empirical CCDF.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{ccdf, EmpiricalCcdf, Side};
use crate::error::{Error, Result};
use crate::hypermath::ols_slope;
use crate::returns::{standardize, Normalization, ReturnSeries};
use crate::surrogate::rng_for;

/// Lower edge of the default fit range, in standard deviations.
pub const DEFAULT_X_LO: f64 = 2.0;
/// The default upper edge is the largest point with at least this many
/// samples above it.
pub const DEFAULT_MIN_EXCEEDANCES: usize = 10;
/// Fewest regression points accepted.
pub const MIN_FIT_POINTS: usize = 5;
/// Fewest bootstrap replicas accepted.
pub const MIN_BOOTSTRAP_REPLICAS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFitResult {
    /// CCDF tail exponent, `P(X > x) ~ x^-alpha`.
    pub alpha: f64,
    /// OLS standard error of the slope.
    pub stderr: f64,
    pub fit_range: (f64, f64),
    pub n_points: usize,
    pub r_squared: f64,
    /// 95% percentile bootstrap interval.
    pub bootstrap_ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TailFitOptions {
    /// Explicit `(x_lo, x_hi)`; `None` selects [`default_range`].
    pub range: Option<(f64, f64)>,
    /// Average the points into this many logarithmic bins per decade of `x`
    /// before regressing.
    pub log_bins_per_decade: Option<usize>,
}

/// `x_lo = 2`, `x_hi` = largest CCDF point with at least ten samples above it.
pub fn default_range(c: &EmpiricalCcdf) -> Result<(f64, f64)> {
    let x_hi = c
        .points()
        .iter()
        .rev()
        .find(|pt| c.count_above(pt.x) >= DEFAULT_MIN_EXCEEDANCES)
        .map(|pt| pt.x)
        .ok_or_else(|| {
            Error::InsufficientRange(format!(
                "no CCDF point has {DEFAULT_MIN_EXCEEDANCES} samples above it"
            ))
        })?;
    if x_hi <= DEFAULT_X_LO {
        return Err(Error::InsufficientRange(format!(
            "default range is empty: x_hi = {x_hi} <= {DEFAULT_X_LO}"
        )));
    }
    Ok((DEFAULT_X_LO, x_hi))
}

/// Regresses `ln p` on `ln x` over the CCDF points inside the range.
pub fn fit_tail(c: &EmpiricalCcdf, range: Option<(f64, f64)>) -> Result<TailFitResult> {
    fit_tail_with(c, &TailFitOptions { range, log_bins_per_decade: None })
}

pub fn fit_tail_with(c: &EmpiricalCcdf, opts: &TailFitOptions) -> Result<TailFitResult> {
    let (x_lo, x_hi) = match opts.range {
        Some(r) => r,
        None => default_range(c)?,
    };
    if !(x_lo > 0.0) {
        return Err(Error::Domain(format!("fit range must be positive, got x_lo = {x_lo}")));
    }
    if !(x_lo < x_hi) {
        return Err(Error::InsufficientRange(format!("empty fit range [{x_lo}, {x_hi}]")));
    }
    let (mut lx, mut lp): (Vec<f64>, Vec<f64>) = c
        .points()
        .iter()
        .filter(|pt| pt.x >= x_lo && pt.x <= x_hi)
        .map(|pt| (pt.x.ln(), pt.p.ln()))
        .unzip();
    if let Some(per_decade) = opts.log_bins_per_decade {
        (lx, lp) = log_bin(&lx, &lp, x_lo, per_decade)?;
    }
    if lx.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientRange(format!(
            "{} points in [{x_lo}, {x_hi}], need {MIN_FIT_POINTS}",
            lx.len()
        )));
    }
    let fit = ols_slope(&lx, &lp)?;
    let alpha = -fit.slope;
    if !(alpha > 0.0) {
        return Err(Error::Domain(format!("non-decaying tail, slope = {}", fit.slope)));
    }
    Ok(TailFitResult {
        alpha,
        stderr: fit.slope_stderr,
        fit_range: (x_lo, x_hi),
        n_points: lx.len(),
        r_squared: fit.r_squared,
        bootstrap_ci: None,
    })
}

fn log_bin(lx: &[f64], lp: &[f64], x_lo: f64, per_decade: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if per_decade == 0 {
        return Err(Error::Domain("log binning needs at least one bin per decade".into()));
    }
    let width = std::f64::consts::LN_10 / per_decade as f64;
    let origin = x_lo.ln();
    let mut bx: Vec<f64> = Vec::new();
    let mut bp: Vec<f64> = Vec::new();
    let mut current: Option<i64> = None;
    let (mut sx, mut sp, mut k) = (0.0, 0.0, 0usize);
    for (&x, &p) in lx.iter().zip(lp) {
        let bin = ((x - origin) / width).floor() as i64;
        if current.is_some_and(|b| b != bin) {
            bx.push(sx / k as f64);
            bp.push(sp / k as f64);
            (sx, sp, k) = (0.0, 0.0, 0);
        }
        current = Some(bin);
        sx += x;
        sp += p;
        k += 1;
    }
    if k > 0 {
        bx.push(sx / k as f64);
        bp.push(sp / k as f64);
    }
    Ok((bx, bp))
}

/// Linear-interpolation percentile (the "type 7" definition) of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Tail fit with a 95% percentile bootstrap interval.
///
/// The point estimate comes from the original sample. Each replica resamples
/// the whole series with replacement using stream `i` of `seed`, rebuilds the
/// CCDF of `side` and refits over the same range, so results are independent
/// of the number of worker threads. The interval is widened to include the
/// point estimate when the percentile interval would miss it.
pub fn bootstrap_tail(
    r: &ReturnSeries,
    side: Side,
    range: Option<(f64, f64)>,
    n_rep: usize,
    seed: u64,
) -> Result<TailFitResult> {
    use rand::Rng;

    if n_rep < MIN_BOOTSTRAP_REPLICAS {
        return Err(Error::Domain(format!(
            "bootstrap needs at least {MIN_BOOTSTRAP_REPLICAS} replicas, got {n_rep}"
        )));
    }
    let original = ccdf(r, side)?;
    let range = match range {
        Some(rg) => rg,
        None => default_range(&original)?,
    };
    let point = fit_tail(&original, Some(range))?;
    let n = r.values.len();
    let outcomes: Vec<Result<f64>> = (0..n_rep)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, i as u64);
            let values: Vec<f64> = (0..n).map(|_| r.values[rng.random_range(0..n)]).collect();
            let mags: Vec<f64> = side.magnitudes(&values).collect();
            let c = EmpiricalCcdf::from_magnitudes(side, mags)?;
            Ok(fit_tail(&c, Some(range))?.alpha)
        })
        .collect();
    let mut alphas = Vec::with_capacity(n_rep);
    let mut first_err = None;
    for o in outcomes {
        match o {
            Ok(a) => alphas.push(a),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if 2 * alphas.len() < n_rep {
        return Err(first_err.expect("failures recorded"));
    }
    alphas.sort_by(f64::total_cmp);
    let lo = percentile(&alphas, 0.025).min(point.alpha);
    let hi = percentile(&alphas, 0.975).max(point.alpha);
    Ok(TailFitResult { bootstrap_ci: Some((lo, hi)), ..point })
}

/// One cell of a tail report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReportRow {
    pub instrument: String,
    pub dt_minutes: u32,
    pub side: Side,
    pub fit: std::result::Result<TailFitResult, String>,
}

/// Tail exponents per (instrument, sampling interval, side).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TailReport {
    pub rows: Vec<TailReportRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TailReportOptions {
    pub fit: TailFitOptions,
    /// Bootstrap replicas per cell; `None` skips the bootstrap.
    pub bootstrap: Option<(usize, u64)>,
}

/// Fits every (series, side) cell. Raw series are standardised first; a
/// failing cell records its error and does not affect the others.
pub fn tail_report(series: &[ReturnSeries], sides: &[Side], opts: &TailReportOptions) -> TailReport {
    let cells: Vec<(usize, Side)> = (0..series.len())
        .flat_map(|i| sides.iter().map(move |&s| (i, s)))
        .collect();
    let rows = cells
        .into_par_iter()
        .map(|(i, side)| {
            let r = &series[i];
            let fit = fit_cell(r, side, opts).map_err(|e| e.to_string());
            TailReportRow { instrument: r.instrument_id.clone(), dt_minutes: r.dt_minutes, side, fit }
        })
        .collect();
    TailReport { rows }
}

fn fit_cell(r: &ReturnSeries, side: Side, opts: &TailReportOptions) -> Result<TailFitResult> {
    let standardized;
    let r = if r.normalization == Normalization::Raw {
        standardized = standardize(r)?;
        &standardized
    } else {
        r
    };
    match opts.bootstrap {
        Some((n_rep, seed)) if opts.fit.log_bins_per_decade.is_none() => {
            bootstrap_tail(r, side, opts.fit.range, n_rep, seed)
        }
        Some((n_rep, seed)) => {
            // Binned point estimate, unbinned bootstrap interval.
            let point = fit_tail_with(&ccdf(r, side)?, &opts.fit)?;
            let boot = bootstrap_tail(r, side, Some(point.fit_range), n_rep, seed)?;
            Ok(TailFitResult { bootstrap_ci: boot.bootstrap_ci, ..point })
        }
        None => fit_tail_with(&ccdf(r, side)?, &opts.fit),
    }
}
