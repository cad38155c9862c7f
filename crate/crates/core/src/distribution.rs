//! Empirical complementary cumulative distributions per tail side.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::returns::{Normalization, ReturnSeries};

/// Minimum number of same-sign samples needed for a CCDF.
pub const MIN_SIDE_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Positive,
    Negative,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Positive, Side::Negative];

    pub fn as_str(&self) -> &'static str {
        match self {
            Side::Positive => "positive",
            Side::Negative => "negative",
        }
    }

    /// Magnitudes of the samples belonging to this side; zeros belong to
    /// neither side.
    pub fn magnitudes<'a>(&self, values: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        let side = *self;
        values.iter().filter_map(move |&v| match side {
            Side::Positive if v > 0.0 => Some(v),
            Side::Negative if v < 0.0 => Some(-v),
            _ => None,
        })
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" | "pos" | "+" => Ok(Side::Positive),
            "negative" | "neg" | "-" => Ok(Side::Negative),
            other => Err(Error::Domain(format!("unknown side {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcdfPoint {
    pub x: f64,
    pub p: f64,
}

/// Empirical `P(X > x)` for one side of the distribution.
///
/// Points sit at the distinct sample magnitudes with
/// `p = (#{samples > x} + 1) / n_total`: the rank-based estimator, in which
/// tied samples share the smaller-p rank. The smallest untied sample gets
/// `p = 1` and the largest `p = 1 / n_total`, so `p` is strictly positive and
/// strictly decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCcdf {
    side: Side,
    points: Vec<CcdfPoint>,
    n_total: usize,
    // Empty when built from tabulated points.
    samples: Vec<f64>,
}

impl EmpiricalCcdf {
    /// Builds the CCDF from positive magnitudes. Unlike [`ccdf`] this accepts
    /// any non-empty sample.
    pub fn from_magnitudes(side: Side, mut samples: Vec<f64>) -> Result<Self> {
        if samples.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Domain("CCDF magnitudes must be finite and positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InsufficientData(format!("no {side} samples")));
        }
        samples.sort_unstable_by(f64::total_cmp);
        let n = samples.len();
        let nf = n as f64;
        let mut points = Vec::new();
        let mut i = 0;
        while i < n {
            let x = samples[i];
            let mut j = i + 1;
            while j < n && samples[j] == x {
                j += 1;
            }
            let greater = n - j;
            points.push(CcdfPoint { x, p: (greater + 1) as f64 / nf });
            i = j;
        }
        Ok(Self { side, points, n_total: n, samples })
    }

    /// Wraps a tabulated CCDF (for instance a model curve or a previously
    /// exported file). `x` must be positive and strictly increasing, `p` in
    /// `(0, 1]` and strictly decreasing.
    pub fn from_points(side: Side, points: Vec<CcdfPoint>, n_total: usize) -> Result<Self> {
        if points.is_empty() || n_total == 0 {
            return Err(Error::InsufficientData("empty CCDF table".into()));
        }
        if points.iter().any(|pt| !(pt.x > 0.0 && pt.p > 0.0 && pt.p <= 1.0)) {
            return Err(Error::Domain("CCDF table needs x > 0 and p in (0, 1]".into()));
        }
        if points.windows(2).any(|w| !(w[0].x < w[1].x && w[0].p > w[1].p)) {
            return Err(Error::Domain("CCDF table must be strictly monotone".into()));
        }
        Ok(Self { side, points, n_total, samples: Vec::new() })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn points(&self) -> &[CcdfPoint] {
        &self.points
    }

    /// Sorted sample magnitudes (empty for tabulated CCDFs).
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Number of samples of this sign.
    pub fn n_total(&self) -> usize {
        self.n_total
    }

    /// Number of samples strictly greater than `x`.
    pub fn count_above(&self, x: f64) -> usize {
        if self.samples.is_empty() {
            let next = self.points.partition_point(|pt| pt.x <= x);
            return self
                .points
                .get(next)
                .map_or(0, |pt| (pt.p * self.n_total as f64).round() as usize);
        }
        self.samples.len() - self.samples.partition_point(|&v| v <= x)
    }

    /// Fraction of samples strictly greater than `x`.
    pub fn exceedance(&self, x: f64) -> f64 {
        self.count_above(x) as f64 / self.n_total as f64
    }
}

/// Empirical CCDF of one side of a return series (normally standardised, so
/// that `x` is in units of the standard deviation).
pub fn ccdf(r: &ReturnSeries, side: Side) -> Result<EmpiricalCcdf> {
    let mags: Vec<f64> = side.magnitudes(&r.values).collect();
    if mags.len() < MIN_SIDE_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "{}: {} {side} returns, need at least {MIN_SIDE_SAMPLES}",
            r.instrument_id,
            mags.len()
        )));
    }
    EmpiricalCcdf::from_magnitudes(side, mags)
}

/// Concatenates standardised series of equal `dt` into one pooled sample.
pub fn pool(rs: &[ReturnSeries]) -> Result<ReturnSeries> {
    let first = rs
        .first()
        .ok_or_else(|| Error::InsufficientData("nothing to pool".into()))?;
    let mut members = 0;
    for r in rs {
        if r.dt_minutes != first.dt_minutes {
            return Err(Error::Mismatch(format!(
                "cannot pool dt = {} with dt = {}",
                first.dt_minutes, r.dt_minutes
            )));
        }
        members += match r.normalization {
            Normalization::Raw => {
                return Err(Error::Mismatch(format!(
                    "{} is not standardised",
                    r.instrument_id
                )))
            }
            Normalization::Standardized { .. } => 1,
            Normalization::PooledStandardized { members } => members,
        };
    }
    let values = rs.iter().flat_map(|r| r.values.iter().copied()).collect();
    Ok(ReturnSeries {
        instrument_id: format!("pooled[{members}]"),
        dt_minutes: first.dt_minutes,
        values,
        normalization: Normalization::PooledStandardized { members },
    })
}
