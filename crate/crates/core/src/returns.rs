//! Price series and log-returns on a session-aware sampling grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds since the Unix epoch.
pub type Timestamp = i64;

/// A trading session, inclusive at both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Session {
    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Timestamped prices for one instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    instrument_id: String,
    observations: Vec<(Timestamp, f64)>,
    sessions: Vec<Session>,
}

impl PriceSeries {
    /// Validates strictly increasing timestamps, positive prices and
    /// ordered, non-overlapping sessions.
    pub fn new(
        instrument_id: impl Into<String>,
        observations: Vec<(Timestamp, f64)>,
        sessions: Vec<Session>,
    ) -> Result<Self> {
        for w in observations.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidData(format!(
                    "timestamps not strictly increasing at {} -> {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if let Some(&(t, p)) = observations.iter().find(|(_, p)| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidData(format!("non-positive price {p} at {t}")));
        }
        for s in &sessions {
            if s.end < s.start {
                return Err(Error::InvalidData(format!(
                    "session ends before it starts: {} > {}",
                    s.start, s.end
                )));
            }
        }
        for w in sessions.windows(2) {
            if w[1].start <= w[0].end {
                return Err(Error::InvalidData(format!(
                    "sessions overlap or are unordered: [{}, {}] then [{}, {}]",
                    w[0].start, w[0].end, w[1].start, w[1].end
                )));
            }
        }
        Ok(Self { instrument_id: instrument_id.into(), observations, sessions })
    }

    /// Builds the series with one session per UTC calendar day, spanning that
    /// day's first to last observation.
    pub fn with_daily_sessions(
        instrument_id: impl Into<String>,
        observations: Vec<(Timestamp, f64)>,
    ) -> Result<Self> {
        let sessions = daily_sessions(&observations);
        Self::new(instrument_id, observations, sessions)
    }

    pub fn instrument_id(&self) -> &str {
        &self.instrument_id
    }

    pub fn observations(&self) -> &[(Timestamp, f64)] {
        &self.observations
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    /// Smallest spacing between consecutive observations, in seconds.
    pub fn base_resolution(&self) -> Option<i64> {
        self.observations.windows(2).map(|w| w[1].0 - w[0].0).min()
    }

    fn price_at(&self, t: Timestamp) -> Option<f64> {
        self.observations
            .binary_search_by_key(&t, |&(ts, _)| ts)
            .ok()
            .map(|i| self.observations[i].1)
    }
}

/// One session per UTC calendar day covering that day's observations.
pub fn daily_sessions(observations: &[(Timestamp, f64)]) -> Vec<Session> {
    let mut sessions: Vec<Session> = Vec::new();
    for &(t, _) in observations {
        let day = t.div_euclid(86_400);
        match sessions.last_mut() {
            Some(s) if s.start.div_euclid(86_400) == day => s.end = t,
            _ => sessions.push(Session { start: t, end: t }),
        }
    }
    sessions
}

/// How returns whose interval crosses a session boundary are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Grid anchored at every session start; only intervals inside one
    /// session produce a return.
    #[default]
    DropCrossSession,
    /// One continuous calendar grid anchored at the first session start;
    /// overnight and weekend intervals are kept.
    KeepAll,
}

/// Normalisation state of a [`ReturnSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    Raw,
    /// `values = (raw - mean_removed) / std_divided`.
    Standardized { mean_removed: f64, std_divided: f64 },
    /// Concatenation of `members` individually standardised series.
    PooledStandardized { members: usize },
}

impl Normalization {
    pub fn is_standardized(&self) -> bool {
        !matches!(self, Normalization::Raw)
    }
}

/// Log-returns at a fixed sampling interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub instrument_id: String,
    /// Sampling interval in minutes.
    pub dt_minutes: u32,
    pub values: Vec<f64>,
    pub normalization: Normalization,
}

impl ReturnSeries {
    pub fn raw(instrument_id: impl Into<String>, dt_minutes: u32, values: Vec<f64>) -> Result<Self> {
        if dt_minutes == 0 {
            return Err(Error::InvalidInterval("dt must be positive".into()));
        }
        Ok(Self {
            instrument_id: instrument_id.into(),
            dt_minutes,
            values,
            normalization: Normalization::Raw,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sums non-overlapping blocks of `factor` consecutive returns, i.e. the
    /// log-return over `factor * dt`. A trailing partial block is dropped.
    pub fn aggregate(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidInterval("aggregation factor must be positive".into()));
        }
        let values: Vec<f64> = self.values.chunks_exact(factor).map(|c| c.iter().sum()).collect();
        if values.is_empty() {
            return Err(Error::InsufficientData(format!(
                "{} returns cannot be aggregated by {factor}",
                self.values.len()
            )));
        }
        let dt = u32::try_from(factor)
            .ok()
            .and_then(|f| self.dt_minutes.checked_mul(f))
            .ok_or_else(|| Error::InvalidInterval("aggregated dt overflows".into()))?;
        Ok(Self {
            instrument_id: self.instrument_id.clone(),
            dt_minutes: dt,
            values,
            normalization: Normalization::Raw,
        })
    }
}

/// A single return with the grid interval that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnInterval {
    pub start: Timestamp,
    pub end: Timestamp,
    pub value: f64,
}

/// Log-returns `ln(p(t + dt) / p(t))` on a non-overlapping grid, with the
/// interval endpoints kept.
///
/// A return requires observed prices at both grid points; nothing is
/// forward-filled.
pub fn return_intervals(
    prices: &PriceSeries,
    dt_minutes: u32,
    policy: BoundaryPolicy,
) -> Result<Vec<ReturnInterval>> {
    if prices.observations.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{}: fewer than 2 prices",
            prices.instrument_id
        )));
    }
    let base = prices.base_resolution().expect("at least two observations");
    let step = i64::from(dt_minutes) * 60;
    if step < base {
        return Err(Error::InvalidInterval(format!(
            "dt of {dt_minutes} min is below the data resolution of {base} s"
        )));
    }
    if step % base != 0 {
        return Err(Error::InvalidInterval(format!(
            "dt of {dt_minutes} min is not a multiple of the data resolution of {base} s"
        )));
    }

    let mut out = Vec::new();
    let mut push = |t0: Timestamp, t1: Timestamp| {
        if let (Some(p0), Some(p1)) = (prices.price_at(t0), prices.price_at(t1)) {
            out.push(ReturnInterval { start: t0, end: t1, value: (p1 / p0).ln() });
        }
    };
    match policy {
        BoundaryPolicy::DropCrossSession => {
            for s in &prices.sessions {
                let mut t = s.start;
                while t + step <= s.end {
                    push(t, t + step);
                    t += step;
                }
            }
        }
        BoundaryPolicy::KeepAll => {
            let first_obs = prices.observations[0].0;
            let last_obs = prices.observations[prices.observations.len() - 1].0;
            let anchor = prices.sessions.first().map_or(first_obs, |s| s.start);
            let mut t = anchor;
            while t + step <= last_obs {
                push(t, t + step);
                t += step;
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{}: no usable price pairs at dt = {dt_minutes} min",
            prices.instrument_id
        )));
    }
    Ok(out)
}

/// Log-returns at sampling interval `dt_minutes`, see [`return_intervals`].
pub fn build_returns(
    prices: &PriceSeries,
    dt_minutes: u32,
    policy: BoundaryPolicy,
) -> Result<ReturnSeries> {
    let values = return_intervals(prices, dt_minutes, policy)?
        .into_iter()
        .map(|r| r.value)
        .collect();
    ReturnSeries::raw(prices.instrument_id.clone(), dt_minutes, values)
}

/// Two-pass sample mean and unbiased (n - 1) standard deviation.
pub(crate) fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let naive = values.iter().sum::<f64>() / n;
    // Second pass corrects the mean for accumulated rounding.
    let correction = values.iter().map(|v| v - naive).sum::<f64>() / n;
    let mean = naive + correction;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Rescales to zero sample mean and unit sample standard deviation.
///
/// Standardising an already standardised series composes the recorded
/// shift and scale, so the record always refers to the raw values.
pub fn standardize(r: &ReturnSeries) -> Result<ReturnSeries> {
    if r.values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{}: standardisation needs >= 2 values",
            r.instrument_id
        )));
    }
    let (mean, sd) = mean_and_std(&r.values);
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::DegenerateSeries(format!(
            "{}: zero standard deviation",
            r.instrument_id
        )));
    }
    let values = r.values.iter().map(|v| (v - mean) / sd).collect();
    let normalization = match r.normalization {
        Normalization::Standardized { mean_removed, std_divided } => Normalization::Standardized {
            mean_removed: mean_removed + std_divided * mean,
            std_divided: std_divided * sd,
        },
        _ => Normalization::Standardized { mean_removed: mean, std_divided: sd },
    };
    Ok(ReturnSeries {
        instrument_id: r.instrument_id.clone(),
        dt_minutes: r.dt_minutes,
        values,
        normalization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn minute_series(prices: &[f64]) -> PriceSeries {
        let obs = prices.iter().enumerate().map(|(i, &p)| (60 * i as i64, p)).collect();
        PriceSeries::with_daily_sessions("T", obs).unwrap()
    }

    #[test]
    fn one_minute_returns() {
        let p = minute_series(&[100.0, 101.0, 100.0]);
        let r = build_returns(&p, 1, BoundaryPolicy::DropCrossSession).unwrap();
        assert_eq!(r.values, vec![1.01f64.ln(), (100.0f64 / 101.0).ln()]);
        assert_eq!(r.normalization, Normalization::Raw);
    }

    #[test]
    fn two_minute_return_telescopes() {
        let p = minute_series(&[100.0, 101.0, 100.0]);
        let r = build_returns(&p, 2, BoundaryPolicy::DropCrossSession).unwrap();
        assert_eq!(r.values, vec![0.0]);
    }

    #[test]
    fn interval_errors() {
        let obs = vec![(0, 1.0), (120, 1.1), (240, 1.2)];
        let p = PriceSeries::with_daily_sessions("T", obs).unwrap();
        assert!(matches!(
            build_returns(&p, 1, BoundaryPolicy::KeepAll),
            Err(Error::InvalidInterval(_))
        ));
        assert!(matches!(
            build_returns(&p, 3, BoundaryPolicy::KeepAll),
            Err(Error::InvalidInterval(_))
        ));
        let single = PriceSeries::with_daily_sessions("T", vec![(0, 1.0)]).unwrap();
        assert!(matches!(
            build_returns(&single, 1, BoundaryPolicy::KeepAll),
            Err(Error::InsufficientData(_))
        ));
        let gap = PriceSeries::with_daily_sessions("T", vec![(0, 1.0), (60, 1.0)]).unwrap();
        assert!(matches!(
            build_returns(&gap, 2, BoundaryPolicy::KeepAll),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn missing_minute_skips_window() {
        let obs = vec![(0, 100.0), (60, 101.0), (180, 102.0), (240, 103.0)];
        let p = PriceSeries::new("T", obs, vec![Session { start: 0, end: 240 }]).unwrap();
        let r = return_intervals(&p, 1, BoundaryPolicy::DropCrossSession).unwrap();
        let starts: Vec<_> = r.iter().map(|i| i.start).collect();
        assert_eq!(starts, vec![0, 180]);
    }

    #[test]
    fn price_series_validation() {
        assert!(PriceSeries::new("T", vec![(0, 1.0), (0, 2.0)], vec![]).is_err());
        assert!(PriceSeries::new("T", vec![(0, 1.0), (1, -2.0)], vec![]).is_err());
        let overlapping = vec![Session { start: 0, end: 10 }, Session { start: 10, end: 20 }];
        assert!(PriceSeries::new("T", vec![(0, 1.0)], overlapping).is_err());
        assert!(PriceSeries::new("T", vec![(0, 1.0)], vec![Session { start: 5, end: 1 }]).is_err());
    }

    #[test]
    fn daily_sessions_split_on_utc_days() {
        let obs = vec![(100, 1.0), (200, 1.0), (86_500, 1.0), (86_600, 1.0), (200_000, 1.0)];
        let s = daily_sessions(&obs);
        assert_eq!(
            s,
            vec![
                Session { start: 100, end: 200 },
                Session { start: 86_500, end: 86_600 },
                Session { start: 200_000, end: 200_000 },
            ]
        );
    }

    #[test]
    fn standardize_three_points() {
        let r = ReturnSeries::raw("T", 1, vec![1.0, 2.0, 3.0]).unwrap();
        let s = standardize(&r).unwrap();
        for (got, want) in s.values.iter().zip([-1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(s.normalization, Normalization::Standardized { mean_removed: 2.0, std_divided: 1.0 });
    }

    #[test]
    fn standardize_constant_is_degenerate() {
        let r = ReturnSeries::raw("T", 1, vec![0.5; 10]).unwrap();
        assert!(matches!(standardize(&r), Err(Error::DegenerateSeries(_))));
        let short = ReturnSeries::raw("T", 1, vec![0.5]).unwrap();
        assert!(matches!(standardize(&short), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn standardize_is_idempotent_and_composes_record() {
        let r = ReturnSeries::raw("T", 1, vec![3.0, -1.0, 4.0, 1.0, -5.0, 9.0]).unwrap();
        let once = standardize(&r).unwrap();
        let twice = standardize(&once).unwrap();
        for (a, b) in once.values.iter().zip(&twice.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let (Normalization::Standardized { mean_removed: m1, std_divided: s1 },
             Normalization::Standardized { mean_removed: m2, std_divided: s2 }) =
            (once.normalization, twice.normalization)
        else {
            panic!("expected standardized records");
        };
        assert!((m1 - m2).abs() < 1e-12 && (s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn aggregate_sums_blocks() {
        let r = ReturnSeries::raw("T", 1, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let a = r.aggregate(2).unwrap();
        assert_eq!(a.values, vec![3.0, 7.0]);
        assert_eq!(a.dt_minutes, 2);
        assert!(r.aggregate(6).is_err());
        assert!(r.aggregate(0).is_err());
    }

    proptest! {
        #[test]
        fn standardize_is_affine_invariant(
            values in prop::collection::vec(-100.0f64..100.0, 5..60),
            a in 0.01f64..50.0,
            b in -100.0f64..100.0,
        ) {
            let r = ReturnSeries::raw("T", 1, values.clone()).unwrap();
            let Ok(s) = standardize(&r) else { return Ok(()); };
            let t = ReturnSeries::raw("T", 1, values.iter().map(|v| a * v + b).collect()).unwrap();
            let st = standardize(&t).unwrap();
            for (x, y) in s.values.iter().zip(&st.values) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
