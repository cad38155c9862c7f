//! Multifractal detrended fluctuation analysis (MF-DFA) and the singularity
//! spectrum obtained from it by a Legendre transform.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypermath::ols_slope;
use crate::returns::ReturnSeries;

pub const DEFAULT_POLY_ORDER: usize = 2;
pub const DEFAULT_SCALE_COUNT: usize = 16;
pub const DEFAULT_MIN_SCALE: usize = 16;
/// A cell needs at least this many windows with positive variance.
pub const MIN_WINDOWS: usize = 4;
/// Consecutive defined moments needed for a spectrum.
pub const MIN_SPECTRUM_MOMENTS: usize = 5;
/// Spectrum points with `f > 1 + F_TOLERANCE` are trimmed.
pub const F_TOLERANCE: f64 = 1e-6;
/// Trimming a point above `1 + SIGNIFICANT_EXCESS` produces a warning.
pub const SIGNIFICANT_EXCESS: f64 = 0.05;
// Window variances at or below this fraction of the scale's mean variance
// count as zero.
const ZERO_VARIANCE_FRACTION: f64 = 1e-24;

/// `q_m` from -4 to 4 in steps of 1/4.
pub fn default_q_grid() -> Vec<f64> {
    (-16..=16).map(|i| f64::from(i) * 0.25).collect()
}

/// `count` logarithmically spaced integer scales from `min` to `max`, rounded
/// and deduplicated.
pub fn log_spaced_scales(min: usize, max: usize, count: usize) -> Result<Vec<usize>> {
    if min == 0 || max < min || count == 0 {
        return Err(Error::Domain(format!("invalid scale range {min}..{max} with {count} scales")));
    }
    if count == 1 || min == max {
        return Ok(vec![min]);
    }
    let (lo, hi) = ((min as f64).ln(), (max as f64).ln());
    let mut scales: Vec<usize> = (0..count)
        .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp().round() as usize)
        .collect();
    scales.dedup();
    Ok(scales)
}

/// Sixteen scales from 16 to `n/4`.
pub fn default_scales(n: usize) -> Result<Vec<usize>> {
    let max = n / 4;
    if max < DEFAULT_MIN_SCALE {
        return Err(Error::InsufficientData(format!(
            "series of length {n} is too short for the default scales (need {})",
            4 * DEFAULT_MIN_SCALE
        )));
    }
    log_spaced_scales(DEFAULT_MIN_SCALE, max, DEFAULT_SCALE_COUNT)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfdfaConfig {
    /// `None` selects [`default_scales`] for the series length.
    pub scales: Option<Vec<usize>>,
    pub q_grid: Vec<f64>,
    pub poly_order: usize,
}

impl Default for MfdfaConfig {
    fn default() -> Self {
        Self { scales: None, q_grid: default_q_grid(), poly_order: DEFAULT_POLY_ORDER }
    }
}

/// `F_q(s)` over a grid of moment orders and scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSurface {
    pub scales: Vec<usize>,
    pub moments: Vec<f64>,
    pub poly_order: usize,
    /// `fq[i][j]` is `F_{moments[i]}(scales[j])`, `None` where undefined.
    pub fq: Vec<Vec<Option<f64>>>,
    /// Cells where zero-variance windows were excluded or that are undefined.
    pub flagged: Vec<Vec<bool>>,
}

impl FluctuationSurface {
    /// Generalised Hurst exponent per moment: the OLS slope of `ln F_q` on
    /// `ln s` over the defined scales, or `None` with fewer than three.
    pub fn hurst(&self) -> Vec<Option<f64>> {
        self.fq
            .iter()
            .map(|row| {
                let (ls, lf): (Vec<f64>, Vec<f64>) = row
                    .iter()
                    .zip(&self.scales)
                    .filter_map(|(f, &s)| f.map(|f| ((s as f64).ln(), f.ln())))
                    .unzip();
                ols_slope(&ls, &lf).ok().map(|fit| fit.slope)
            })
            .collect()
    }
}

/// MF-DFA with an explicit configuration.
pub fn mfdfa_with(r: &ReturnSeries, config: &MfdfaConfig) -> Result<FluctuationSurface> {
    let scales = match &config.scales {
        Some(s) => s.clone(),
        None => default_scales(r.values.len())?,
    };
    mfdfa(r, &scales, &config.q_grid, config.poly_order)
}

/// Fluctuation functions of the series.
///
/// The profile (cumulative sum of the mean-removed series) is cut into
/// `floor(N/s)` windows from the start and as many from the end. Each window
/// is detrended with a least-squares polynomial of order `poly_order` and its
/// residual variance `F^2` recorded. Then
/// `F_q(s) = (mean F^(q))^(1/q)`, with the logarithmic mean at `q = 0`. For
/// `q <= 0` windows of zero variance are excluded and the cell flagged; a cell
/// with fewer than four positive-variance windows is undefined.
pub fn mfdfa(r: &ReturnSeries, scales: &[usize], q_grid: &[f64], poly_order: usize) -> Result<FluctuationSurface> {
    let min_scale = 4 * (poly_order + 1);
    if scales.is_empty() {
        return Err(Error::Domain("no scales given".into()));
    }
    if scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("scales must be strictly increasing".into()));
    }
    if scales[0] < min_scale {
        return Err(Error::Domain(format!(
            "smallest scale {} is below 4 (poly_order + 1) = {min_scale}",
            scales[0]
        )));
    }
    if q_grid.is_empty() || q_grid.iter().any(|q| !q.is_finite()) {
        return Err(Error::Domain("moment grid must be non-empty and finite".into()));
    }
    if q_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("moment grid must be strictly increasing".into()));
    }
    let x = &r.values;
    let n = x.len();
    let s_max = *scales.last().expect("non-empty");
    if n < 4 * s_max {
        return Err(Error::InsufficientData(format!(
            "series length {n} is below 4 x largest scale ({s_max})"
        )));
    }
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::DegenerateSeries(format!("{}: constant series", r.instrument_id)));
    }

    let mean = x.iter().sum::<f64>() / n as f64;
    let profile: Vec<f64> = x
        .iter()
        .scan(0.0, |acc, &v| {
            *acc += v - mean;
            Some(*acc)
        })
        .collect();

    let per_scale: Vec<Vec<f64>> = scales
        .par_iter()
        .map(|&s| window_variances(&profile, s, poly_order))
        .collect();

    let mut fq = vec![vec![None; scales.len()]; q_grid.len()];
    let mut flagged = vec![vec![false; scales.len()]; q_grid.len()];
    for (j, variances) in per_scale.iter().enumerate() {
        let mean_var = variances.iter().sum::<f64>() / variances.len() as f64;
        let threshold = ZERO_VARIANCE_FRACTION * mean_var;
        let positive: Vec<f64> = variances.iter().copied().filter(|&v| v > threshold).collect();
        let has_zero = positive.len() < variances.len();
        for (i, &q) in q_grid.iter().enumerate() {
            if positive.len() < MIN_WINDOWS {
                flagged[i][j] = true;
                continue;
            }
            fq[i][j] = Some(fluctuation(q, variances, &positive));
            flagged[i][j] = q <= 0.0 && has_zero;
        }
    }
    if fq.iter().flatten().all(Option::is_none) {
        return Err(Error::DegenerateSeries(format!(
            "{}: every window has zero variance after detrending",
            r.instrument_id
        )));
    }
    Ok(FluctuationSurface { scales: scales.to_vec(), moments: q_grid.to_vec(), poly_order, fq, flagged })
}

/// `F_q` from window variances, evaluated in log space so that large `|q|`
/// neither overflows nor underflows.
fn fluctuation(q: f64, all: &[f64], positive: &[f64]) -> f64 {
    if q == 0.0 {
        let mean_ln = positive.iter().map(|v| v.ln()).sum::<f64>() / positive.len() as f64;
        return (0.5 * mean_ln).exp();
    }
    // Zero-variance windows contribute nothing for q > 0 but still count.
    let (terms, count) = if q > 0.0 { (positive, all.len()) } else { (positive, positive.len()) };
    let logs: Vec<f64> = terms.iter().map(|v| 0.5 * q * v.ln()).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
    let ln_mean = top + sum.ln() - (count as f64).ln();
    (ln_mean / q).exp()
}

/// Residual variances of the `2 floor(N/s)` windows of size `s`.
fn window_variances(profile: &[f64], s: usize, poly_order: usize) -> Vec<f64> {
    let basis = orthonormal_basis(s, poly_order);
    let n = profile.len();
    let k = n / s;
    let starts = (0..k).map(|v| v * s).chain((0..k).map(|v| n - (v + 1) * s));
    starts
        .map(|start| {
            let y = &profile[start..start + s];
            let mut residual = y.to_vec();
            for e in &basis {
                let c: f64 = y.iter().zip(e).map(|(a, b)| a * b).sum();
                for (r, b) in residual.iter_mut().zip(e) {
                    *r -= c * b;
                }
            }
            residual.iter().map(|r| r * r).sum::<f64>() / s as f64
        })
        .collect()
}

/// Orthonormal polynomial basis of degree `<= order` on `s` equally spaced
/// points, by modified Gram-Schmidt on monomials of a centred, scaled grid.
fn orthonormal_basis(s: usize, order: usize) -> Vec<Vec<f64>> {
    let half = (s as f64 - 1.0) / 2.0;
    let t: Vec<f64> = (0..s).map(|i| (i as f64 - half) / half.max(1.0)).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(order + 1);
    for degree in 0..=order {
        let mut v: Vec<f64> = t.iter().map(|x| x.powi(degree as i32)).collect();
        // Two passes keep the basis orthogonal to working precision.
        for _ in 0..2 {
            for e in &basis {
                let c: f64 = v.iter().zip(e).map(|(a, b)| a * b).sum();
                for (vi, ei) in v.iter_mut().zip(e) {
                    *vi -= c * ei;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        basis.push(v.into_iter().map(|a| a / norm).collect());
    }
    basis
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumPoint {
    pub alpha_h: f64,
    pub f_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularitySpectrum {
    /// Ordered by `alpha_h`.
    pub points: Vec<SpectrumPoint>,
    pub width: f64,
    /// `(q_m, h(q_m))` over the moments used.
    pub h_of_q: Vec<(f64, f64)>,
    /// Points removed for `f > 1 + F_TOLERANCE`.
    pub trimmed: usize,
    pub warnings: Vec<String>,
}

impl SingularitySpectrum {
    /// Largest `f(alpha)`.
    pub fn f_max(&self) -> f64 {
        self.points.iter().map(|p| p.f_alpha).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Singularity spectrum of a fluctuation surface, from the longest run of
/// consecutive moments with a defined Hurst exponent.
pub fn spectrum(f: &FluctuationSurface) -> Result<SingularitySpectrum> {
    let h = f.hurst();
    let mut best = (0, 0);
    let mut start = 0;
    for i in 0..=h.len() {
        if i == h.len() || h[i].is_none() {
            if i - start > best.1 - best.0 {
                best = (start, i);
            }
            start = i + 1;
        }
    }
    let (lo, hi) = best;
    let qs = &f.moments[lo..hi];
    let hs: Vec<f64> = h[lo..hi].iter().map(|v| v.expect("defined run")).collect();
    spectrum_from_hurst(qs, &hs)
}

/// Legendre transform of `tau(q) = q h(q) - 1`:
/// `alpha = d tau / d q`, `f = q alpha - tau`.
///
/// Derivatives use second-order differences on the (possibly non-uniform)
/// grid, one-sided at the ends. Points with `f > 1 + F_TOLERANCE`, the
/// signature of a locally non-concave `tau`, are dropped.
pub fn spectrum_from_hurst(qs: &[f64], hs: &[f64]) -> Result<SingularitySpectrum> {
    if qs.len() != hs.len() {
        return Err(Error::Mismatch(format!("{} moments but {} exponents", qs.len(), hs.len())));
    }
    if qs.len() < MIN_SPECTRUM_MOMENTS {
        return Err(Error::InsufficientData(format!(
            "{} consecutive moments with a defined exponent, need {MIN_SPECTRUM_MOMENTS}",
            qs.len()
        )));
    }
    if qs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Domain("moments must be strictly increasing".into()));
    }
    let tau: Vec<f64> = qs.iter().zip(hs).map(|(q, h)| q * h - 1.0).collect();
    let m = qs.len();
    let alpha: Vec<f64> = (0..m)
        .map(|i| {
            if i == 0 {
                (tau[1] - tau[0]) / (qs[1] - qs[0])
            } else if i == m - 1 {
                (tau[m - 1] - tau[m - 2]) / (qs[m - 1] - qs[m - 2])
            } else {
                let (hm, hp) = (qs[i] - qs[i - 1], qs[i + 1] - qs[i]);
                (hm * hm * tau[i + 1] - hp * hp * tau[i - 1] + (hp * hp - hm * hm) * tau[i])
                    / (hm * hp * (hm + hp))
            }
        })
        .collect();
    let mut points = Vec::with_capacity(m);
    let mut trimmed = 0;
    let mut significant = 0;
    for i in 0..m {
        let f_alpha = qs[i] * alpha[i] - tau[i];
        if f_alpha > 1.0 + F_TOLERANCE {
            trimmed += 1;
            if f_alpha > 1.0 + SIGNIFICANT_EXCESS {
                significant += 1;
            }
            continue;
        }
        points.push(SpectrumPoint { alpha_h: alpha[i], f_alpha });
    }
    if points.is_empty() {
        return Err(Error::DegenerateSeries("every spectrum point has f > 1".into()));
    }
    points.sort_by(|a, b| a.alpha_h.total_cmp(&b.alpha_h).then(a.f_alpha.total_cmp(&b.f_alpha)));
    points.dedup_by(|b, a| (a.alpha_h - b.alpha_h).abs() < 1e-9 && (a.f_alpha - b.f_alpha).abs() < 1e-9);
    let mut warnings = Vec::new();
    if significant > 0 {
        warnings.push(format!(
            "{significant} spectrum point(s) with f > {} trimmed: tau(q) is not concave there",
            1.0 + SIGNIFICANT_EXCESS
        ));
    }
    let width = points.last().expect("non-empty").alpha_h - points[0].alpha_h;
    Ok(SingularitySpectrum {
        points,
        width,
        h_of_q: qs.iter().copied().zip(hs.iter().copied()).collect(),
        trimmed,
        warnings,
    })
}

/// Number of grid points used by [`average_spectra`].
pub const AVERAGE_GRID_POINTS: usize = 101;

/// Average of several spectra, such as those of shuffle surrogates.
///
/// The curves `f(alpha_h)` are interpolated linearly onto a common grid of
/// [`AVERAGE_GRID_POINTS`] values spanning the `alpha_h` range covered by
/// every input, and averaged point by point. If that common range is a single
/// point or empty, the result is one point: the mean position and height of
/// the spectra maxima. `h_of_q` is averaged over the moments common to all
/// inputs.
pub fn average_spectra(spectra: &[SingularitySpectrum]) -> Result<SingularitySpectrum> {
    let first = spectra.first().ok_or_else(|| Error::InsufficientData("no spectra to average".into()))?;
    if spectra.iter().any(|s| s.points.is_empty()) {
        return Err(Error::InsufficientData("cannot average an empty spectrum".into()));
    }
    let lo = spectra.iter().map(|s| s.points[0].alpha_h).fold(f64::NEG_INFINITY, f64::max);
    let hi = spectra.iter().map(|s| s.points[s.points.len() - 1].alpha_h).fold(f64::INFINITY, f64::min);
    let k = spectra.len() as f64;
    let points = if hi - lo < 1e-12 {
        let peak = |s: &SingularitySpectrum| {
            *s.points.iter().max_by(|a, b| a.f_alpha.total_cmp(&b.f_alpha)).expect("non-empty")
        };
        let alpha_h = spectra.iter().map(|s| peak(s).alpha_h).sum::<f64>() / k;
        let f_alpha = spectra.iter().map(|s| peak(s).f_alpha).sum::<f64>() / k;
        vec![SpectrumPoint { alpha_h, f_alpha }]
    } else {
        let m = AVERAGE_GRID_POINTS;
        (0..m)
            .map(|i| {
                let alpha_h = if i + 1 == m { hi } else { lo + (hi - lo) * i as f64 / (m - 1) as f64 };
                let total: f64 =
                    spectra.iter().map(|s| interpolate(&s.points, alpha_h).expect("inside common range")).sum();
                SpectrumPoint { alpha_h, f_alpha: total / k }
            })
            .collect()
    };
    let mut common: Vec<f64> = first.h_of_q.iter().map(|&(q, _)| q).collect();
    for s in &spectra[1..] {
        common.retain(|q| s.h_of_q.iter().any(|&(q2, _)| q2.to_bits() == q.to_bits()));
    }
    let h_of_q = common
        .iter()
        .map(|&q| {
            let total: f64 = spectra
                .iter()
                .filter_map(|s| s.h_of_q.iter().find(|&&(q2, _)| q2.to_bits() == q.to_bits()))
                .map(|&(_, h)| h)
                .sum();
            (q, total / k)
        })
        .collect();
    let width = points[points.len() - 1].alpha_h - points[0].alpha_h;
    Ok(SingularitySpectrum {
        points,
        width,
        h_of_q,
        trimmed: spectra.iter().map(|s| s.trimmed).sum(),
        warnings: spectra.iter().flat_map(|s| s.warnings.iter().cloned()).collect(),
    })
}

/// Piecewise-linear `f` at `alpha` within the spectrum's range.
fn interpolate(points: &[SpectrumPoint], alpha: f64) -> Option<f64> {
    let (first, last) = (points.first()?, points.last()?);
    if alpha < first.alpha_h - 1e-12 || alpha > last.alpha_h + 1e-12 {
        return None;
    }
    if points.len() == 1 {
        return Some(first.f_alpha);
    }
    let j = points.partition_point(|p| p.alpha_h <= alpha).clamp(1, points.len() - 1);
    let (a, b) = (points[j - 1], points[j]);
    if b.alpha_h == a.alpha_h {
        return Some(a.f_alpha.max(b.f_alpha));
    }
    let t = ((alpha - a.alpha_h) / (b.alpha_h - a.alpha_h)).clamp(0.0, 1.0);
    Some(a.f_alpha + t * (b.f_alpha - a.f_alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{gen_cascade, gen_gaussian, gen_signed_cascade};

    fn cascade_h(q: f64, w1: f64) -> f64 {
        let w2 = 1.0 - w1;
        1.0 / q - (w1.powf(q) + w2.powf(q)).log2() / q
    }

    #[test]
    fn default_grids() {
        let q = default_q_grid();
        assert_eq!(q.len(), 33);
        assert_eq!((q[0], q[16], q[32]), (-4.0, 0.0, 4.0));
        let s = default_scales(1 << 16).unwrap();
        assert_eq!((s[0], *s.last().unwrap()), (16, 16384));
        assert_eq!(s.len(), 16);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(default_scales(60).is_err());
        assert_eq!(log_spaced_scales(16, 20, 16).unwrap(), vec![16, 17, 18, 19, 20]);
    }

    #[test]
    fn basis_is_orthonormal_and_detrends_polynomials() {
        let b = orthonormal_basis(37, 3);
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = b[i].iter().zip(&b[j]).map(|(x, y)| x * y).sum();
                assert!((dot - f64::from(u8::from(i == j))).abs() < 1e-12);
            }
        }
        // A quadratic profile leaves no residual under order-2 detrending.
        let profile: Vec<f64> = (0..400).map(|i| 3.0 - 0.2 * f64::from(i) + 1e-3 * f64::from(i * i)).collect();
        let v = window_variances(&profile, 40, 2);
        assert_eq!(v.len(), 20);
        assert!(v.iter().all(|&x| x < 1e-18));
    }

    #[test]
    fn dfa2_column_matches_direct_oracle() {
        // q = 2 is ordinary DFA: sqrt of the mean window variance, computed
        // here with a normal-equations polynomial fit.
        let r = gen_gaussian(4_000, 9).unwrap();
        let f = mfdfa(&r, &[20, 50, 200], &[-1.0, 2.0], 2).unwrap();
        let mean = r.values.iter().sum::<f64>() / r.values.len() as f64;
        let mut profile = Vec::new();
        let mut acc = 0.0;
        for v in &r.values {
            acc += v - mean;
            profile.push(acc);
        }
        for (j, &s) in f.scales.iter().enumerate() {
            let n = profile.len();
            let k = n / s;
            let starts: Vec<usize> = (0..k).map(|v| v * s).chain((0..k).map(|v| n - (v + 1) * s)).collect();
            let mut total = 0.0;
            for &st in &starts {
                total += quadratic_residual_variance(&profile[st..st + s]);
            }
            let oracle = (total / starts.len() as f64).sqrt();
            let got = f.fq[1][j].unwrap();
            assert!((got - oracle).abs() < 1e-9 * oracle, "s = {s}: {got} vs {oracle}");
        }
    }

    fn quadratic_residual_variance(y: &[f64]) -> f64 {
        // Least squares on 1, t, t^2 via 3x3 normal equations (Cramer).
        let t: Vec<f64> = (0..y.len()).map(|i| i as f64 / y.len() as f64).collect();
        let mut m = [[0.0; 3]; 3];
        let mut rhs = [0.0; 3];
        for (ti, yi) in t.iter().zip(y) {
            let row = [1.0, *ti, ti * ti];
            for a in 0..3 {
                rhs[a] += row[a] * yi;
                for b in 0..3 {
                    m[a][b] += row[a] * row[b];
                }
            }
        }
        let det = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(&m);
        let coef: Vec<f64> = (0..3)
            .map(|c| {
                let mut mc = m;
                for r in 0..3 {
                    mc[r][c] = rhs[r];
                }
                det(&mc) / d
            })
            .collect();
        t.iter()
            .zip(y)
            .map(|(ti, yi)| {
                let e = yi - coef[0] - coef[1] * ti - coef[2] * ti * ti;
                e * e
            })
            .sum::<f64>()
            / y.len() as f64
    }

    #[test]
    fn input_validation() {
        let r = gen_gaussian(1_000, 1).unwrap();
        let q = default_q_grid();
        assert!(matches!(mfdfa(&r, &[], &q, 2), Err(Error::Domain(_))));
        assert!(matches!(mfdfa(&r, &[32, 16], &q, 2), Err(Error::Domain(_))));
        assert!(matches!(mfdfa(&r, &[8, 16], &q, 2), Err(Error::Domain(_))));
        assert!(matches!(mfdfa(&r, &[16, 32], &[1.0, 0.0], 2), Err(Error::Domain(_))));
        assert!(matches!(mfdfa(&r, &[16, 300], &q, 2), Err(Error::InsufficientData(_))));
        let constant = ReturnSeries::raw("c", 1, vec![0.001; 1_000]).unwrap();
        assert!(matches!(mfdfa(&constant, &[16, 32], &q, 2), Err(Error::DegenerateSeries(_))));
    }

    #[test]
    fn zero_variance_windows_are_excluded_and_flagged() {
        // A series that is quiet for its first half: profile windows there are
        // exactly linear and vanish after detrending.
        let noise = gen_gaussian(2_000, 4).unwrap();
        let mut v = vec![0.0; 2_000];
        v.extend_from_slice(&noise.values);
        let r = ReturnSeries::raw("half", 1, v).unwrap();
        let f = mfdfa(&r, &[16, 32, 64], &[-2.0, 0.0, 2.0], 1).unwrap();
        assert!(f.flagged[0].iter().all(|&b| b));
        assert!(f.flagged[2].iter().all(|&b| !b));
        assert!(f.fq.iter().flatten().all(|c| c.is_some_and(|v| v.is_finite() && v > 0.0)));
    }

    #[test]
    fn gaussian_noise_is_monofractal() {
        let r = gen_gaussian(1 << 16, 2).unwrap();
        let f = mfdfa_with(&r, &MfdfaConfig::default()).unwrap();
        for (q, h) in f.moments.iter().zip(f.hurst()) {
            let h = h.unwrap();
            assert!((h - 0.5).abs() < 0.05, "q = {q}: h = {h}");
        }
        let s = spectrum(&f).unwrap();
        assert!(s.width < 0.15, "width {}", s.width);
        assert!((s.f_max() - 1.0).abs() < 0.05);
        assert!(s.points.iter().all(|p| p.f_alpha <= 1.0 + F_TOLERANCE));
    }

    #[test]
    fn cascade_matches_analytic_hurst() {
        let r = gen_cascade(16, 0.6, 7).unwrap();
        let f = mfdfa_with(&r, &MfdfaConfig::default()).unwrap();
        for (q, h) in f.moments.iter().zip(f.hurst()) {
            if *q == 0.0 {
                continue;
            }
            let h = h.unwrap();
            let expect = cascade_h(*q, 0.6);
            assert!((h - expect).abs() < 0.05, "q = {q}: {h} vs {expect}");
        }
    }

    #[test]
    fn signed_cascade_shifts_hurst() {
        // Random signs decorrelate the increments: h drops by
        // -1/2 log2(w1^2 + w2^2) relative to the unsigned cascade.
        let shift = 0.5 * (0.6f64.powi(2) + 0.4f64.powi(2)).log2();
        let r = gen_signed_cascade(16, 0.6, 7).unwrap();
        let f = mfdfa(&r, &log_spaced_scales(32, 1 << 14, 16).unwrap(), &[2.0], 2).unwrap();
        let h = f.hurst()[0].unwrap();
        let expect = cascade_h(2.0, 0.6) + shift;
        assert!((h - expect).abs() < 0.05, "{h} vs {expect}");
    }

    #[test]
    fn linear_tau_gives_point_spectrum() {
        let qs = default_q_grid();
        let hs = vec![0.5; qs.len()];
        let s = spectrum_from_hurst(&qs, &hs).unwrap();
        assert_eq!(s.points.len(), 1);
        assert!((s.points[0].alpha_h - 0.5).abs() < 1e-12);
        assert!((s.points[0].f_alpha - 1.0).abs() < 1e-12);
        assert!(s.width.abs() < 1e-12);
        assert_eq!(s.trimmed, 0);
    }

    #[test]
    fn analytic_cascade_spectrum() {
        // Exact tau of the cascade on a fine grid: width approaches
        // |log2 w1 - log2 w2| as |q| grows.
        let qs: Vec<f64> = (-200..=200).map(|i| f64::from(i) * 0.1).filter(|q| *q != 0.0).collect();
        let hs: Vec<f64> = qs.iter().map(|&q| cascade_h(q, 0.6)).collect();
        let s = spectrum_from_hurst(&qs[..200], &hs[..200]).unwrap();
        assert!(s.points.iter().all(|p| p.f_alpha <= 1.0 + F_TOLERANCE));
        let both = spectrum_from_hurst(&qs, &hs).unwrap();
        let expect = (0.6f64.log2() - 0.4f64.log2()).abs();
        assert!((both.width - expect).abs() < 0.02, "{} vs {expect}", both.width);
    }

    #[test]
    fn convex_tau_is_trimmed_with_warning() {
        let qs: Vec<f64> = (0..9).map(f64::from).collect();
        // tau = q h - 1 with h = 0.5 + 0.05 q gives convex tau and f > 1.
        let hs: Vec<f64> = qs.iter().map(|q| 0.5 + 0.05 * q).collect();
        match spectrum_from_hurst(&qs, &hs) {
            Ok(s) => {
                assert!(s.trimmed > 0);
                assert!(!s.warnings.is_empty());
                assert!(s.points.iter().all(|p| p.f_alpha <= 1.0 + F_TOLERANCE));
            }
            Err(e) => assert!(matches!(e, Error::DegenerateSeries(_))),
        }
        assert!(matches!(spectrum_from_hurst(&qs[..4], &hs[..4]), Err(Error::InsufficientData(_))));
    }

    fn spec(points: &[(f64, f64)]) -> SingularitySpectrum {
        let points: Vec<SpectrumPoint> =
            points.iter().map(|&(alpha_h, f_alpha)| SpectrumPoint { alpha_h, f_alpha }).collect();
        let width = points[points.len() - 1].alpha_h - points[0].alpha_h;
        SingularitySpectrum { points, width, h_of_q: vec![(1.0, 0.5)], trimmed: 0, warnings: vec![] }
    }

    #[test]
    fn averaging_identical_spectra_is_identity() {
        let r = gen_gaussian(1 << 12, 3).unwrap();
        let s = spectrum(&mfdfa_with(&r, &MfdfaConfig::default()).unwrap()).unwrap();
        let avg = average_spectra(&[s.clone(), s.clone(), s.clone()]).unwrap();
        assert!((avg.width - s.width).abs() < 1e-12);
        for p in &avg.points {
            let direct = interpolate(&s.points, p.alpha_h).unwrap();
            assert!((p.f_alpha - direct).abs() < 1e-12);
        }
        assert_eq!(avg.h_of_q, s.h_of_q);
        assert!(average_spectra(&[]).is_err());
    }

    #[test]
    fn averaging_on_common_grid() {
        // Two tents over [0, 1] and [0.5, 1.5]: the grid spans the overlap
        // [0.5, 1] where f is the mean of both curves.
        let a = spec(&[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)]);
        let b = spec(&[(0.5, 0.0), (1.0, 1.0), (1.5, 0.0)]);
        let avg = average_spectra(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(avg.points.len(), AVERAGE_GRID_POINTS);
        assert!((avg.points[0].alpha_h - 0.5).abs() < 1e-12);
        assert!((avg.width - 0.5).abs() < 1e-12);
        assert!(avg.points.iter().all(|p| (p.f_alpha - 0.5).abs() < 1e-12));
        // Disjoint supports collapse to the mean of the maxima.
        let c = spec(&[(2.0, 0.9), (2.5, 1.0), (3.0, 0.8)]);
        let far = average_spectra(&[a, c]).unwrap();
        assert_eq!(far.points.len(), 1);
        assert!((far.points[0].alpha_h - 1.5).abs() < 1e-12);
        assert!((far.points[0].f_alpha - 1.0).abs() < 1e-12);
        // Point spectra at one alpha stay a point.
        let p = average_spectra(&[spec(&[(0.5, 1.0)]), spec(&[(0.5, 0.98)])]).unwrap();
        assert_eq!(p.points.len(), 1);
        assert!((p.points[0].f_alpha - 0.99).abs() < 1e-12);
        assert_eq!(p.width, 0.0);
    }

    #[test]
    fn surface_is_deterministic() {
        let r = gen_cascade(13, 0.65, 5).unwrap();
        let a = mfdfa_with(&r, &MfdfaConfig::default()).unwrap();
        let b = mfdfa_with(&r, &MfdfaConfig::default()).unwrap();
        let bits = |f: &FluctuationSurface| -> Vec<Option<u64>> {
            f.fq.iter().flatten().map(|c| c.map(f64::to_bits)).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }
}
