//! q-Gaussian density, cumulative distribution and per-side fits of `q`.
//!
//! The density is
//! `p(x) = N_q [1 + (q-1) B_q (x - mu_q)^2]^(-1/(q-1))` for `1 < q < 3`.
//! Its complementary distribution has the closed form
//! `P(X > x) = 1/2 - N_q (x - mu_q) 2F1(1/2, 1/(q-1); 3/2; delta)` with
//! `delta = -B_q (q-1) (x - mu_q)^2`, which is the fast path used here. Deep
//! in the tails that difference cancels catastrophically, so the tail mass is
//! taken from the equivalent Student-t form through the regularised
//! incomplete beta function instead.

use serde::{Deserialize, Serialize};

use crate::distribution::{CcdfPoint, EmpiricalCcdf, Side};
use crate::error::{Error, Result};
use crate::hypermath::{ln_gamma_half_ratio, ln_inc_beta_reg, LN_SQRT_PI};

const SERIES_TOL: f64 = 1e-16;
const SERIES_MAX_TERMS: usize = 100_000;
// Partial sums whose terms exceed the result by this factor have lost too
// many digits to cancellation.
const MAX_CANCELLATION: f64 = 1e4;
// Below this tail mass the closed form is abandoned for the incomplete-beta
// route.
const CLOSED_FORM_MIN_TAIL: f64 = 1e-4;

/// Parameters of a q-Gaussian. `n_q` is derived from `q` and `b_q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QGaussianParams {
    q: f64,
    b_q: f64,
    mu_q: f64,
    n_q: f64,
}

impl QGaussianParams {
    pub fn new(q: f64, b_q: f64, mu_q: f64) -> Result<Self> {
        if !(q > 1.0 && q < 3.0) {
            return Err(Error::Domain(format!("q-Gaussian requires 1 < q < 3, got q = {q}")));
        }
        if !(b_q > 0.0 && b_q.is_finite()) {
            return Err(Error::Domain(format!("q-Gaussian requires B_q > 0, got {b_q}")));
        }
        if !mu_q.is_finite() {
            return Err(Error::Domain(format!("q-Gaussian mean must be finite, got {mu_q}")));
        }
        let beta = 1.0 / (q - 1.0);
        let ln_n = 0.5 * ((q - 1.0) * b_q).ln() - LN_SQRT_PI + ln_gamma_half_ratio(beta)?;
        Ok(Self { q, b_q, mu_q, n_q: ln_n.exp() })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn b_q(&self) -> f64 {
        self.b_q
    }

    pub fn mu_q(&self) -> f64 {
        self.mu_q
    }

    /// Normalisation constant `N_q = sqrt((q-1) B_q / pi) Γ(β) / Γ(β - 1/2)`,
    /// `β = 1/(q-1)`.
    pub fn n_q(&self) -> f64 {
        self.n_q
    }

    /// Degrees of freedom of the equivalent Student-t, `(3-q)/(q-1)`.
    pub fn dof(&self) -> f64 {
        implied_tail_alpha(self.q)
    }

    fn beta(&self) -> f64 {
        1.0 / (self.q - 1.0)
    }
}

/// CCDF tail exponent `(3-q)/(q-1)` of a q-Gaussian.
pub fn implied_tail_alpha(q: f64) -> f64 {
    (3.0 - q) / (q - 1.0)
}

/// Gauss hypergeometric function `2F1(a, b; c; z)` for `z < 1`.
///
/// Inside `|z| <= 1/2` the defining series is summed directly. Further out,
/// or when the alternating series loses too many digits, one of the Pfaff
/// transformations maps `z` onto `w = z/(z-1)` in `(0, 1)`:
/// `(1-z)^(-a) 2F1(a, c-b; c; w)` or `(1-z)^(-b) 2F1(c-a, b; c; w)`,
/// preferring the one whose series has only positive terms.
pub fn gauss_2f1(a: f64, b: f64, c: f64, z: f64) -> Result<f64> {
    if c <= 0.0 && c == c.floor() {
        return Err(Error::Domain(format!("2F1: c = {c} is a non-positive integer")));
    }
    if !(z < 1.0) || !a.is_finite() || !b.is_finite() || !c.is_finite() {
        return Err(Error::Domain(format!("2F1: requires finite parameters and z < 1, got z = {z}")));
    }
    if z == 0.0 {
        return Ok(1.0);
    }
    if z.abs() <= 0.5 {
        match series_2f1(a, b, c, z)? {
            Some(v) => return Ok(v),
            None if z > 0.0 => {
                return Err(Error::Convergence(format!(
                    "2F1({a}, {b}; {c}; {z}): series lost precision to cancellation"
                )))
            }
            None => {}
        }
    }
    if z > 0.0 {
        // 1/2 < z < 1: direct series, slower but still convergent.
        return series_2f1(a, b, c, z)?.ok_or_else(|| {
            Error::Convergence(format!("2F1({a}, {b}; {c}; {z}): series lost precision"))
        });
    }
    let w = z / (z - 1.0);
    let one_minus_z = 1.0 - z;
    let positive = |x: f64, y: f64| x > 0.0 && y > 0.0;
    let candidates = if positive(c - a, b) || !positive(a, c - b) {
        [(c - a, b, b), (a, c - b, a)]
    } else {
        [(a, c - b, a), (c - a, b, b)]
    };
    let mut last_err = None;
    for (aa, bb, power) in candidates {
        match series_2f1(aa, bb, c, w) {
            Ok(Some(v)) => return Ok(one_minus_z.powf(-power) * v),
            Ok(None) => {}
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| {
        Error::Convergence(format!("2F1({a}, {b}; {c}; {z}): both Pfaff series lost precision"))
    }))
}

/// Sums the hypergeometric series. `Ok(None)` flags a result dominated by
/// cancellation.
fn series_2f1(a: f64, b: f64, c: f64, z: f64) -> Result<Option<f64>> {
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut abs_sum = 1.0;
    for k in 0..SERIES_MAX_TERMS {
        let kf = k as f64;
        term *= (a + kf) * (b + kf) / ((c + kf) * (kf + 1.0)) * z;
        if term == 0.0 {
            // Terminating series (a or b a non-positive integer).
            break;
        }
        sum += term;
        abs_sum += term.abs();
        if !sum.is_finite() {
            return Err(Error::Convergence(format!("2F1({a}, {b}; {c}; {z}): series overflow")));
        }
        if term.abs() < SERIES_TOL * sum.abs() {
            return Ok((abs_sum <= MAX_CANCELLATION * sum.abs()).then_some(sum));
        }
    }
    if term == 0.0 {
        return Ok((abs_sum <= MAX_CANCELLATION * sum.abs()).then_some(sum));
    }
    Err(Error::Convergence(format!(
        "2F1({a}, {b}; {c}; {z}): no convergence within {SERIES_MAX_TERMS} terms"
    )))
}

/// q-Gaussian probability density.
pub fn qgaussian_pdf(x: f64, p: &QGaussianParams) -> f64 {
    let d = x - p.mu_q;
    let base = (p.q - 1.0) * p.b_q * d * d;
    p.n_q * (-p.beta() * base.ln_1p()).exp()
}

/// Tail mass `P(X > mu + |d|)` through the Student-t form:
/// `1/2 I_u(β - 1/2, 1/2)` with `u = 1/(1 + (q-1) B_q d^2)`.
fn ln_tail_mass(d: f64, p: &QGaussianParams) -> Result<f64> {
    let s = (p.q - 1.0) * p.b_q * d * d;
    let u = 1.0 / (1.0 + s);
    Ok(ln_inc_beta_reg(p.beta() - 0.5, 0.5, u)? - std::f64::consts::LN_2)
}

/// Closed-form `P(X > x)` when it is well conditioned.
fn closed_form(d: f64, p: &QGaussianParams) -> Option<f64> {
    let delta = -p.b_q * (p.q - 1.0) * d * d;
    if delta < -1.0 {
        return None;
    }
    let f = gauss_2f1(0.5, p.beta(), 1.5, delta).ok()?;
    let value = 0.5 - p.n_q * d * f;
    (value.min(1.0 - value) >= CLOSED_FORM_MIN_TAIL).then_some(value)
}

/// `P(X > x)` for a q-Gaussian.
///
/// Exactly `1/2` at `x = mu_q`. Near the centre the hypergeometric closed form
/// is used; elsewhere the tail mass comes from the incomplete beta function.
pub fn qgaussian_ccdf(x: f64, p: &QGaussianParams) -> Result<f64> {
    let d = x - p.mu_q;
    if d == 0.0 {
        return Ok(0.5);
    }
    if let Some(v) = closed_form(d, p) {
        return Ok(v);
    }
    let tail = ln_tail_mass(d, p)?.exp();
    Ok(if d > 0.0 { tail } else { 1.0 - tail })
}

/// `ln P(X > x)`, accurate far into the right tail where `P` underflows.
pub fn qgaussian_ln_ccdf(x: f64, p: &QGaussianParams) -> Result<f64> {
    let d = x - p.mu_q;
    if d == 0.0 {
        return Ok(-std::f64::consts::LN_2);
    }
    if let Some(v) = closed_form(d, p) {
        return Ok(v.ln());
    }
    let ln_tail = ln_tail_mass(d, p)?;
    Ok(if d > 0.0 { ln_tail } else { (-ln_tail.exp()).ln_1p() })
}

/// Per-side model curve: `P(|X - mu| > x | side) = 2 P(X > mu + x)`, sampled
/// at the given magnitudes.
pub fn model_curve(p: &QGaussianParams, xs: &[f64]) -> Result<Vec<CcdfPoint>> {
    xs.iter()
        .map(|&x| Ok(CcdfPoint { x, p: 2.0 * qgaussian_ccdf(p.mu_q + x, p)? }))
        .collect()
}

/// Result of [`fit_qgaussian`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QGaussianFit {
    pub params: QGaussianParams,
    pub side: Side,
    /// Sum of squared residuals in `ln P` at the optimum.
    pub sse: f64,
    pub implied_tail_alpha: f64,
    /// Set when the optimum of `q` lies within [`BOUNDARY_MARGIN`] of the
    /// search bounds.
    pub boundary_flag: bool,
    /// Number of CCDF points in the objective.
    pub n_points: usize,
}

/// Default search interval for `q`.
pub const DEFAULT_Q_BOUNDS: (f64, f64) = (1.001, 2.999);
/// Distance from a bound at which a fit is flagged.
pub const BOUNDARY_MARGIN: f64 = 1e-3;
/// Fewest empirical CCDF points accepted.
pub const MIN_CCDF_POINTS: usize = 50;
/// Fewest points left for the objective after thinning.
const MIN_SELECTED_POINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QFitOptions {
    pub q_bounds: (f64, f64),
    /// Target number of points, log-spaced in `p`, entering the objective.
    pub target_points: usize,
    /// The deepest point used still has this many samples above it.
    pub min_exceedances: usize,
    /// Search interval for `ln B_q`.
    pub ln_b_bounds: (f64, f64),
}

impl Default for QFitOptions {
    fn default() -> Self {
        Self { q_bounds: DEFAULT_Q_BOUNDS, target_points: 200, min_exceedances: 100, ln_b_bounds: (-15.0, 15.0) }
    }
}

/// Fits `q` and `B_q` (with `mu_q = 0`) to one side of an empirical CCDF.
pub fn fit_qgaussian(c: &EmpiricalCcdf, q_bounds: (f64, f64)) -> Result<QGaussianFit> {
    fit_qgaussian_with(c, &QFitOptions { q_bounds, ..Default::default() })
}

/// As [`fit_qgaussian`] with explicit options.
///
/// The objective is the sum of squared differences between `ln p` and
/// `ln(2 P(X > x))`. Points are thinned to roughly log-uniform spacing in `p`
/// so that the dense centre does not swamp the tail, and stop where fewer than
/// `min_exceedances` samples remain above. `q` is found by a coarse scan
/// followed by golden-section refinement; for each trial `q` the same search
/// runs over `ln B_q`.
pub fn fit_qgaussian_with(c: &EmpiricalCcdf, opts: &QFitOptions) -> Result<QGaussianFit> {
    let (q_lo, q_hi) = opts.q_bounds;
    if !(q_lo > 1.0 && q_lo < q_hi && q_hi < 3.0) {
        return Err(Error::Domain(format!("q bounds must satisfy 1 < lo < hi < 3, got ({q_lo}, {q_hi})")));
    }
    let (b_lo, b_hi) = opts.ln_b_bounds;
    if !(b_lo < b_hi) || !b_lo.is_finite() || !b_hi.is_finite() {
        return Err(Error::Domain(format!("invalid ln B bounds ({b_lo}, {b_hi})")));
    }
    if c.points().len() < MIN_CCDF_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} CCDF points, need {MIN_CCDF_POINTS}",
            c.points().len()
        )));
    }
    let data = select_points(c, opts.target_points, opts.min_exceedances);
    if data.len() < MIN_SELECTED_POINTS {
        return Err(Error::InsufficientData(format!(
            "only {} CCDF points have {} samples above them",
            data.len(),
            opts.min_exceedances
        )));
    }

    let sse = |q: f64, ln_b: f64| -> f64 {
        let Ok(params) = QGaussianParams::new(q, ln_b.exp(), 0.0) else {
            return f64::INFINITY;
        };
        let mut total = 0.0;
        for pt in &data {
            match qgaussian_ln_ccdf(pt.x, &params) {
                Ok(m) => {
                    let r = pt.p.ln() - (m + std::f64::consts::LN_2);
                    total += r * r;
                }
                Err(_) => return f64::INFINITY,
            }
        }
        total
    };
    let best_b = |q: f64| minimize(|lb| sse(q, lb), b_lo, b_hi, 31, 1e-7);
    let (q, _) = minimize(|q| best_b(q).1, q_lo, q_hi, 21, 1e-7);
    let (ln_b, sse_min) = best_b(q);
    if !sse_min.is_finite() {
        return Err(Error::Convergence("q-Gaussian objective is not finite anywhere".into()));
    }
    let params = QGaussianParams::new(q, ln_b.exp(), 0.0)?;
    Ok(QGaussianFit {
        params,
        side: c.side(),
        sse: sse_min,
        implied_tail_alpha: implied_tail_alpha(q),
        boundary_flag: q - q_lo < BOUNDARY_MARGIN || q_hi - q < BOUNDARY_MARGIN,
        n_points: data.len(),
    })
}

fn select_points(c: &EmpiricalCcdf, target: usize, min_exceedances: usize) -> Vec<CcdfPoint> {
    let usable: Vec<CcdfPoint> = c
        .points()
        .iter()
        .copied()
        .take_while(|pt| c.count_above(pt.x) >= min_exceedances)
        .collect();
    let (Some(first), Some(last)) = (usable.first(), usable.last()) else {
        return Vec::new();
    };
    if usable.len() <= target || target < 2 {
        return usable;
    }
    let (ln_hi, ln_lo) = (first.p.ln(), last.p.ln());
    let mut out: Vec<CcdfPoint> = Vec::with_capacity(target);
    let mut idx = 0;
    for j in 0..target {
        let ln_target = ln_hi + (ln_lo - ln_hi) * j as f64 / (target - 1) as f64;
        // First point at or below the target level (p decreases with index).
        while idx + 1 < usable.len() && usable[idx].p.ln() > ln_target {
            idx += 1;
        }
        if out.last() != Some(&usable[idx]) {
            out.push(usable[idx]);
        }
    }
    out
}

/// Coarse scan of `n` points over `[lo, hi]` followed by golden-section
/// search in the bracket around the best scan point.
fn minimize<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize, tol: f64) -> (f64, f64) {
    let step = (hi - lo) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| if i + 1 == n { hi } else { lo + step * i as f64 }).collect();
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let best = (0..n).min_by(|&i, &j| values[i].total_cmp(&values[j])).expect("non-empty grid");
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(n - 1)];
    let (x, fx) = golden_section(&f, a, b, tol);
    if fx <= values[best] {
        (x, fx)
    } else {
        (grid[best], values[best])
    }
}

fn golden_section<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
