//! Shuffle surrogates and synthetic processes with known properties.
//!
//! All randomness flows through [`rng_for`]: a ChaCha20 generator keyed by a
//! 64-bit seed, with the stream selector used to derive independent
//! sub-generators (one per surrogate realisation, bootstrap replica, ...).
//! Results therefore do not depend on how work is scheduled across threads.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::returns::ReturnSeries;

/// Name and version of the pseudo-random generator, recorded in outputs.
pub const PRNG_NAME: &str = "ChaCha20 (rand_chacha 0.9, seed_from_u64 + set_stream)";

/// Generator for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser; mixes a tag into a seed to key independent tasks.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent random permutations of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateEnsemble {
    pub base_id: String,
    pub n_realizations: usize,
    pub seed: u64,
    pub realizations: Vec<ReturnSeries>,
}

/// `n` uniformly random permutations of `r`; realisation `i` uses stream `i`
/// of the seeded generator.
pub fn shuffle_surrogates(r: &ReturnSeries, n: usize, seed: u64) -> Result<SurrogateEnsemble> {
    if n == 0 {
        return Err(Error::Domain("at least one surrogate realisation is required".into()));
    }
    let realizations = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut values = r.values.clone();
            values.shuffle(&mut rng_for(seed, i as u64));
            ReturnSeries {
                instrument_id: format!("{}#shuffle{i}", r.instrument_id),
                dt_minutes: r.dt_minutes,
                values,
                normalization: r.normalization,
            }
        })
        .collect();
    Ok(SurrogateEnsemble {
        base_id: r.instrument_id.clone(),
        n_realizations: n,
        seed,
        realizations,
    })
}

fn check_len(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::Domain("series length must be positive".into()))
    } else {
        Ok(())
    }
}

fn synthetic(name: String, values: Vec<f64>) -> ReturnSeries {
    ReturnSeries::raw(name, 1, values).expect("dt = 1 is valid")
}

/// I.i.d. standard normal draws.
pub fn gen_gaussian(n: usize, seed: u64) -> Result<ReturnSeries> {
    check_len(n)?;
    let mut rng = rng_for(seed, 0);
    let values = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(synthetic("gaussian".into(), values))
}

/// I.i.d. Student-t draws with `nu` degrees of freedom (CCDF tail exponent `nu`).
pub fn gen_student_t(n: usize, nu: f64, seed: u64) -> Result<ReturnSeries> {
    check_len(n)?;
    if !(nu > 0.0) {
        return Err(Error::Domain(format!("student-t requires nu > 0, got {nu}")));
    }
    let dist = StudentT::new(nu)
        .map_err(|e| Error::Domain(format!("student-t with nu = {nu}: {e}")))?;
    let mut rng = rng_for(seed, 0);
    let values = (0..n).map(|_| dist.sample(&mut rng)).collect();
    Ok(synthetic(format!("student_t(nu={nu})"), values))
}

/// Degrees of freedom of the Student-t law equivalent to a q-Gaussian.
pub fn qgaussian_dof(q: f64) -> f64 {
    (3.0 - q) / (q - 1.0)
}

/// I.i.d. q-Gaussian draws with `b_q = 1`, `mu_q = 0`.
///
/// A Student-t variate with `nu = (3 - q)/(q - 1)` divided by
/// `sqrt(nu (q - 1))` has density proportional to `[1 + (q - 1) x²]^(-1/(q-1))`.
pub fn gen_qgaussian(n: usize, q: f64, seed: u64) -> Result<ReturnSeries> {
    if !(q > 1.0 && q < 3.0) {
        return Err(Error::Domain(format!("q-Gaussian sampling requires 1 < q < 3, got {q}")));
    }
    let nu = qgaussian_dof(q);
    let scale = 1.0 / (nu * (q - 1.0)).sqrt();
    let mut t = gen_student_t(n, nu, seed)?;
    t.values.iter_mut().for_each(|v| *v *= scale);
    t.instrument_id = format!("qgaussian(q={q})");
    Ok(t)
}

/// Stationary Gaussian AR(1): `x_t = phi x_{t-1} + e_t`, `e_t ~ N(0, 1)`.
pub fn gen_ar1(n: usize, phi: f64, seed: u64) -> Result<ReturnSeries> {
    check_len(n)?;
    if !(phi.abs() < 1.0) {
        return Err(Error::Domain(format!("AR(1) requires |phi| < 1, got {phi}")));
    }
    let mut rng = rng_for(seed, 0);
    let stationary = Normal::new(0.0, 1.0 / (1.0 - phi * phi).sqrt())
        .map_err(|e| Error::Domain(e.to_string()))?;
    let mut x = stationary.sample(&mut rng);
    let mut values = Vec::with_capacity(n);
    values.push(x);
    for _ in 1..n {
        let e: f64 = StandardNormal.sample(&mut rng);
        x = phi * x + e;
        values.push(x);
    }
    Ok(synthetic(format!("ar1(phi={phi})"), values))
}

fn cascade_masses(levels: u32, w1: f64, rng: &mut ChaCha20Rng) -> Result<Vec<f64>> {
    use rand::Rng;
    if !(w1 > 0.0 && w1 < 1.0) {
        return Err(Error::Domain(format!("cascade weight must lie in (0, 1), got {w1}")));
    }
    if levels == 0 || levels > 30 {
        return Err(Error::Domain(format!("cascade levels must be in 1..=30, got {levels}")));
    }
    let w2 = 1.0 - w1;
    let mut masses = vec![1.0f64];
    for _ in 0..levels {
        let mut next = Vec::with_capacity(masses.len() * 2);
        for &m in &masses {
            let (left, right) = if rng.random::<bool>() { (w1, w2) } else { (w2, w1) };
            next.push(m * left);
            next.push(m * right);
        }
        masses = next;
    }
    // Unit mean.
    let scale = (1u64 << levels) as f64;
    masses.iter_mut().for_each(|m| *m *= scale);
    Ok(masses)
}

/// Binomial multiplicative cascade with `2^levels` positive values.
///
/// Each split hands weight `w1` to a randomly chosen child and `1 - w1` to the
/// other. The generalised Hurst exponents of the series are
/// `h(q) = 1/q - log2(w1^q + (1-w1)^q)/q`.
pub fn gen_cascade(levels: u32, w1: f64, seed: u64) -> Result<ReturnSeries> {
    let mut rng = rng_for(seed, 0);
    let values = cascade_masses(levels, w1, &mut rng)?;
    Ok(synthetic(format!("cascade(levels={levels},w1={w1})"), values))
}

/// Cascade magnitudes with independent random signs.
///
/// The sign flips turn the cumulative profile into a martingale, which shifts
/// every `h(q)` of [`gen_cascade`] by `log2(w1² + (1-w1)²)/2` while leaving the
/// singularity spectrum's shape unchanged.
pub fn gen_signed_cascade(levels: u32, w1: f64, seed: u64) -> Result<ReturnSeries> {
    use rand::Rng;
    let mut rng = rng_for(seed, 0);
    let mut values = cascade_masses(levels, w1, &mut rng)?;
    for v in &mut values {
        if rng.random::<bool>() {
            *v = -*v;
        }
    }
    Ok(synthetic(format!("signed_cascade(levels={levels},w1={w1})"), values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(v: &[f64]) -> Vec<f64> {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    }

    #[test]
    fn shuffle_preserves_multiset() {
        let r = ReturnSeries::raw("S", 1, (0..100).map(f64::from).collect()).unwrap();
        let e = shuffle_surrogates(&r, 1, 7).unwrap();
        assert_eq!(e.realizations.len(), 1);
        assert_eq!(sorted(&e.realizations[0].values), r.values);
        assert_ne!(e.realizations[0].values, r.values);
    }

    #[test]
    fn shuffle_is_deterministic_and_distinct() {
        let r = ReturnSeries::raw("S", 1, (0..50).map(f64::from).collect()).unwrap();
        let a = shuffle_surrogates(&r, 5, 99).unwrap();
        let b = shuffle_surrogates(&r, 5, 99).unwrap();
        assert_eq!(a, b);
        for i in 0..5 {
            for j in (i + 1)..5 {
                assert_ne!(a.realizations[i].values, a.realizations[j].values);
            }
        }
        let c = shuffle_surrogates(&r, 5, 100).unwrap();
        assert_ne!(a, c);
        assert!(shuffle_surrogates(&r, 0, 1).is_err());
    }

    #[test]
    fn generators_are_reproducible() {
        assert_eq!(gen_gaussian(1000, 3).unwrap(), gen_gaussian(1000, 3).unwrap());
        assert_eq!(gen_student_t(1000, 3.0, 3).unwrap(), gen_student_t(1000, 3.0, 3).unwrap());
        assert_eq!(gen_ar1(1000, 0.3, 3).unwrap(), gen_ar1(1000, 0.3, 3).unwrap());
        assert_eq!(gen_cascade(8, 0.6, 3).unwrap(), gen_cascade(8, 0.6, 3).unwrap());
        assert_ne!(gen_gaussian(1000, 3).unwrap(), gen_gaussian(1000, 4).unwrap());
    }

    #[test]
    fn generator_domains() {
        assert!(gen_gaussian(0, 1).is_err());
        assert!(gen_student_t(10, 0.0, 1).is_err());
        assert!(gen_student_t(10, -1.0, 1).is_err());
        assert!(gen_qgaussian(10, 1.0, 1).is_err());
        assert!(gen_qgaussian(10, 3.0, 1).is_err());
        assert!(gen_ar1(10, 1.0, 1).is_err());
        assert!(gen_cascade(10, 0.0, 1).is_err());
        assert!(gen_cascade(10, 1.0, 1).is_err());
    }

    #[test]
    fn cascade_conserves_mass() {
        let c = gen_cascade(12, 0.7, 11).unwrap();
        assert_eq!(c.len(), 4096);
        let mean = c.values.iter().sum::<f64>() / c.len() as f64;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(c.values.iter().all(|&v| v > 0.0));
        // Every value is 2^L w1^k w2^(L-k).
        let max = c.values.iter().cloned().fold(0.0, f64::max);
        assert!((max - 4096.0 * 0.7f64.powi(12)).abs() < 1e-9 * max);
    }

    #[test]
    fn student_t_variance() {
        for nu in [5.0, 10.0] {
            let t = gen_student_t(1_000_000, nu, 2024).unwrap();
            let n = t.len() as f64;
            let mean = t.values.iter().sum::<f64>() / n;
            let var = t.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            let want = nu / (nu - 2.0);
            assert!((var / want - 1.0).abs() < 0.05, "nu={nu}: {var} vs {want}");
        }
    }

    #[test]
    fn derive_seed_spreads_tags() {
        let a = derive_seed(1, 0);
        let b = derive_seed(1, 1);
        let c = derive_seed(2, 0);
        assert!(a != b && a != c && b != c);
        assert_eq!(derive_seed(1, 0), a);
    }
}
