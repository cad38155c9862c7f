//! Statistical toolkit for high-frequency return series.
//!
//! The crate covers the full chain from raw prices to the stylised facts
//! usually reported for intraday index and stock returns:
//!
//! * [`returns`]: log-returns on a session-aware, non-overlapping grid and
//!   standardisation.
//! * [`distribution`]: per-side empirical complementary distributions
//!   `P(X > x)` and pooling across instruments.
//! * [`tailfit`]: tail exponents from log-log regression, bootstrap
//!   intervals and multi-interval reports.
//! * [`qgauss`]: q-Gaussian density, closed-form cumulative distribution via
//!   the Gauss hypergeometric function, and per-side fits of `q`.
//! * [`mfdfa`]: multifractal detrended fluctuation analysis and singularity
//!   spectra.
//! * [`surrogate`]: shuffle surrogates and seeded synthetic generators with
//!   analytically known properties.
//! * [`autocorr`]: sample autocorrelation with an i.i.d. noise band.
//! * [`hypermath`]: special functions, quadrature and regression primitives
//!   shared by the modules above.
//! * [`io`]: CSV readers and writers for prices, sessions and plot data.

// Validation is written as `!(x > 0.0)` on purpose: NaN must fail it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autocorr;
pub mod distribution;
pub mod error;
pub mod hypermath;
pub mod io;
pub mod mfdfa;
pub mod qgauss;
pub mod returns;
pub mod surrogate;
pub mod tailfit;

pub use error::{Error, Result};
pub use returns::{Normalization, PriceSeries, ReturnSeries};
pub use distribution::{EmpiricalCcdf, Side};
