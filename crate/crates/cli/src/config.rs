//! Analysis configuration: command-line flags, flat `key = value` files and
//! validation.
//!
//! Every flag has a file key of the same name without the leading dashes
//! (`--dt-grid 1,4,16` is `dt-grid = 1,4,16`; underscores are accepted too).
//! Values given on the command line replace those from the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use qtail_core::autocorr::DEFAULT_Z;
use qtail_core::io::instrument_id;
use qtail_core::mfdfa::{log_spaced_scales, MfdfaConfig, DEFAULT_POLY_ORDER};
use qtail_core::qgauss::DEFAULT_Q_BOUNDS;
use qtail_core::returns::BoundaryPolicy;
use qtail_core::tailfit::MIN_BOOTSTRAP_REPLICAS;
use serde::Serialize;

use crate::CliError;

pub const DEFAULT_DT_GRID: [u32; 6] = [1, 4, 16, 32, 60, 120];
pub const DEFAULT_SURROGATES: usize = 10;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_MAX_LAG: usize = 20;
pub const DEFAULT_OUT_DIR: &str = "qtail-out";

const KEYS: [&str; 15] = [
    "input",
    "dt-grid",
    "boundary",
    "seed",
    "surrogates",
    "tail-range",
    "log-bins",
    "bootstrap",
    "q-bounds",
    "mfdfa-q",
    "mfdfa-scales",
    "poly-order",
    "max-lag",
    "z",
    "out-dir",
];

/// Flags shared by `analyze`, `tail`, `mfdfa` and `acf`.
#[derive(Debug, Clone, Default, Args)]
pub struct AnalysisArgs {
    /// Price file (`timestamp,price` CSV); repeat for several instruments.
    #[arg(long, value_name = "PATH")]
    pub input: Vec<String>,
    /// Sampling intervals in minutes, comma separated [default: 1,4,16,32,60,120].
    #[arg(long, value_name = "LIST")]
    pub dt_grid: Option<String>,
    /// `drop-cross-session` (default) or `keep-all`.
    #[arg(long)]
    pub boundary: Option<String>,
    /// Master seed for surrogates and bootstrap [default: 1].
    #[arg(long)]
    pub seed: Option<String>,
    /// Shuffled surrogates averaged for the MF-DFA baseline [default: 10].
    #[arg(long)]
    pub surrogates: Option<String>,
    /// Tail fit range `x_lo,x_hi` in standard deviations [default: automatic].
    #[arg(long, value_name = "LO,HI")]
    pub tail_range: Option<String>,
    /// Logarithmic bins per decade for the tail regression [default: unbinned].
    #[arg(long)]
    pub log_bins: Option<String>,
    /// Bootstrap replicas per tail cell, 0 disables [default: 0].
    #[arg(long)]
    pub bootstrap: Option<String>,
    /// Search interval for q in the q-Gaussian fit [default: 1.001,2.999].
    #[arg(long, value_name = "LO,HI")]
    pub q_bounds: Option<String>,
    /// MF-DFA moment orders: a list, or `min:max:step` [default: -4:4:0.25].
    #[arg(long, value_name = "GRID", allow_hyphen_values = true)]
    pub mfdfa_q: Option<String>,
    /// MF-DFA scales: a list, or `min:max:count` log-spaced [default: automatic].
    #[arg(long, value_name = "GRID")]
    pub mfdfa_scales: Option<String>,
    /// MF-DFA detrending polynomial order [default: 2].
    #[arg(long)]
    pub poly_order: Option<String>,
    /// Largest ACF lag [default: 20].
    #[arg(long)]
    pub max_lag: Option<String>,
    /// Normal quantile of the ACF noise band [default: 1.96].
    #[arg(long)]
    pub z: Option<String>,
    /// Output directory [default: qtail-out].
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<String>,
    /// Flat `key = value` file with defaults for any of the flags above.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

/// Unparsed settings, one or more values per key.
pub type RawConfig = BTreeMap<String, Vec<String>>;

impl AnalysisArgs {
    /// Flags that were given, keyed like the config file.
    pub fn to_raw(&self) -> RawConfig {
        let mut raw = RawConfig::new();
        if !self.input.is_empty() {
            raw.insert("input".into(), self.input.clone());
        }
        let single = [
            ("dt-grid", &self.dt_grid),
            ("boundary", &self.boundary),
            ("seed", &self.seed),
            ("surrogates", &self.surrogates),
            ("tail-range", &self.tail_range),
            ("log-bins", &self.log_bins),
            ("bootstrap", &self.bootstrap),
            ("q-bounds", &self.q_bounds),
            ("mfdfa-q", &self.mfdfa_q),
            ("mfdfa-scales", &self.mfdfa_scales),
            ("poly-order", &self.poly_order),
            ("max-lag", &self.max_lag),
            ("z", &self.z),
            ("out-dir", &self.out_dir),
        ];
        for (k, v) in single {
            if let Some(v) = v {
                raw.insert(k.into(), vec![v.clone()]);
            }
        }
        raw
    }

    /// Reads the config file (if any), applies the flags on top and validates.
    pub fn resolve(&self) -> Result<AnalysisConfig, CliError> {
        let mut raw = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                parse_config_file(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => RawConfig::new(),
        };
        raw.extend(self.to_raw());
        AnalysisConfig::from_raw(&raw)
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// `input` may repeat, every other key may appear once.
pub fn parse_config_file(text: &str) -> Result<RawConfig, String> {
    let mut raw = RawConfig::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(format!("line {}: unknown key {key:?}", i + 1));
        }
        let entry = raw.entry(key.clone()).or_default();
        if !entry.is_empty() && key != "input" {
            return Err(format!("line {}: duplicate key {key:?}", i + 1));
        }
        entry.push(v.trim().to_string());
    }
    Ok(raw)
}

/// Validated settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisConfig {
    pub inputs: Vec<PathBuf>,
    pub dt_grid: Vec<u32>,
    pub boundary: BoundaryPolicy,
    pub seed: u64,
    pub n_surrogates: usize,
    pub tail_range: Option<(f64, f64)>,
    pub log_bins: Option<usize>,
    /// Bootstrap replicas per tail cell; 0 disables the bootstrap.
    pub bootstrap: usize,
    pub q_bounds: (f64, f64),
    pub mfdfa: MfdfaConfig,
    pub max_lag: usize,
    pub z: f64,
    /// Not part of the manifest: results do not depend on where they go.
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            dt_grid: DEFAULT_DT_GRID.to_vec(),
            boundary: BoundaryPolicy::default(),
            seed: DEFAULT_SEED,
            n_surrogates: DEFAULT_SURROGATES,
            tail_range: None,
            log_bins: None,
            bootstrap: 0,
            q_bounds: DEFAULT_Q_BOUNDS,
            mfdfa: MfdfaConfig::default(),
            max_lag: DEFAULT_MAX_LAG,
            z: DEFAULT_Z,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
        }
    }
}

fn one<'a>(raw: &'a RawConfig, key: &str) -> Option<&'a str> {
    raw.get(key).and_then(|v| v.last()).map(String::as_str)
}

fn num<T: std::str::FromStr>(key: &str, s: &str) -> Result<T, CliError> {
    s.trim().parse().map_err(|_| CliError::Config(format!("{key}: cannot parse {s:?}")))
}

fn list<T: std::str::FromStr>(key: &str, s: &str) -> Result<Vec<T>, CliError> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| num(key, t)).collect()
}

fn pair(key: &str, s: &str) -> Result<(f64, f64), CliError> {
    match list::<f64>(key, s)?.as_slice() {
        &[a, b] if a.is_finite() && b.is_finite() && a < b => Ok((a, b)),
        _ => Err(CliError::Config(format!("{key}: expected `lo,hi` with lo < hi, got {s:?}"))),
    }
}

fn q_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let key = "mfdfa-q";
    let grid = if let Some((a, rest)) = s.split_once(':') {
        let (b, step) = rest
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("{key}: expected min:max:step, got {s:?}")))?;
        let (a, b, step): (f64, f64, f64) = (num(key, a)?, num(key, b)?, num(key, step)?);
        if !(step > 0.0 && a < b) {
            return Err(CliError::Config(format!("{key}: need min < max and step > 0, got {s:?}")));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| a + step * i as f64).collect()
    } else {
        list(key, s)?
    };
    if grid.len() < 2 || grid.iter().any(|q: &f64| !q.is_finite()) {
        return Err(CliError::Config(format!("{key}: need at least two finite moment orders")));
    }
    Ok(grid)
}

fn scales(s: &str) -> Result<Vec<usize>, CliError> {
    let key = "mfdfa-scales";
    if let Some((a, rest)) = s.split_once(':') {
        let (b, count) = rest
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("{key}: expected min:max:count, got {s:?}")))?;
        log_spaced_scales(num(key, a)?, num(key, b)?, num(key, count)?)
            .map_err(|e| CliError::Config(format!("{key}: {e}")))
    } else {
        list(key, s)
    }
}

impl AnalysisConfig {
    /// Builds and validates a configuration from unparsed settings.
    pub fn from_raw(raw: &RawConfig) -> Result<Self, CliError> {
        let mut c = AnalysisConfig::default();
        if let Some(inputs) = raw.get("input") {
            c.inputs = inputs
                .iter()
                .flat_map(|v| v.split(','))
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
                .collect();
        }
        if let Some(v) = one(raw, "dt-grid") {
            c.dt_grid = list("dt-grid", v)?;
        }
        if let Some(v) = one(raw, "boundary") {
            c.boundary = match v.trim() {
                "drop-cross-session" | "drop_cross_session" => BoundaryPolicy::DropCrossSession,
                "keep-all" | "keep_all" => BoundaryPolicy::KeepAll,
                other => return Err(CliError::Config(format!("boundary: unknown policy {other:?}"))),
            };
        }
        if let Some(v) = one(raw, "seed") {
            c.seed = num("seed", v)?;
        }
        if let Some(v) = one(raw, "surrogates") {
            c.n_surrogates = num("surrogates", v)?;
        }
        if let Some(v) = one(raw, "tail-range") {
            c.tail_range = Some(pair("tail-range", v)?);
        }
        if let Some(v) = one(raw, "log-bins") {
            c.log_bins = Some(num("log-bins", v)?);
        }
        if let Some(v) = one(raw, "bootstrap") {
            c.bootstrap = num("bootstrap", v)?;
        }
        if let Some(v) = one(raw, "q-bounds") {
            c.q_bounds = pair("q-bounds", v)?;
        }
        if let Some(v) = one(raw, "mfdfa-q") {
            c.mfdfa.q_grid = q_grid(v)?;
        }
        if let Some(v) = one(raw, "mfdfa-scales") {
            c.mfdfa.scales = Some(scales(v)?);
        }
        c.mfdfa.poly_order = match one(raw, "poly-order") {
            Some(v) => num("poly-order", v)?,
            None => DEFAULT_POLY_ORDER,
        };
        if let Some(v) = one(raw, "max-lag") {
            c.max_lag = num("max-lag", v)?;
        }
        if let Some(v) = one(raw, "z") {
            c.z = num("z", v)?;
        }
        if let Some(v) = one(raw, "out-dir") {
            c.out_dir = PathBuf::from(v.trim());
        }
        c.validate()?;
        Ok(c)
    }

    /// Checks every invariant that can be checked before touching the data.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.inputs.is_empty() {
            return bad("at least one input is required".into());
        }
        let mut ids: Vec<String> = self.inputs.iter().map(|p| instrument_id(p)).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("two inputs share the instrument id {:?}", w[0]));
        }
        if self.dt_grid.is_empty() {
            return bad("dt-grid must not be empty".into());
        }
        if self.dt_grid.contains(&0) {
            return bad("dt-grid entries must be positive".into());
        }
        if self.n_surrogates == 0 {
            return bad("surrogates must be at least 1".into());
        }
        if let Some((lo, _)) = self.tail_range {
            if lo <= 0.0 {
                return bad("tail-range must be positive".into());
            }
        }
        if self.log_bins == Some(0) {
            return bad("log-bins must be positive".into());
        }
        if self.bootstrap != 0 && self.bootstrap < MIN_BOOTSTRAP_REPLICAS {
            return bad(format!("bootstrap needs 0 or at least {MIN_BOOTSTRAP_REPLICAS} replicas"));
        }
        let (qlo, qhi) = self.q_bounds;
        if !(qlo > 1.0 && qhi < 3.0) {
            return bad("q-bounds must lie inside (1, 3)".into());
        }
        if let Some(s) = &self.mfdfa.scales {
            if s.len() < 2 || s.iter().any(|&v| v <= self.mfdfa.poly_order + 1) {
                return bad("mfdfa-scales need two or more scales larger than poly-order + 1".into());
            }
        }
        if self.max_lag == 0 {
            return bad("max-lag must be at least 1".into());
        }
        if !(self.z > 0.0 && self.z.is_finite()) {
            return bad("z must be positive".into());
        }
        Ok(())
    }

    /// Sorted, de-duplicated sampling intervals.
    pub fn dt_sorted(&self) -> Vec<u32> {
        let mut v = self.dt_grid.clone();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn out_path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out_dir.join(rel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qtail_core::mfdfa::default_q_grid;

    fn raw(pairs: &[(&str, &str)]) -> RawConfig {
        let mut r = RawConfig::new();
        for (k, v) in pairs {
            r.entry(k.to_string()).or_default().push(v.to_string());
        }
        r
    }

    #[test]
    fn defaults() {
        let c = AnalysisConfig::from_raw(&raw(&[("input", "a.csv")])).unwrap();
        assert_eq!(c.dt_grid, vec![1, 4, 16, 32, 60, 120]);
        assert_eq!(c.n_surrogates, 10);
        assert_eq!(c.mfdfa.q_grid, default_q_grid());
        assert_eq!(c.q_bounds, DEFAULT_Q_BOUNDS);
    }

    #[test]
    fn empty_dt_grid_is_rejected() {
        let e = AnalysisConfig::from_raw(&raw(&[("input", "a.csv"), ("dt-grid", "")])).unwrap_err();
        assert!(matches!(e, CliError::Config(_)));
        assert!(AnalysisConfig::from_raw(&raw(&[("input", "a.csv"), ("dt-grid", "1,0")])).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for (k, v) in [
            ("seed", "-1"),
            ("surrogates", "0"),
            ("tail-range", "3,2"),
            ("bootstrap", "10"),
            ("q-bounds", "0.5,2"),
            ("boundary", "sometimes"),
            ("mfdfa-q", "1:0:0.5"),
            ("max-lag", "0"),
        ] {
            let r = AnalysisConfig::from_raw(&raw(&[("input", "a.csv"), (k, v)]));
            assert!(matches!(r, Err(CliError::Config(_))), "{k} = {v}");
        }
        let r = AnalysisConfig::from_raw(&raw(&[("input", "x/a.csv"), ("input", "y/a.csv")]));
        assert!(matches!(r, Err(CliError::Config(m)) if m.contains("\"a\"")));
    }

    #[test]
    fn file_then_flags() {
        let text = "# run\ninput = a.csv\ninput = b.csv\ndt_grid = 1, 4\nseed = 9\nmfdfa-q = -2:2:1\n";
        let mut r = parse_config_file(text).unwrap();
        let args = AnalysisArgs { seed: Some("11".into()), ..Default::default() };
        r.extend(args.to_raw());
        let c = AnalysisConfig::from_raw(&r).unwrap();
        assert_eq!(c.inputs, vec![PathBuf::from("a.csv"), PathBuf::from("b.csv")]);
        assert_eq!(c.dt_grid, vec![1, 4]);
        assert_eq!(c.seed, 11);
        assert_eq!(c.mfdfa.q_grid, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn file_errors() {
        assert!(parse_config_file("seed 3").unwrap_err().contains("line 1"));
        assert!(parse_config_file("colour = red").unwrap_err().contains("unknown key"));
        assert!(parse_config_file("seed = 1\nseed = 2").unwrap_err().contains("duplicate"));
    }

    #[test]
    fn scale_grids() {
        assert_eq!(scales("16,32,64").unwrap(), vec![16, 32, 64]);
        let s = scales("32:1024:6").unwrap();
        assert_eq!((s[0], *s.last().unwrap(), s.len()), (32, 1024, 6));
    }
}
