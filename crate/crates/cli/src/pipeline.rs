//! The analysis pipeline: prices → returns on a Δt grid → tails, q-Gaussian
//! fits, MF-DFA and ACF, written as plot-ready CSV/JSON plus a manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use qtail_core::autocorr::{acf_with_z, AcfResult};
use qtail_core::distribution::{ccdf, EmpiricalCcdf};
use qtail_core::io::{self, instrument_id, load_price_series, sibling_sessions_path};
use qtail_core::mfdfa::{average_spectra, mfdfa_with, spectrum, SingularitySpectrum};
use qtail_core::qgauss::{fit_qgaussian_with, model_curve, QFitOptions, QGaussianFit};
use qtail_core::returns::{build_returns, standardize, PriceSeries};
use qtail_core::surrogate::{derive_seed, shuffle_surrogates, PRNG_NAME};
use qtail_core::tailfit::{
    tail_report, TailFitOptions, TailReport, TailReportOptions, TailReportRow, DEFAULT_MIN_EXCEEDANCES,
    DEFAULT_X_LO,
};
use qtail_core::{ReturnSeries, Side};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::AnalysisConfig;
use crate::CliError;

const SIDES: [Side; 2] = [Side::Positive, Side::Negative];
/// Tags mixed into an instrument's seed for its random streams.
const BOOTSTRAP_TAG: u64 = 1;
const SURROGATE_TAG: u64 = 2;

/// Which analyses a run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Stages {
    pub tail: bool,
    pub qgauss: bool,
    pub mfdfa: bool,
    pub acf: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { tail: true, qgauss: true, mfdfa: true, acf: true };
    pub const TAIL: Stages = Stages { tail: true, qgauss: true, mfdfa: false, acf: false };
    pub const MFDFA: Stages = Stages { tail: false, qgauss: false, mfdfa: true, acf: false };
    pub const ACF: Stages = Stages { tail: false, qgauss: false, mfdfa: false, acf: true };
}

/// 64-bit FNV-1a, used to turn instrument ids into seed tags.
fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Seed of an instrument's random streams.
pub fn instrument_seed(master: u64, id: &str) -> u64 {
    derive_seed(master, fnv1a(id))
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let io_err = |source| CliError::Io { path: path.to_path_buf(), source };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let mut w = BufWriter::new(File::create(&tmp).map_err(io_err)?);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err)?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(io_err)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: Option<String>,
}

/// Returns built for one sampling interval.
#[derive(Debug, Clone, Serialize)]
pub struct DtCell {
    pub dt_minutes: u32,
    pub n_returns: usize,
    pub mean_removed: Option<f64>,
    pub std_divided: Option<f64>,
    pub error: Option<String>,
}

/// One q-Gaussian fit cell.
#[derive(Debug, Clone, Serialize)]
pub struct QFitRow {
    pub instrument: String,
    pub dt_minutes: u32,
    pub side: Side,
    pub q: Option<f64>,
    pub b_q: Option<f64>,
    pub mu_q: Option<f64>,
    pub sse: Option<f64>,
    pub implied_tail_alpha: Option<f64>,
    pub boundary_flag: Option<bool>,
    pub n_points: Option<usize>,
    pub error: Option<String>,
}

impl QFitRow {
    fn new(instrument: &str, dt_minutes: u32, side: Side, fit: Result<QGaussianFit, String>) -> Self {
        let mut row = QFitRow {
            instrument: instrument.to_string(),
            dt_minutes,
            side,
            q: None,
            b_q: None,
            mu_q: None,
            sse: None,
            implied_tail_alpha: None,
            boundary_flag: None,
            n_points: None,
            error: None,
        };
        match fit {
            Ok(f) => {
                row.q = Some(f.params.q());
                row.b_q = Some(f.params.b_q());
                row.mu_q = Some(f.params.mu_q());
                row.sse = Some(f.sse);
                row.implied_tail_alpha = Some(f.implied_tail_alpha);
                row.boundary_flag = Some(f.boundary_flag);
                row.n_points = Some(f.n_points);
            }
            Err(e) => row.error = Some(e),
        }
        row
    }
}

/// Everything recorded about one input.
#[derive(Debug, Clone, Serialize)]
pub struct InstrumentRecord {
    pub id: String,
    pub input: InputRecord,
    /// Sessions file next to the input; absent means one session per UTC day.
    pub sessions_file: Option<InputRecord>,
    pub status: &'static str,
    pub error: Option<String>,
    pub seed: u64,
    pub bootstrap_seed: Option<u64>,
    pub surrogate_seed: Option<u64>,
    pub cells: Vec<DtCell>,
    /// Sampling interval used for MF-DFA and the ACF (the finest available).
    pub analysis_dt: Option<u32>,
    pub mfdfa_scales: Option<Vec<usize>>,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(skip)]
    tail_rows: Vec<TailReportRow>,
    #[serde(skip)]
    q_rows: Vec<QFitRow>,
}

impl InstrumentRecord {
    fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, Serialize)]
struct MethodNotes {
    ccdf: &'static str,
    tail_default_x_lo: f64,
    tail_default_min_exceedances: usize,
    qgauss_fit: QFitOptions,
    acf_estimator: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub prng: &'static str,
    pub command: String,
    pub stages: Stages,
    pub config: AnalysisConfig,
    methods: MethodNotes,
    pub instruments: Vec<InstrumentRecord>,
    pub succeeded: usize,
    pub failed: usize,
    pub outputs: Vec<String>,
}

/// Outcome of [`run_analyze`].
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub succeeded: usize,
    pub failed: usize,
    pub manifest_path: PathBuf,
}

/// Runs the selected stages on every input and writes all outputs.
///
/// A failing input is recorded in the manifest and does not affect the
/// others; the caller decides what a run with no successful input means.
pub fn run_analyze(cfg: &AnalysisConfig, stages: Stages, command: &str) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| CliError::Io { path: cfg.out_dir.clone(), source })?;
    let records: Vec<InstrumentRecord> = cfg.inputs.par_iter().map(|p| analyze_instrument(p, cfg, stages)).collect();

    let mut outputs = Vec::new();
    if stages.tail {
        let rows: Vec<TailReportRow> = records.iter().flat_map(|r| r.tail_rows.iter().cloned()).collect();
        let report = TailReport { rows };
        write_atomic(&cfg.out_path("tail_report.csv"), |w| write_tail_table(w, &report, &cfg.dt_sorted()))?;
        write_json(&cfg.out_path("tail_report.json"), &tail_rows_json(&report))?;
        outputs.extend(["tail_report.csv".to_string(), "tail_report.json".to_string()]);
    }
    if stages.qgauss {
        let rows: Vec<&QFitRow> = records.iter().flat_map(|r| r.q_rows.iter()).collect();
        write_json(&cfg.out_path("qgauss_fits.json"), &rows)?;
        outputs.push("qgauss_fits.json".into());
    }
    let succeeded = records.iter().filter(|r| r.ok()).count();
    let failed = records.len() - succeeded;
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        tool: "qtail",
        version: env!("CARGO_PKG_VERSION"),
        prng: PRNG_NAME,
        command: command.to_string(),
        stages,
        config: cfg.clone(),
        methods: MethodNotes {
            ccdf: "p(x) = (#{|r| > x} + 1)/n per side over standardised returns",
            tail_default_x_lo: DEFAULT_X_LO,
            tail_default_min_exceedances: DEFAULT_MIN_EXCEEDANCES,
            qgauss_fit: QFitOptions { q_bounds: cfg.q_bounds, ..Default::default() },
            acf_estimator: "biased (1/N), mean removed",
        },
        instruments: records,
        succeeded,
        failed,
        outputs,
    };
    let manifest_path = cfg.out_path("manifest.json");
    write_json(&manifest_path, &manifest)?;
    Ok(RunSummary { succeeded, failed, manifest_path })
}

fn analyze_instrument(path: &Path, cfg: &AnalysisConfig, stages: Stages) -> InstrumentRecord {
    let id = instrument_id(path);
    let seed = instrument_seed(cfg.seed, &id);
    let sibling = sibling_sessions_path(path);
    let mut rec = InstrumentRecord {
        id: id.clone(),
        input: InputRecord { path: path.to_path_buf(), sha256: None },
        sessions_file: None,
        status: "failed",
        error: None,
        seed,
        bootstrap_seed: (stages.tail && cfg.bootstrap > 0).then(|| derive_seed(seed, BOOTSTRAP_TAG)),
        surrogate_seed: stages.mfdfa.then(|| derive_seed(seed, SURROGATE_TAG)),
        cells: Vec::new(),
        analysis_dt: None,
        mfdfa_scales: None,
        warnings: Vec::new(),
        outputs: Vec::new(),
        tail_rows: Vec::new(),
        q_rows: Vec::new(),
    };
    if let Err(e) = run_instrument(path, &sibling, cfg, stages, &mut rec) {
        rec.error = Some(e.to_string());
        rec.status = "failed";
        rec.tail_rows.clear();
        rec.q_rows.clear();
    }
    rec
}

fn run_instrument(
    path: &Path,
    sibling: &Path,
    cfg: &AnalysisConfig,
    stages: Stages,
    rec: &mut InstrumentRecord,
) -> Result<(), CliError> {
    rec.input.sha256 = Some(sha256_file(path)?);
    if sibling.is_file() {
        rec.sessions_file = Some(InputRecord { path: sibling.to_path_buf(), sha256: Some(sha256_file(sibling)?) });
    }
    let prices = load_price_series(path, None)?;
    let dts = cfg.dt_sorted();
    let built: Vec<Result<ReturnSeries, String>> =
        dts.par_iter().map(|&dt| returns_at(&prices, dt, cfg).map_err(|e| e.to_string())).collect();
    rec.cells = dts
        .iter()
        .zip(&built)
        .map(|(&dt, b)| match b {
            Ok(r) => {
                let (m, s) = match r.normalization {
                    qtail_core::Normalization::Standardized { mean_removed, std_divided } => {
                        (Some(mean_removed), Some(std_divided))
                    }
                    _ => (None, None),
                };
                DtCell { dt_minutes: dt, n_returns: r.len(), mean_removed: m, std_divided: s, error: None }
            }
            Err(e) => DtCell { dt_minutes: dt, n_returns: 0, mean_removed: None, std_divided: None, error: Some(e.clone()) },
        })
        .collect();
    let series: Vec<&ReturnSeries> = built.iter().filter_map(|b| b.as_ref().ok()).collect();
    if series.is_empty() {
        let first = built.iter().find_map(|b| b.as_ref().err()).cloned().unwrap_or_default();
        return Err(CliError::Analysis(format!("no sampling interval produced usable returns: {first}")));
    }

    let dir = cfg.out_path(&rec.id);
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
    let mut outputs = Vec::new();

    if stages.tail {
        let owned: Vec<ReturnSeries> = series.iter().map(|&r| r.clone()).collect();
        let opts = TailReportOptions {
            fit: TailFitOptions { range: cfg.tail_range, log_bins_per_decade: cfg.log_bins },
            bootstrap: rec.bootstrap_seed.map(|s| (cfg.bootstrap, s)),
        };
        rec.tail_rows = tail_report(&owned, &SIDES, &opts).rows;
        // Cells that failed to build still get a row so the table shape is complete.
        for c in rec.cells.iter().filter(|c| c.error.is_some()) {
            for side in SIDES {
                rec.tail_rows.push(TailReportRow {
                    instrument: rec.id.clone(),
                    dt_minutes: c.dt_minutes,
                    side,
                    fit: Err(c.error.clone().unwrap_or_default()),
                });
            }
        }
        rec.tail_rows.sort_by_key(|r| (r.dt_minutes, r.side == Side::Negative));
    }

    if stages.tail || stages.qgauss {
        let cells: Vec<(&ReturnSeries, Side)> =
            series.iter().flat_map(|&r| SIDES.iter().map(move |&s| (r, s))).collect();
        let results: Vec<(Vec<String>, Option<QFitRow>, Option<String>)> = cells
            .par_iter()
            .map(|&(r, side)| distribution_cell(r, side, cfg, stages, &dir, &rec.id))
            .collect();
        for (files, row, warning) in results {
            outputs.extend(files);
            rec.q_rows.extend(row);
            rec.warnings.extend(warning);
        }
        for c in rec.cells.iter().filter(|c| c.error.is_some()) {
            for side in SIDES {
                rec.q_rows.push(QFitRow::new(&rec.id, c.dt_minutes, side, Err(c.error.clone().unwrap_or_default())));
            }
        }
        rec.q_rows.sort_by_key(|r| (r.dt_minutes, r.side == Side::Negative));
    }

    let finest = series[0];
    if stages.mfdfa || stages.acf {
        rec.analysis_dt = Some(finest.dt_minutes);
    }
    if stages.mfdfa {
        let seed = rec.surrogate_seed.expect("set when mfdfa runs");
        match mfdfa_outputs(finest, cfg, seed, &dir) {
            Ok(m) => {
                outputs.extend(m.files);
                rec.mfdfa_scales = Some(m.scales);
                rec.warnings.extend(m.warnings);
            }
            Err(e) => rec.warnings.push(format!("mfdfa at dt = {}: {e}", finest.dt_minutes)),
        }
    }
    if stages.acf {
        match acf_with_z(finest, cfg.max_lag, cfg.z) {
            Ok(a) => outputs.extend(acf_outputs(&a, finest.dt_minutes, &dir)?),
            Err(e) => rec.warnings.push(format!("acf at dt = {}: {e}", finest.dt_minutes)),
        }
    }
    rec.outputs = outputs.into_iter().map(|f| format!("{}/{f}", rec.id)).collect();
    rec.status = "ok";
    Ok(())
}

fn returns_at(prices: &PriceSeries, dt: u32, cfg: &AnalysisConfig) -> Result<ReturnSeries, CliError> {
    Ok(standardize(&build_returns(prices, dt, cfg.boundary)?)?)
}

/// CCDF and q-Gaussian files for one (Δt, side) cell.
fn distribution_cell(
    r: &ReturnSeries,
    side: Side,
    cfg: &AnalysisConfig,
    stages: Stages,
    dir: &Path,
    id: &str,
) -> (Vec<String>, Option<QFitRow>, Option<String>) {
    let dt = r.dt_minutes;
    let c: EmpiricalCcdf = match ccdf(r, side) {
        Ok(c) => c,
        Err(e) => {
            let row = stages.qgauss.then(|| QFitRow::new(id, dt, side, Err(e.to_string())));
            return (Vec::new(), row, Some(format!("ccdf dt = {dt} {side}: {e}")));
        }
    };
    let mut files = Vec::new();
    let mut warning = None;
    let name = format!("ccdf_dt{dt}_{side}.csv");
    match write_atomic(&dir.join(&name), |w| io::write_ccdf(w, c.points())) {
        Ok(()) => files.push(name),
        Err(e) => warning = Some(e.to_string()),
    }
    if !stages.qgauss {
        return (files, None, warning);
    }
    let opts = QFitOptions { q_bounds: cfg.q_bounds, ..Default::default() };
    let fit = fit_qgaussian_with(&c, &opts).map_err(|e| e.to_string());
    if let Ok(f) = &fit {
        let xs: Vec<f64> = c.points().iter().map(|p| p.x).collect();
        let name = format!("qgauss_model_dt{dt}_{side}.csv");
        let written = model_curve(&f.params, &xs)
            .map_err(CliError::from)
            .and_then(|pts| write_atomic(&dir.join(&name), |w| io::write_ccdf(w, &pts)));
        match written {
            Ok(()) => files.push(name),
            Err(e) => warning = Some(format!("q-Gaussian model dt = {dt} {side}: {e}")),
        }
    }
    (files, Some(QFitRow::new(id, dt, side, fit)), warning)
}

#[derive(Serialize)]
struct SpectrumJson<'a> {
    dt_minutes: u32,
    n_returns: usize,
    scales: &'a [usize],
    q_grid: &'a [f64],
    poly_order: usize,
    n_surrogates: usize,
    surrogate_seed: u64,
    original: &'a SingularitySpectrum,
    shuffled_average: &'a SingularitySpectrum,
    shuffled_widths: Vec<f64>,
    width_ratio: f64,
}

/// Files written, scales used and warnings raised by the MF-DFA stage.
struct MfdfaOutputs {
    files: Vec<String>,
    scales: Vec<usize>,
    warnings: Vec<String>,
}

fn mfdfa_outputs(r: &ReturnSeries, cfg: &AnalysisConfig, seed: u64, dir: &Path) -> Result<MfdfaOutputs, CliError> {
    let surface = mfdfa_with(r, &cfg.mfdfa)?;
    // Surrogates are analysed on the same scales as the original.
    let fixed = qtail_core::mfdfa::MfdfaConfig { scales: Some(surface.scales.clone()), ..cfg.mfdfa.clone() };
    let original = spectrum(&surface)?;
    let ensemble = shuffle_surrogates(r, cfg.n_surrogates, seed)?;
    let shuffled: Vec<SingularitySpectrum> = ensemble
        .realizations
        .par_iter()
        .map(|s| mfdfa_with(s, &fixed).and_then(|f| spectrum(&f)))
        .collect::<Result<_, _>>()?;
    let average = average_spectra(&shuffled)?;
    let mut warnings: Vec<String> = original.warnings.iter().map(|w| format!("mfdfa: {w}")).collect();
    warnings.extend(average.warnings.iter().map(|w| format!("mfdfa shuffled: {w}")));

    write_atomic(&dir.join("spectrum.csv"), |w| io::write_spectrum(w, &original))?;
    write_atomic(&dir.join("shuffled_spectrum.csv"), |w| io::write_spectrum(w, &average))?;
    let json = SpectrumJson {
        dt_minutes: r.dt_minutes,
        n_returns: r.len(),
        scales: &surface.scales,
        q_grid: &surface.moments,
        poly_order: surface.poly_order,
        n_surrogates: cfg.n_surrogates,
        surrogate_seed: seed,
        original: &original,
        shuffled_average: &average,
        shuffled_widths: shuffled.iter().map(|s| s.width).collect(),
        width_ratio: average.width / original.width,
    };
    write_json(&dir.join("spectrum.json"), &json)?;
    let files = ["spectrum.csv", "shuffled_spectrum.csv", "spectrum.json"].map(String::from).to_vec();
    Ok(MfdfaOutputs { files, scales: surface.scales, warnings })
}

#[derive(Serialize)]
struct AcfJson {
    dt_minutes: u32,
    max_lag: usize,
    z: f64,
    noise_level: f64,
    decay_lag: Option<usize>,
}

fn acf_outputs(a: &AcfResult, dt: u32, dir: &Path) -> Result<Vec<String>, CliError> {
    write_atomic(&dir.join("acf.csv"), |w| io::write_acf(w, a))?;
    let json = AcfJson { dt_minutes: dt, max_lag: a.max_lag(), z: a.z, noise_level: a.noise_level, decay_lag: a.decay_lag };
    write_json(&dir.join("acf.json"), &json)?;
    Ok(vec!["acf.csv".into(), "acf.json".into()])
}

#[derive(Serialize)]
struct TailRowJson<'a> {
    instrument: &'a str,
    dt_minutes: u32,
    side: Side,
    alpha: Option<f64>,
    stderr: Option<f64>,
    x_lo: Option<f64>,
    x_hi: Option<f64>,
    n_points: Option<usize>,
    r_squared: Option<f64>,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    error: Option<&'a str>,
}

fn tail_rows_json(report: &TailReport) -> Vec<TailRowJson<'_>> {
    report
        .rows
        .iter()
        .map(|r| {
            let f = r.fit.as_ref().ok();
            TailRowJson {
                instrument: &r.instrument,
                dt_minutes: r.dt_minutes,
                side: r.side,
                alpha: f.map(|f| f.alpha),
                stderr: f.map(|f| f.stderr),
                x_lo: f.map(|f| f.fit_range.0),
                x_hi: f.map(|f| f.fit_range.1),
                n_points: f.map(|f| f.n_points),
                r_squared: f.map(|f| f.r_squared),
                ci_lo: f.and_then(|f| f.bootstrap_ci).map(|c| c.0),
                ci_hi: f.and_then(|f| f.bootstrap_ci).map(|c| c.1),
                error: r.fit.as_ref().err().map(String::as_str),
            }
        })
        .collect()
}

/// Tail exponents as a grid: one row per instrument and side, one column per
/// Δt, cells `alpha ± stderr`. Failed cells are left empty; the reason is in
/// `tail_report.json`.
pub fn write_tail_table<W: Write>(w: &mut W, report: &TailReport, dts: &[u32]) -> std::io::Result<()> {
    write!(w, "instrument,side")?;
    for dt in dts {
        write!(w, ",{dt} min")?;
    }
    writeln!(w)?;
    let mut keys: Vec<(&str, Side)> = Vec::new();
    for r in &report.rows {
        if !keys.contains(&(r.instrument.as_str(), r.side)) {
            keys.push((&r.instrument, r.side));
        }
    }
    for (inst, side) in keys {
        write!(w, "{inst},{side}")?;
        for &dt in dts {
            let cell = report
                .rows
                .iter()
                .find(|r| r.instrument == inst && r.side == side && r.dt_minutes == dt)
                .and_then(|r| r.fit.as_ref().ok());
            match cell {
                Some(f) => write!(w, ",{} ± {}", f.alpha, f.stderr)?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}
