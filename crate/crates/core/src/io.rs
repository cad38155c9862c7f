//! CSV readers and writers for prices, sessions and analysis outputs.
//!
//! Price files have a header and two columns, `timestamp,price`. Timestamps
//! are integer Unix seconds or ISO-8601 date-times (RFC 3339 with offset, or
//! naive `YYYY-MM-DD[T ]HH:MM[:SS]` read as UTC). Session files have columns
//! `start,end` in the same formats. Floats are written in Rust's shortest
//! round-trip form, so reading an output back reproduces every bit.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime};

use crate::autocorr::AcfResult;
use crate::distribution::CcdfPoint;
use crate::error::{Error, Result};
use crate::mfdfa::SingularitySpectrum;
use crate::returns::{PriceSeries, Session, Timestamp};

const NAIVE_FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];

/// Parses an integer epoch-seconds or ISO-8601 timestamp.
pub fn parse_timestamp(s: &str) -> std::result::Result<Timestamp, String> {
    let s = s.trim();
    if let Ok(t) = s.parse::<i64>() {
        return Ok(t);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    NAIVE_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|dt| dt.and_utc().timestamp())
        .ok_or_else(|| format!("unrecognised timestamp {s:?}"))
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(input)
}

/// Reads two-column records, mapping each row through `parse`.
fn read_pairs<R: Read, T>(
    input: R,
    path: &Path,
    mut parse: impl FnMut(&str, &str) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let mut rdr = reader(input);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        if rec.len() < 2 {
            return Err(err(format!("expected 2 columns, found {}", rec.len())));
        }
        out.push(parse(&rec[0], &rec[1]).map_err(err)?);
    }
    Ok(out)
}

/// Reads `timestamp,price` rows.
pub fn read_price_observations<R: Read>(input: R, path: &Path) -> Result<Vec<(Timestamp, f64)>> {
    read_pairs(input, path, |t, p| {
        let t = parse_timestamp(t)?;
        let p: f64 = p.parse().map_err(|_| format!("invalid price {p:?}"))?;
        Ok((t, p))
    })
}

/// Reads `start,end` session rows.
pub fn read_sessions<R: Read>(input: R, path: &Path) -> Result<Vec<Session>> {
    read_pairs(input, path, |a, b| Ok(Session { start: parse_timestamp(a)?, end: parse_timestamp(b)? }))
}

/// The sessions file conventionally stored next to a price file:
/// `prices.csv` -> `prices.sessions.csv`.
pub fn sibling_sessions_path(prices: &Path) -> PathBuf {
    let stem = prices.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    prices.with_file_name(format!("{stem}.sessions.csv"))
}

/// Instrument identifier derived from a file name.
pub fn instrument_id(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Loads a price file. Sessions come from `sessions` if given, else from the
/// sibling sessions file if present, else one session per UTC day.
pub fn load_price_series(path: &Path, sessions: Option<&Path>) -> Result<PriceSeries> {
    let observations = read_price_observations(open(path)?, path)?;
    let id = instrument_id(path);
    let sibling = sibling_sessions_path(path);
    let sessions_path = sessions.map(Path::to_path_buf).or_else(|| sibling.is_file().then_some(sibling));
    match sessions_path {
        Some(sp) => {
            let s = read_sessions(open(&sp)?, &sp)?;
            PriceSeries::new(id, observations, s)
        }
        None => PriceSeries::with_daily_sessions(id, observations),
    }
}

fn write_rows<W: Write, T>(
    mut out: W,
    header: &str,
    rows: impl IntoIterator<Item = T>,
    mut line: impl FnMut(&mut W, T) -> std::io::Result<()>,
) -> std::io::Result<()> {
    writeln!(out, "{header}")?;
    for r in rows {
        line(&mut out, r)?;
    }
    out.flush()
}

pub fn write_prices<W: Write>(out: W, prices: &PriceSeries) -> std::io::Result<()> {
    write_rows(out, "timestamp,price", prices.observations(), |w, (t, p)| writeln!(w, "{t},{p}"))
}

pub fn write_sessions<W: Write>(out: W, sessions: &[Session]) -> std::io::Result<()> {
    write_rows(out, "start,end", sessions, |w, s| writeln!(w, "{},{}", s.start, s.end))
}

/// `x,p` rows.
pub fn write_ccdf<W: Write>(out: W, points: &[CcdfPoint]) -> std::io::Result<()> {
    write_rows(out, "x,p", points, |w, pt| writeln!(w, "{},{}", pt.x, pt.p))
}

/// `alpha_h,f_alpha` rows.
pub fn write_spectrum<W: Write>(out: W, s: &SingularitySpectrum) -> std::io::Result<()> {
    write_rows(out, "alpha_h,f_alpha", &s.points, |w, pt| writeln!(w, "{},{}", pt.alpha_h, pt.f_alpha))
}

/// `lag,rho` rows.
pub fn write_acf<W: Write>(out: W, a: &AcfResult) -> std::io::Result<()> {
    write_rows(out, "lag,rho", a.rho.iter().enumerate(), |w, (k, r)| writeln!(w, "{k},{r}"))
}

/// Reads back an `x,p` file.
pub fn read_ccdf<R: Read>(input: R, path: &Path) -> Result<Vec<CcdfPoint>> {
    read_pairs(input, path, |x, p| {
        let x = x.parse().map_err(|_| format!("invalid x {x:?}"))?;
        let p = p.parse().map_err(|_| format!("invalid p {p:?}"))?;
        Ok(CcdfPoint { x, p })
    })
}
