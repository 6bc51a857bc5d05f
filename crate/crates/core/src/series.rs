//! Time-series CSV input and output.
//!
//! Dialect: comma separated, `\n` line endings, mandatory header row, UTF-8.
//! Floats are written in Rust's shortest round-trip form, so a value read
//! back is bit-identical to the value written.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Poisson};

use crate::detectors::{skip_run_length, PolicyParams, Trajectory};
use crate::error::{Error, Result};
use crate::rng::{purpose, stream_rng};

/// One observation of a series, e.g. a day's case count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRecord {
    pub index: u64,
    pub value: f64,
}

/// Names of the columns holding the index and the value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub index: String,
    pub value: String,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        Self {
            index: "index".into(),
            value: "value".into(),
        }
    }
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.into(),
        message: message.into(),
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, columns: &ColumnSpec) -> Result<Vec<SeriesRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    ingest_reader(file, columns, &path.display().to_string())
}

/// Parses a series from any reader. `source` names the input in errors.
pub fn ingest_reader<R: Read>(reader: R, columns: &ColumnSpec, source: &str) -> Result<Vec<SeriesRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(format!("{source}:1"), e.to_string()))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(parse_err(format!("{source}:1"), "empty file or missing header row"));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| parse_err(format!("{source}:1"), format!("missing column `{name}`")))
    };
    let (ii, vi) = (find(&columns.index)?, find(&columns.value)?);

    let mut out: Vec<SeriesRecord> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(format!("{source}:{line}"), e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let at = || format!("{source}:{line}");
        let cell = |i: usize, name: &str| -> Result<&str> {
            match rec.get(i).map(str::trim) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(parse_err(at(), format!("blank `{name}` cell"))),
            }
        };
        let raw_index = cell(ii, &columns.index)?;
        let index: u64 = raw_index
            .parse()
            .map_err(|_| parse_err(at(), format!("index `{raw_index}` is not a nonnegative integer")))?;
        let raw_value = cell(vi, &columns.value)?;
        let value: f64 = raw_value
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(at(), format!("value `{raw_value}` is not a finite number")))?;
        if let Some(prev) = out.last() {
            if index <= prev.index {
                return Err(parse_err(
                    at(),
                    format!("index {index} does not increase past {}", prev.index),
                ));
            }
        }
        out.push(SeriesRecord { index, value });
    }
    if out.is_empty() {
        return Err(parse_err(format!("{source}:2"), "no data rows"));
    }
    Ok(out)
}

/// Rejects values that are not nonnegative integers.
pub fn require_counts(series: &[SeriesRecord]) -> Result<()> {
    for r in series {
        if !(r.value >= 0.0 && r.value.fract() == 0.0) {
            return Err(Error::invalid(format!(
                "index {}: value {} is not a count",
                r.index, r.value
            )));
        }
    }
    Ok(())
}

pub fn format_float(x: f64) -> String {
    format!("{x}")
}

pub fn write_series<W: Write>(writer: W, series: &[SeriesRecord], columns: &ColumnSpec) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record([&columns.index, &columns.value]).map_err(io)?;
    for r in series {
        w.write_record([r.index.to_string(), format_float(r.value)]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// `value'ᵢ = valueᵢ + Nᵢ` with independent `Nᵢ ~ Pois(rate)`. Draw `i` uses
/// generator stream `(seed, NOISE, i)`, so each position's noise depends only
/// on the seed and the position.
pub fn add_poisson_noise(series: &[SeriesRecord], rate: f64, seed: u64) -> Result<Vec<SeriesRecord>> {
    let pois = Poisson::new(rate)
        .map_err(|_| Error::invalid(format!("noise rate must be positive and finite, got {rate}")))?;
    Ok(series
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = stream_rng(seed, purpose::NOISE, i as u64);
            SeriesRecord {
                index: r.index,
                value: r.value + pois.sample(&mut rng),
            }
        })
        .collect())
}

/// One row of a detector trajectory CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub index: u64,
    pub sampled: bool,
    pub statistic: f64,
    pub alarmed: bool,
}

pub const TRAJECTORY_HEADER: [&str; 4] = ["index", "sampled", "statistic", "alarmed"];

/// Pairs each step of `trajectory` with the series index it consumed.
pub fn trajectory_rows(series: &[SeriesRecord], trajectory: &Trajectory<f64>) -> Vec<TrajectoryRow> {
    series
        .iter()
        .zip(&trajectory.outcomes)
        .map(|(r, o)| TrajectoryRow {
            index: r.index,
            sampled: o.sampled,
            statistic: o.statistic_after,
            alarmed: o.alarmed,
        })
        .collect()
}

pub fn write_trajectory<W: Write>(writer: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(TRAJECTORY_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            u8::from(r.sampled).to_string(),
            format_float(r.statistic),
            u8::from(r.alarmed).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory<R: Read>(reader: R, source: &str) -> Result<Vec<TrajectoryRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(format!("{source}:1"), e.to_string()))?
        .clone();
    if headers.iter().ne(TRAJECTORY_HEADER.iter().copied()) {
        return Err(parse_err(
            format!("{source}:1"),
            format!("expected header `{}`", TRAJECTORY_HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(format!("{source}:{line}"), e.to_string())
        })?;
        let at = format!("{source}:{}", rec.position().map_or(0, |p| p.line()));
        let flag = |i: usize| match &rec[i] {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(parse_err(at.clone(), format!("`{}` must be 0 or 1, got `{other}`", TRAJECTORY_HEADER[i]))),
        };
        out.push(TrajectoryRow {
            index: rec[0]
                .parse()
                .map_err(|_| parse_err(at.clone(), format!("bad index `{}`", &rec[0])))?,
            sampled: flag(1)?,
            statistic: rec[2]
                .parse()
                .map_err(|_| parse_err(at.clone(), format!("bad statistic `{}`", &rec[2])))?,
            alarmed: flag(3)?,
        });
    }
    Ok(out)
}

/// Checks a trajectory against the detector invariants for `params`:
/// indices increase; the statistic stays in `[-h, ∞)`; skipped steps never
/// raise it above zero and a fractional skip leaves it unchanged; a sampled
/// undershoot `u` is followed by exactly `⌈u/μ⌉` skips (or the end of the
/// data), ending at zero; alarms coincide with sampled steps at
/// `statistic ≥ A` and only the
/// last row may alarm. Returns one message per violated row.
pub fn verify_trajectory(rows: &[TrajectoryRow], params: &PolicyParams<f64>) -> Vec<String> {
    use crate::detectors::DetectorKind;
    let (a, h, mu) = (params.threshold(), params.h(), params.mu());
    let kind = params.kind();
    let mut errs = Vec::new();
    let mut expected_skips = 0u64;
    let mut prev_stat = 0.0;
    for (i, r) in rows.iter().enumerate() {
        let at = format!("index {}", r.index);
        if i > 0 && r.index <= rows[i - 1].index {
            errs.push(format!("{at}: index does not increase"));
        }
        if !r.statistic.is_finite() || r.statistic < -h {
            errs.push(format!("{at}: statistic {} outside [-{h}, inf)", r.statistic));
        }
        if r.alarmed != (r.sampled && r.statistic >= a) {
            errs.push(format!("{at}: alarmed={} but statistic {} vs threshold {a}", r.alarmed, r.statistic));
        }
        if r.alarmed && i + 1 != rows.len() {
            errs.push(format!("{at}: rows continue after the alarm"));
        }
        match kind {
            DetectorKind::RdeCusum | DetectorKind::RobustCusum => {
                if expected_skips > 0 {
                    if r.sampled {
                        errs.push(format!("{at}: sampled with {expected_skips} skips still due"));
                        expected_skips = 0;
                    } else {
                        expected_skips -= 1;
                        if r.statistic > 0.0 || r.statistic < prev_stat {
                            errs.push(format!("{at}: skip moved statistic from {prev_stat} to {}", r.statistic));
                        }
                        if expected_skips == 0 && r.statistic != 0.0 {
                            errs.push(format!("{at}: skip run ended at {} instead of 0", r.statistic));
                        }
                    }
                } else if !r.sampled {
                    errs.push(format!("{at}: skipped with a nonnegative statistic"));
                }
                if r.sampled && r.statistic < 0.0 {
                    expected_skips = skip_run_length(-r.statistic, mu);
                }
            }
            DetectorKind::FractionalSampling { .. } => {
                if r.statistic < 0.0 {
                    errs.push(format!("{at}: fractional statistic below zero"));
                }
                if i == 0 && !r.sampled {
                    errs.push(format!("{at}: first step must sample"));
                }
                if !r.sampled && r.statistic != prev_stat {
                    errs.push(format!("{at}: skip changed the statistic"));
                }
            }
        }
        prev_stat = r.statistic;
    }
    errs
}
