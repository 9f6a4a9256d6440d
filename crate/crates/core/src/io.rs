//! CSV ingestion and atomic file output.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::series::{TimeSeries, Timestamp};

/// Column chosen by header name or 0-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSel {
    Name(String),
    Index(usize),
}

impl std::str::FromStr for ColumnSel {
    type Err = std::convert::Infallible;

    /// Digits select by position, anything else by name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(s.trim()
            .parse::<usize>()
            .map(ColumnSel::Index)
            .unwrap_or_else(|_| ColumnSel::Name(s.trim().to_string())))
    }
}

impl std::fmt::Display for ColumnSel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnSel::Name(n) => f.write_str(n),
            ColumnSel::Index(i) => write!(f, "{i}"),
        }
    }
}

impl ColumnSel {
    fn resolve(&self, headers: &csv::StringRecord) -> Option<usize> {
        match self {
            ColumnSel::Name(n) => headers.iter().position(|h| h.trim() == n),
            ColumnSel::Index(i) => (*i < headers.len()).then_some(*i),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub series: Vec<TimeSeries>,
}

/// Loads one value column keyed by a timestamp column (the first column
/// unless `timestamp` says otherwise). Rows out of order are sorted with a
/// warning; blank or non-numeric values and duplicate timestamps are
/// rejected with their line number.
pub fn load_csv(path: &Path, value: &ColumnSel, timestamp: Option<&ColumnSel>) -> Result<Dataset> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let file = std::fs::File::open(path).map_err(|e| parse_err(format!("cannot open: {e}")))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .clone();
    let vcol = value
        .resolve(&headers)
        .ok_or_else(|| parse_err(format!("no column `{value}` in header")))?;
    let tcol = match timestamp {
        Some(sel) => sel
            .resolve(&headers)
            .ok_or_else(|| parse_err(format!("no column `{sel}` in header")))?,
        None => 0,
    };
    if tcol == vcol {
        return Err(parse_err("timestamp and value columns coincide".into()));
    }

    let mut rows: Vec<(Timestamp, f64, u64)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let raw_t = rec.get(tcol).unwrap_or("");
        let raw_v = rec.get(vcol).unwrap_or("");
        if raw_t.is_empty() {
            return Err(parse_err(format!("line {line}: blank timestamp")));
        }
        let v: f64 = raw_v
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| {
                parse_err(format!(
                    "line {line}: value `{raw_v}` is not a finite number"
                ))
            })?;
        rows.push((Timestamp::parse(raw_t), v, line));
    }
    if rows.is_empty() {
        return Err(parse_err("no data rows".into()));
    }
    if rows.windows(2).any(|w| w[0].0 > w[1].0) {
        warn!(
            "{}: rows are not in timestamp order; sorting",
            path.display()
        );
        rows.sort_by(|a, b| a.0.cmp(&b.0));
    }
    let mut seen = HashSet::new();
    for (t, _, line) in &rows {
        if !seen.insert(t.to_string()) {
            return Err(parse_err(format!("line {line}: duplicate timestamp {t}")));
        }
    }
    let id = headers.get(vcol).unwrap_or("value").to_string();
    let (ts, vs): (Vec<_>, Vec<_>) = rows.into_iter().map(|(t, v, _)| (t, v)).unzip();
    let series = TimeSeries::new(id, ts, vs).map_err(|e| parse_err(e.to_string()))?;
    Ok(Dataset {
        series: vec![series],
    })
}

/// Writes `t,value` rows.
pub fn write_series_csv(mut out: impl Write, series: &TimeSeries) -> std::io::Result<()> {
    writeln!(out, "t,value")?;
    for (t, v) in series.timestamps().iter().zip(series.values()) {
        writeln!(out, "{t},{v}")?;
    }
    Ok(())
}

/// Replaces `path` with `bytes` through a temporary file in the same
/// directory, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
