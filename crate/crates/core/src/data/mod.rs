//! OHLCV ingestion, trading-day alignment and windowed datasets.

mod windows;

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use windows::{
    check_no_lookahead, denormalize, make_windows, NormRecord, Sample, Split, SplitDates, WindowedDataset,
    FEATURE_NAMES,
};

use crate::{Error, Result};

/// One trading day of the primary instrument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcvRecord {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl OhlcvRecord {
    pub fn validate(&self) -> Result<()> {
        let prices = [self.open, self.high, self.low, self.close, self.volume];
        if prices.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{}: non-finite field", self.date)));
        }
        let lo = self.open.min(self.close);
        let hi = self.open.max(self.close);
        if !(self.low <= lo && hi <= self.high) {
            return Err(Error::invalid(format!(
                "{}: OHLC ordering violated (open {}, high {}, low {}, close {})",
                self.date, self.open, self.high, self.low, self.close
            )));
        }
        if self.volume < 0.0 {
            return Err(Error::invalid(format!("{}: negative volume {}", self.date, self.volume)));
        }
        Ok(())
    }
}

/// A dated closing value of a market index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub date: NaiveDate,
    pub close: f64,
}

/// Trading days shared by the primary instrument and both indices.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPanel {
    pub dates: Vec<NaiveDate>,
    pub primary: Vec<OhlcvRecord>,
    pub index_a_close: Vec<f64>,
    pub index_b_close: Vec<f64>,
}

impl AlignedPanel {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| Error::invalid(format!("bad date {s:?}: {e}")))
}

/// Positions of `wanted` columns in a header, matched case-insensitively.
fn column_positions(header: &csv::StringRecord, wanted: &[&str]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|w| {
            header
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(w))
                .ok_or_else(|| Error::Parse { line: 1, msg: format!("header lacks a {w:?} column") })
        })
        .collect()
}

/// Parses the `wanted` columns of every row: a date followed by reals.
fn read_rows<R: Read>(reader: R, wanted: &[&str]) -> Result<Vec<(NaiveDate, Vec<f64>)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let pos = column_positions(&header, wanted)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| {
            rec.get(pos[i]).ok_or_else(|| Error::Parse { line, msg: format!("missing {:?} field", wanted[i]) })
        };
        let date = parse_date(field(0)?).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let mut values = Vec::with_capacity(wanted.len() - 1);
        for i in 1..wanted.len() {
            let raw = field(i)?;
            let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("{:?} is not a number in column {:?}", raw, wanted[i]),
            })?;
            values.push(v);
        }
        rows.push((date, values));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::invalid(format!("duplicate date {}", w[0].0)));
    }
    Ok(rows)
}

/// Reads `date,open,high,low,close,volume` rows (any column order, extra
/// columns ignored) and returns them sorted by date.
pub fn read_ohlcv<R: Read>(reader: R) -> Result<Vec<OhlcvRecord>> {
    read_rows(reader, &["date", "open", "high", "low", "close", "volume"])?
        .into_iter()
        .map(|(date, v)| {
            let r = OhlcvRecord { date, open: v[0], high: v[1], low: v[2], close: v[3], volume: v[4] };
            r.validate()?;
            Ok(r)
        })
        .collect()
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<OhlcvRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
    read_ohlcv(file)
}

/// Reads `date,close` rows of an index; other columns are ignored.
pub fn read_index<R: Read>(reader: R) -> Result<Vec<IndexRecord>> {
    read_rows(reader, &["date", "close"])?
        .into_iter()
        .map(|(date, v)| {
            if !v[0].is_finite() {
                return Err(Error::invalid(format!("{date}: non-finite close")));
            }
            Ok(IndexRecord { date, close: v[0] })
        })
        .collect()
}

pub fn load_index_csv(path: impl AsRef<Path>) -> Result<Vec<IndexRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
    read_index(file)
}

fn strictly_increasing<T>(items: &[T], date: impl Fn(&T) -> NaiveDate, what: &str) -> Result<()> {
    if items.windows(2).any(|w| date(&w[0]) >= date(&w[1])) {
        return Err(Error::invalid(format!("{what} dates are not strictly increasing")));
    }
    Ok(())
}

/// Keeps only the days present in all three sources.
pub fn align(primary: &[OhlcvRecord], index_a: &[IndexRecord], index_b: &[IndexRecord]) -> Result<AlignedPanel> {
    strictly_increasing(primary, |r| r.date, "primary")?;
    strictly_increasing(index_a, |r| r.date, "index a")?;
    strictly_increasing(index_b, |r| r.date, "index b")?;
    let in_a: HashSet<NaiveDate> = index_a.iter().map(|r| r.date).collect();
    let in_b: HashSet<NaiveDate> = index_b.iter().map(|r| r.date).collect();
    let (mut ia, mut ib) = (0, 0);
    let mut panel =
        AlignedPanel { dates: Vec::new(), primary: Vec::new(), index_a_close: Vec::new(), index_b_close: Vec::new() };
    for r in primary {
        if !(in_a.contains(&r.date) && in_b.contains(&r.date)) {
            continue;
        }
        while index_a[ia].date < r.date {
            ia += 1;
        }
        while index_b[ib].date < r.date {
            ib += 1;
        }
        panel.dates.push(r.date);
        panel.primary.push(*r);
        panel.index_a_close.push(index_a[ia].close);
        panel.index_b_close.push(index_b[ib].close);
    }
    if panel.is_empty() {
        return Err(Error::invalid("the three sources share no trading day"));
    }
    Ok(panel)
}
