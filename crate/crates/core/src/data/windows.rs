//! Sliding windows, min-max normalization and date-based splits.

use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::AlignedPanel;
use crate::autodiff::Tensor;
use crate::model::Example;
use crate::{Error, Result};

/// Column order of a feature row.
pub const FEATURE_NAMES: [&str; 7] = ["open", "high", "low", "close", "volume", "index_a_close", "index_b_close"];
const CLOSE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Inclusive `[start, end]` date range of each split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitDates {
    pub train_start: NaiveDate,
    pub train_end: NaiveDate,
    pub val_start: NaiveDate,
    pub val_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

impl Default for SplitDates {
    fn default() -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
        Self {
            train_start: d(2012, 1, 3),
            train_end: d(2021, 6, 25),
            val_start: d(2021, 6, 28),
            val_end: d(2021, 9, 7),
            test_start: d(2021, 9, 8),
            test_end: d(2022, 1, 28),
        }
    }
}

impl SplitDates {
    pub fn validate(&self) -> Result<()> {
        let order = [self.train_start, self.train_end, self.val_start, self.val_end, self.test_start, self.test_end];
        for (i, w) in order.windows(2).enumerate() {
            // ends may equal starts within a split; splits must not touch
            let ok = if i % 2 == 0 { w[0] <= w[1] } else { w[0] < w[1] };
            if !ok {
                return Err(Error::Config(format!("split dates out of order: {} then {}", w[0], w[1])));
            }
        }
        Ok(())
    }

    pub fn range(&self, split: Split) -> (NaiveDate, NaiveDate) {
        match split {
            Split::Train => (self.train_start, self.train_end),
            Split::Val => (self.val_start, self.val_end),
            Split::Test => (self.test_start, self.test_end),
        }
    }

    pub fn classify(&self, date: NaiveDate) -> Option<Split> {
        Split::ALL.into_iter().find(|&s| {
            let (a, b) = self.range(s);
            a <= date && date <= b
        })
    }
}

/// Window minimum and maximum of one feature column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormRecord {
    pub min: f64,
    pub max: f64,
}

impl NormRecord {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (min, max) =
            values.into_iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Self { min, max }
    }

    /// Maps into `[0, 1]` on the window; a flat window maps to 0.
    pub fn normalize(&self, v: f64) -> f64 {
        if self.max == self.min {
            0.0
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        if self.max == self.min {
            self.min
        } else {
            self.min + v * (self.max - self.min)
        }
    }
}

/// Inverse of the close normalization; a flat record returns its minimum.
pub fn denormalize(values: &[f64], record: &NormRecord) -> Vec<f64> {
    values.iter().map(|&v| record.denormalize(v)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(window, 7)` normalized features.
    pub features: Tensor,
    /// Next `p` closes, normalized with the window's close statistics.
    pub targets: Vec<f64>,
    pub norm: Vec<NormRecord>,
    pub window_dates: Vec<NaiveDate>,
    pub target_dates: Vec<NaiveDate>,
    /// Raw close of the last window day.
    pub prior_close: f64,
    pub target_closes: Vec<f64>,
    pub split: Split,
}

impl Sample {
    pub fn close_norm(&self) -> &NormRecord {
        &self.norm[CLOSE]
    }

    /// Fractional change from the last window close to the first target close.
    pub fn first_day_return(&self) -> f64 {
        (self.target_closes[0] - self.prior_close) / self.prior_close
    }

    pub fn to_example(&self) -> Example {
        Example { features: self.features.clone(), targets: self.targets.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub input_window: usize,
    pub predict_days: usize,
    pub splits: SplitDates,
    pub samples: Vec<Sample>,
}

impl WindowedDataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn examples(&self, split: Split) -> Vec<Example> {
        self.split(split).map(Sample::to_example).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Sample counts and date ranges, as `key = value` lines.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "input_window = {}", self.input_window);
        let _ = writeln!(out, "predict_days = {}", self.predict_days);
        let _ = writeln!(out, "features = {}", FEATURE_NAMES.join(","));
        for s in Split::ALL {
            let (a, b) = self.splits.range(s);
            let _ = writeln!(out, "{}.range = {a}..{b}", s.name());
            let _ = writeln!(out, "{}.samples = {}", s.name(), self.count(s));
            let mut it = self.split(s);
            if let Some(first) = it.next() {
                let last = it.last().unwrap_or(first);
                let _ = writeln!(
                    out,
                    "{}.target_dates = {}..{}",
                    s.name(),
                    first.target_dates[0],
                    last.target_dates[last.target_dates.len() - 1]
                );
            }
        }
        out
    }
}

/// Fails on the first sample whose features are not strictly before its
/// targets.
pub fn check_no_lookahead(dataset: &WindowedDataset) -> Result<()> {
    for (i, s) in dataset.samples.iter().enumerate() {
        let last_feature = s.window_dates.iter().max();
        let first_target = s.target_dates.iter().min();
        match (last_feature, first_target) {
            (Some(f), Some(t)) if f < t => {}
            _ => {
                return Err(Error::invalid(format!(
                    "sample {i} looks ahead: window reaches {last_feature:?}, targets start {first_target:?}"
                )))
            }
        }
    }
    Ok(())
}

/// Stride-1 windows of `input_window` days, each followed by `p` target
/// days. A sample belongs to the split holding its first target date and is
/// dropped when its targets leave that split or fall outside every split.
pub fn make_windows(
    panel: &AlignedPanel,
    input_window: usize,
    p: usize,
    splits: &SplitDates,
) -> Result<WindowedDataset> {
    splits.validate()?;
    if input_window == 0 || p == 0 {
        return Err(Error::invalid("input_window and predict_days must be at least 1"));
    }
    let n = panel.len();
    if n < input_window + p {
        return Err(Error::invalid(format!("panel has {n} days, need at least {}", input_window + p)));
    }
    let rows: Vec<[f64; 7]> = (0..n)
        .map(|t| {
            let r = &panel.primary[t];
            [r.open, r.high, r.low, r.close, r.volume, panel.index_a_close[t], panel.index_b_close[t]]
        })
        .collect();
    let mut samples = Vec::new();
    for start in 0..=n - input_window - p {
        let win = start..start + input_window;
        let tgt = start + input_window..start + input_window + p;
        let target_dates = panel.dates[tgt.clone()].to_vec();
        let Some(split) = splits.classify(target_dates[0]) else {
            continue;
        };
        if target_dates.iter().any(|&d| splits.classify(d) != Some(split)) {
            continue;
        }
        let norm: Vec<NormRecord> = (0..7).map(|j| NormRecord::of(rows[win.clone()].iter().map(|r| r[j]))).collect();
        let mut feats = Vec::with_capacity(input_window * 7);
        for r in &rows[win.clone()] {
            feats.extend(r.iter().zip(&norm).map(|(v, nr)| nr.normalize(*v)));
        }
        let target_closes: Vec<f64> = rows[tgt].iter().map(|r| r[CLOSE]).collect();
        samples.push(Sample {
            features: Tensor::new(vec![input_window, 7], feats)?,
            targets: target_closes.iter().map(|&c| norm[CLOSE].normalize(c)).collect(),
            norm,
            window_dates: panel.dates[win.clone()].to_vec(),
            target_dates,
            prior_close: rows[win.end - 1][CLOSE],
            target_closes,
            split,
        });
    }
    let ds = WindowedDataset { input_window, predict_days: p, splits: *splits, samples };
    check_no_lookahead(&ds)?;
    Ok(ds)
}
