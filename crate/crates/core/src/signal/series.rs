use std::ops::Deref;

use chrono::NaiveDate;

use crate::{Error, Result};

/// Ordered finite samples with an optional, strictly increasing date index.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
    dates: Option<Vec<NaiveDate>>,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("time series must have at least one sample"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self { values, dates: None })
    }

    pub fn with_dates(values: Vec<f64>, dates: Vec<NaiveDate>) -> Result<Self> {
        let mut ts = Self::new(values)?;
        ts.set_dates(dates)?;
        Ok(ts)
    }

    pub fn set_dates(&mut self, dates: Vec<NaiveDate>) -> Result<()> {
        if dates.len() != self.values.len() {
            return Err(Error::invalid(format!("{} dates for {} samples", dates.len(), self.values.len())));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("dates not strictly increasing at {}", w[1])));
        }
        self.dates = Some(dates);
        Ok(())
    }

    /// Builds a series sharing `self`'s dates. Used for components derived
    /// from an already validated input, so only finiteness is rechecked.
    pub(crate) fn derived(&self, values: Vec<f64>) -> Result<Self> {
        debug_assert_eq!(values.len(), self.values.len());
        let mut ts = Self::new(values)?;
        ts.dates = self.dates.clone();
        Ok(ts)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn dates(&self) -> Option<&[NaiveDate]> {
        self.dates.as_deref()
    }
}

impl Deref for TimeSeries {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Spline support points: integer abscissae into a series and their ordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnotSet {
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl KnotSet {
    pub fn new(indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::invalid(format!("knot set has {} indices but {} values", indices.len(), values.len())));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("knot indices must be strictly increasing"));
        }
        Ok(Self { indices, values })
    }

    /// Knots at `indices` with ordinates read from `series`.
    pub fn sampled(series: &[f64], indices: Vec<usize>) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= series.len()) {
            return Err(Error::invalid(format!("knot index {i} outside series of length {}", series.len())));
        }
        let values = indices.iter().map(|&i| series[i]).collect();
        Self::new(indices, values)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Union of two knot sets; on a shared index the first set's ordinate is kept.
    pub fn merge(&self, other: &KnotSet) -> KnotSet {
        let mut pairs: Vec<(usize, f64)> = self
            .indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
            .chain(other.indices.iter().copied().zip(other.values.iter().copied()))
            .collect();
        pairs.sort_by_key(|&(i, _)| i);
        pairs.dedup_by_key(|&mut (i, _)| i);
        let (indices, values) = pairs.into_iter().unzip();
        KnotSet { indices, values }
    }
}
