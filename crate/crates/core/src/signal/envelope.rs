use super::{find_extrema, find_midpoints, std_dev, KnotSet, NaturalSpline};
use crate::{Error, Result};

/// Largest allowed `max |mean envelope|` for an IMF, as a fraction of the
/// candidate's standard deviation.
pub const IMF_MEAN_TOLERANCE: f64 = 0.05;

/// How upper/lower envelope knots are chosen from a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnotRule {
    /// Classical EMD: interior extrema only, with the nearest extremum's value
    /// copied onto index 0 and `len - 1`.
    MirroredEnds,
    /// Interior extrema plus the series' own endpoints.
    AnchoredEnds,
    /// [`KnotRule::AnchoredEnds`] plus the peak/trough midpoints, which are
    /// added to both envelopes.
    AnchoredWithMidpoints,
}

/// Upper and lower knot sets for `series` under `rule`.
///
/// Fails with [`Error::NotSiftable`] unless the series has at least one
/// maximum and one minimum.
pub fn build_knots(series: &[f64], rule: KnotRule) -> Result<(KnotSet, KnotSet)> {
    let (maxima, minima) = find_extrema(series);
    let total = maxima.len() + minima.len();
    if total < 2 || maxima.is_empty() || minima.is_empty() {
        return Err(Error::NotSiftable { extrema: total });
    }
    let last = series.len() - 1;
    let upper = KnotSet::sampled(series, maxima.clone())?;
    let lower = KnotSet::sampled(series, minima.clone())?;

    Ok(match rule {
        KnotRule::MirroredEnds => {
            let ends = |k: &KnotSet| {
                let v = k.values();
                KnotSet::new(vec![0, last], vec![v[0], v[v.len() - 1]]).expect("0 < last")
            };
            (upper.merge(&ends(&upper)), lower.merge(&ends(&lower)))
        }
        KnotRule::AnchoredEnds => {
            let ends = KnotSet::sampled(series, vec![0, last])?;
            (upper.merge(&ends), lower.merge(&ends))
        }
        KnotRule::AnchoredWithMidpoints => {
            let ends = KnotSet::sampled(series, vec![0, last])?;
            let mids = find_midpoints(series, &maxima, &minima);
            let extra = ends.merge(&mids);
            (upper.merge(&extra), lower.merge(&extra))
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelopes {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Spline envelopes evaluated at every sample index. Both knot sets must span
/// `0..=len-1`.
pub fn envelopes(series: &[f64], upper_knots: &KnotSet, lower_knots: &KnotSet) -> Result<Envelopes> {
    let n = series.len();
    for (name, k) in [("upper", upper_knots), ("lower", lower_knots)] {
        let idx = k.indices();
        if idx.first() != Some(&0) || idx.last() != Some(&(n - 1)) {
            return Err(Error::invalid(format!(
                "{name} knots must span indices 0..={} (got {:?}..={:?})",
                n - 1,
                idx.first(),
                idx.last()
            )));
        }
    }
    let upper = NaturalSpline::new(upper_knots)?.sample_grid();
    let lower = NaturalSpline::new(lower_knots)?.sample_grid();
    let mean = upper.iter().zip(&lower).map(|(u, l)| (u + l) / 2.0).collect();
    Ok(Envelopes { upper, lower, mean })
}

/// Mean of the upper and lower envelopes built under `rule`.
pub fn mean_envelope(series: &[f64], rule: KnotRule) -> Result<Vec<f64>> {
    let (upper, lower) = build_knots(series, rule)?;
    Ok(envelopes(series, &upper, &lower)?.mean)
}

/// Sign changes, skipping exact zeros.
pub fn zero_crossings(series: &[f64]) -> usize {
    let mut count = 0;
    let mut prev = 0.0f64;
    for &v in series.iter().filter(|v| **v != 0.0) {
        if prev != 0.0 && (v > 0.0) != (prev > 0.0) {
            count += 1;
        }
        prev = v;
    }
    count
}

/// IMF test: the series oscillates (at least two extrema), its extrema and
/// zero-crossing counts differ by at most one, and the mean envelope stays
/// within [`IMF_MEAN_TOLERANCE`] of the series' std.
pub fn is_imf(series: &[f64], mean_env: &[f64]) -> bool {
    let sd = std_dev(series);
    if sd == 0.0 {
        return false;
    }
    let (max, min) = find_extrema(series);
    let extrema = max.len() + min.len();
    let crossings = zero_crossings(series);
    let worst = mean_env.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    extrema >= 2 && extrema.abs_diff(crossings) <= 1 && worst <= IMF_MEAN_TOLERANCE * sd
}

/// One sifting step: `series - mean_envelope(series)`.
pub fn sift_once(series: &[f64], rule: KnotRule) -> Result<Vec<f64>> {
    let mean = mean_envelope(series, rule)?;
    Ok(series.iter().zip(&mean).map(|(x, m)| x - m).collect())
}
