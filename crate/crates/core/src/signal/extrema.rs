use super::KnotSet;

/// Interior local maxima and minima of `series`.
///
/// A run of equal values counts as one extremum when both flanking values lie
/// on the same side of it; the run's centre (floor of the mean index) is
/// reported. Runs touching either end of the series are never extrema.
pub fn find_extrema(series: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    let n = series.len();
    if n < 3 {
        return (maxima, minima);
    }

    // Collapse into runs of equal values: (start, end) inclusive.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=n {
        if i == n || series[i] != series[start] {
            runs.push((start, i - 1));
            start = i;
        }
    }

    for w in runs.windows(3) {
        let (prev, (s, e), next) = (series[w[0].0], w[1], series[w[2].0]);
        let v = series[s];
        let centre = (s + e) / 2;
        if v > prev && v > next {
            maxima.push(centre);
        } else if v < prev && v < next {
            minima.push(centre);
        }
    }
    (maxima, minima)
}

pub fn count_extrema(series: &[f64]) -> usize {
    let (max, min) = find_extrema(series);
    max.len() + min.len()
}

/// Knots halfway (floored) between each adjacent pair of extrema, ordinates
/// read from `series`. Empty when fewer than two extrema are given.
pub fn find_midpoints(series: &[f64], maxima: &[usize], minima: &[usize]) -> KnotSet {
    let mut merged: Vec<usize> = maxima.iter().chain(minima).copied().collect();
    merged.sort_unstable();
    merged.dedup();
    if merged.len() < 2 {
        return KnotSet::default();
    }
    let mut indices: Vec<usize> = merged.windows(2).map(|w| (w[0] + w[1]) / 2).collect();
    indices.dedup();
    KnotSet::sampled(series, indices).expect("midpoints lie between valid extrema")
}
