//! Extrema detection, natural cubic splines, envelopes, sifting and classical
//! empirical mode decomposition.

mod emd;
mod envelope;
mod extrema;
mod series;
mod spline;

pub use emd::{emd, emd_with, extract_imf, Decomposition, DEFAULT_MAX_IMFS, DEFAULT_MAX_SIFTS};
pub use envelope::{
    build_knots, envelopes, is_imf, mean_envelope, sift_once, zero_crossings, Envelopes, KnotRule, IMF_MEAN_TOLERANCE,
};
pub use extrema::{count_extrema, find_extrema, find_midpoints};
pub use series::{KnotSet, TimeSeries};
pub use spline::{cubic_spline_eval, NaturalSpline};

/// Population standard deviation. Zero for slices shorter than 2.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pearson: length mismatch");
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
