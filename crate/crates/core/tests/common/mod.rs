//! Independent reference implementations and synthetic data for the
//! integration tests. Nothing here calls into the crate's numerics.
#![allow(dead_code)]

use std::f64::consts::PI;

use aceformer::data::{IndexRecord, OhlcvRecord};
use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian elimination with partial pivoting on a dense copy of `a`.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Natural cubic spline through `(x, y)`, evaluated at `q` by solving the full
/// `n x n` moment system and using the power-basis form on each segment.
pub fn dense_spline(x: &[f64], y: &[f64], q: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut rhs = vec![0.0; n];
    a[0][0] = 1.0;
    a[n - 1][n - 1] = 1.0;
    for i in 1..n - 1 {
        let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        a[i][i - 1] = h0;
        a[i][i] = 2.0 * (h0 + h1);
        a[i][i + 1] = h1;
        rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    let m = dense_solve(a, rhs);
    q.iter()
        .map(|&t| {
            let i = (0..n - 1).rev().find(|&i| x[i] <= t).unwrap_or(0);
            let h = x[i + 1] - x[i];
            let dx = t - x[i];
            let b = (y[i + 1] - y[i]) / h - h * (2.0 * m[i] + m[i + 1]) / 6.0;
            y[i] + b * dx + m[i] / 2.0 * dx * dx + (m[i + 1] - m[i]) / (6.0 * h) * dx * dx * dx
        })
        .collect()
}

/// Interior extrema by scanning each sample's plateau in both directions.
pub fn brute_extrema(s: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let n = s.len();
    let (mut maxima, mut minima) = (Vec::new(), Vec::new());
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && s[j + 1] == s[i] {
            j += 1;
        }
        if i > 0 && j + 1 < n {
            let c = (i + j) / 2;
            if s[i - 1] < s[i] && s[j + 1] < s[i] {
                maxima.push(c);
            }
            if s[i - 1] > s[i] && s[j + 1] > s[i] {
                minima.push(c);
            }
        }
        i = j + 1;
    }
    (maxima, minima)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ends {
    Mirrored,
    Anchored,
    AnchoredMidpoints,
}

fn insert_knot(k: &mut Vec<(usize, f64)>, i: usize, v: f64) {
    if !k.iter().any(|(j, _)| *j == i) {
        k.push((i, v));
    }
}

/// Mean envelope per knot rule, or `None` when the series lacks a maximum or
/// a minimum.
pub fn reference_mean_envelope(s: &[f64], ends: Ends) -> Option<Vec<f64>> {
    let (maxima, minima) = brute_extrema(s);
    if maxima.is_empty() || minima.is_empty() {
        return None;
    }
    let last = s.len() - 1;
    let mut up: Vec<(usize, f64)> = maxima.iter().map(|&i| (i, s[i])).collect();
    let mut lo: Vec<(usize, f64)> = minima.iter().map(|&i| (i, s[i])).collect();
    match ends {
        Ends::Mirrored => {
            let (u0, u1) = (s[maxima[0]], s[*maxima.last().unwrap()]);
            let (l0, l1) = (s[minima[0]], s[*minima.last().unwrap()]);
            insert_knot(&mut up, 0, u0);
            insert_knot(&mut up, last, u1);
            insert_knot(&mut lo, 0, l0);
            insert_knot(&mut lo, last, l1);
        }
        Ends::Anchored | Ends::AnchoredMidpoints => {
            for k in [&mut up, &mut lo] {
                insert_knot(k, 0, s[0]);
                insert_knot(k, last, s[last]);
            }
            if ends == Ends::AnchoredMidpoints {
                let mut all: Vec<usize> = maxima.iter().chain(&minima).copied().collect();
                all.sort();
                for w in all.windows(2) {
                    let m = (w[0] + w[1]) / 2;
                    insert_knot(&mut up, m, s[m]);
                    insert_knot(&mut lo, m, s[m]);
                }
            }
        }
    }
    let grid: Vec<f64> = (0..s.len()).map(|i| i as f64).collect();
    let eval = |mut k: Vec<(usize, f64)>| {
        k.sort_by_key(|p| p.0);
        let x: Vec<f64> = k.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = k.iter().map(|p| p.1).collect();
        dense_spline(&x, &y, &grid)
    };
    let (u, l) = (eval(up), eval(lo));
    Some(u.iter().zip(&l).map(|(a, b)| (a + b) / 2.0).collect())
}

pub fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Slow tone plus a fast tone of period 5; returns `(signal, fast)`.
pub fn two_tone(n: usize) -> (Vec<f64>, Vec<f64>) {
    let fast: Vec<f64> = (0..n).map(|t| 0.5 * (2.0 * PI * t as f64 / 5.0).sin()).collect();
    let x = (0..n).map(|t| (2.0 * PI * t as f64 / 64.0).sin() + fast[t]).collect();
    (x, fast)
}

/// Linear trend plus a sine of period 16 to 48 samples and random phase,
/// and the same with white noise added. Length is 64 to 128.
pub fn trend_sine_noise(seed: u64, noise: f64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let n = r.random_range(64..=128);
    let slope = r.random_range(-0.03..0.03);
    let period = r.random_range(16.0..=48.0);
    let phase = r.random_range(0.0..2.0 * PI);
    let clean: Vec<f64> = (0..n).map(|t| slope * t as f64 + (2.0 * PI * t as f64 / period + phase).sin()).collect();
    let normal = Normal::new(0.0, noise).unwrap();
    let noisy = clean.iter().map(|c| c + normal.sample(&mut r)).collect();
    (clean, noisy)
}

pub fn random_series(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut level = 0.0;
    (0..n)
        .map(|t| {
            level += 0.1 * normal.sample(&mut r);
            level + (t as f64 * r.random_range(0.2..1.4)).sin() + 0.3 * normal.sample(&mut r)
        })
        .collect()
}

pub struct Panel {
    pub primary: Vec<OhlcvRecord>,
    pub index_a: Vec<IndexRecord>,
    pub index_b: Vec<IndexRecord>,
}

/// Weekday random walks from `start` to `end`; each index skips a few
/// scattered days that the others keep.
pub fn synthetic_panel(seed: u64, start: NaiveDate, end: NaiveDate) -> Panel {
    let mut r = rng(seed);
    let step = Normal::new(0.0, 0.01).unwrap();
    let (mut p, mut a, mut b) = (100.0f64, 3000.0f64, 12000.0f64);
    let mut out = Panel { primary: Vec::new(), index_a: Vec::new(), index_b: Vec::new() };
    let mut d = start;
    while d <= end {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            let open = p;
            p *= 1.0 + step.sample(&mut r);
            let close = p;
            let high = open.max(close) * (1.0 + r.random_range(0.0..0.01));
            let low = open.min(close) * (1.0 - r.random_range(0.0..0.01));
            a *= 1.0 + step.sample(&mut r);
            b *= 1.0 + step.sample(&mut r);
            out.primary.push(OhlcvRecord {
                date: d,
                open,
                high,
                low,
                close,
                volume: r.random_range(1e5..1e6_f64).round(),
            });
            if r.random_range(0..40) != 0 {
                out.index_a.push(IndexRecord { date: d, close: a });
            }
            if r.random_range(0..40) != 0 {
                out.index_b.push(IndexRecord { date: d, close: b });
            }
        }
        d = d.succ_opt().unwrap();
    }
    out
}

pub fn ohlcv_csv(recs: &[OhlcvRecord]) -> String {
    let mut s = String::from("Date,Open,High,Low,Close,Volume\n");
    for r in recs {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.date, r.open, r.high, r.low, r.close, r.volume));
    }
    s
}

pub fn index_csv(recs: &[IndexRecord]) -> String {
    let mut s = String::from("Date,Close\n");
    for r in recs {
        s.push_str(&format!("{},{}\n", r.date, r.close));
    }
    s
}

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// Miniature forecaster used by the gradient check and the overfit runs.
pub fn mini_config(seed: u64) -> aceformer::model::ModelConfig {
    aceformer::model::ModelConfig {
        input_window: 12,
        predict_days: 2,
        feature_width: 7,
        d_model: 8,
        n_heads: 2,
        prob_factor: 1.0,
        seed,
        ..Default::default()
    }
}

/// Eight normalized windows cut from a synthetic panel.
pub fn overfit_set() -> Vec<aceformer::model::Example> {
    use aceformer::data::{align, make_windows, SplitDates};
    let p = synthetic_panel(21, date(2020, 1, 1), date(2020, 3, 31));
    let panel = align(&p.primary, &p.index_a, &p.index_b).unwrap();
    let splits = SplitDates {
        train_start: date(2020, 1, 1),
        train_end: date(2020, 3, 31),
        val_start: date(2020, 4, 1),
        val_end: date(2020, 4, 30),
        test_start: date(2020, 5, 1),
        test_end: date(2020, 5, 31),
    };
    let ds = make_windows(&panel, 12, 2, &splits).unwrap();
    ds.samples.iter().step_by(5).take(8).map(|s| s.to_example()).collect()
}

pub fn overfit_train_config(seed: u64) -> aceformer::model::TrainConfig {
    aceformer::model::TrainConfig {
        learning_rate: 3e-3,
        batch_size: 8,
        max_epochs: 500,
        patience: 10_000,
        seed,
        ..Default::default()
    }
}

/// Compact split layout for a two-year synthetic panel.
pub fn short_splits() -> aceformer::data::SplitDates {
    aceformer::data::SplitDates {
        train_start: date(2019, 1, 2),
        train_end: date(2020, 6, 26),
        val_start: date(2020, 6, 29),
        val_end: date(2020, 9, 8),
        test_start: date(2020, 9, 9),
        test_end: date(2020, 12, 31),
    }
}

pub fn two_year_panel(seed: u64) -> Panel {
    synthetic_panel(seed, date(2018, 12, 1), date(2020, 12, 31))
}

/// Worst relative error between backprop gradients and central differences
/// over every parameter of a miniature model. The differences hold the
/// denoiser's first component fixed, matching the straight-through backward.
pub fn worst_gradient_error(seed: u64) -> f64 {
    use aceformer::model::{AceFormer, ChannelDenoise};
    let c = mini_config(seed);
    let m = AceFormer::new(c).unwrap();
    let mut r = rng(seed + 50);
    let data = (0..c.input_window * c.feature_width).map(|_| r.random_range(0.0..1.0)).collect();
    let w = aceformer::autodiff::Tensor::new(vec![c.input_window, c.feature_width], data).unwrap();
    let y = [r.random_range(0.0..1.0), r.random_range(0.0..1.0)];
    let offsets = m.channel_imf1(&w).unwrap();
    let (_, analytic) = m.loss_and_grads(&w, &y, ChannelDenoise::Configured).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (p, g) in analytic.iter().enumerate() {
        for i in 0..g.len() {
            let mut plus = m.clone();
            plus.params_mut()[p].data_mut()[i] += h;
            let mut minus = m.clone();
            minus.params_mut()[p].data_mut()[i] -= h;
            let lp = plus.loss(&w, &y, ChannelDenoise::Subtract(&offsets)).unwrap();
            let lm = minus.loss(&w, &y, ChannelDenoise::Subtract(&offsets)).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            worst = worst.max((g[i] - numeric).abs() / (g[i].abs() + numeric.abs()).max(1e-6));
        }
    }
    worst
}
