//! Trend and return metrics, the trading rule and the five-seed protocol.

mod protocol;

use serde::{Deserialize, Serialize};

pub use protocol::{
    backtest, predict_samples, score_run, select_best_of_five, train_five, BacktestDay, FiveSeedOutcome, RunScore,
    SeededRun,
};

use crate::{Error, Result};

/// Per-day direction calls: predicted and realized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrendOutcome {
    pub predicted_up: Vec<bool>,
    pub actual_up: Vec<bool>,
}

impl TrendOutcome {
    pub fn new(predicted_up: Vec<bool>, actual_up: Vec<bool>) -> Result<Self> {
        if predicted_up.len() != actual_up.len() {
            return Err(Error::invalid(format!(
                "trend arrays differ in length: {} vs {}",
                predicted_up.len(),
                actual_up.len()
            )));
        }
        Ok(Self { predicted_up, actual_up })
    }

    pub fn len(&self) -> usize {
        self.actual_up.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actual_up.is_empty()
    }

    /// `(tp, tn, fp, fn)` with "up" as the positive class.
    pub fn confusion(&self) -> (u64, u64, u64, u64) {
        let mut c = (0, 0, 0, 0);
        for (&p, &a) in self.predicted_up.iter().zip(&self.actual_up) {
            match (p, a) {
                (true, true) => c.0 += 1,
                (false, false) => c.1 += 1,
                (true, false) => c.2 += 1,
                (false, true) => c.3 += 1,
            }
        }
        c
    }
}

/// Up means strictly above the prior close; an unchanged close is not up.
pub fn trend_from_predictions(predicted: &[f64], actual: &[f64], prior: &[f64]) -> Result<TrendOutcome> {
    if predicted.len() != actual.len() || actual.len() != prior.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} predicted, {} actual, {} prior closes",
            predicted.len(),
            actual.len(),
            prior.len()
        )));
    }
    TrendOutcome::new(
        predicted.iter().zip(prior).map(|(p, b)| p > b).collect(),
        actual.iter().zip(prior).map(|(a, b)| a > b).collect(),
    )
}

fn non_empty(o: &TrendOutcome) -> Result<()> {
    if o.is_empty() {
        return Err(Error::invalid("empty trend outcome"));
    }
    Ok(())
}

/// Percentage of days whose direction was called correctly.
pub fn accuracy(o: &TrendOutcome) -> Result<f64> {
    non_empty(o)?;
    let hits = o.predicted_up.iter().zip(&o.actual_up).filter(|(p, a)| p == a).count();
    Ok(100.0 * hits as f64 / o.len() as f64)
}

/// Matthews correlation; 0 when any marginal count is zero.
pub fn mcc(o: &TrendOutcome) -> Result<f64> {
    non_empty(o)?;
    let (tp, tn, fp, fn_) = o.confusion();
    let (tp, tn, fp, fn_) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let radicand = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if radicand == 0.0 {
        return Ok(0.0);
    }
    Ok(((tp * tn - fp * fn_) / radicand.sqrt()).clamp(-1.0, 1.0))
}

/// Long-or-flat: hold the day's return when up was predicted, else 0.
pub fn trading_returns(o: &TrendOutcome, actual_returns: &[f64]) -> Result<Vec<f64>> {
    if o.len() != actual_returns.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} trend days, {} returns",
            o.len(),
            actual_returns.len()
        )));
    }
    Ok(o.predicted_up.iter().zip(actual_returns).map(|(&up, &r)| if up { r.clamp(-1.0, 1.0) } else { 0.0 }).collect())
}

/// Additive return: `sum(R) + 1`.
pub fn irr(returns: &[f64]) -> f64 {
    returns.iter().sum::<f64>() + 1.0
}

/// Mean over sample standard deviation of `returns - rf`.
pub fn sharpe(returns: &[f64], rf: f64) -> Result<f64> {
    let n = returns.len();
    if n < 2 {
        return Err(Error::invalid(format!("Sharpe ratio needs at least 2 days, got {n}")));
    }
    let excess: Vec<f64> = returns.iter().map(|r| r - rf).collect();
    let mean = excess.iter().sum::<f64>() / n as f64;
    let var = excess.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        if mean == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::Degenerate(format!("constant excess return {mean} has zero deviation")));
    }
    Ok(mean / sd)
}

/// Buy-and-hold `(irr, sharpe)`.
pub fn benchmark(actual_returns: &[f64], rf: f64) -> Result<(f64, f64)> {
    if actual_returns.is_empty() {
        return Err(Error::invalid("benchmark needs at least one day"));
    }
    Ok((irr(actual_returns), sharpe(actual_returns, rf)?))
}

/// Decimal rendering that round-trips and shows at least 12 significant
/// digits (zero-padded when the shortest form is shorter).
pub fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00000000000".into();
    }
    let mut s = format!("{x}");
    if !s.contains('.') {
        s.push('.');
    }
    let sig = s.trim_start_matches('-').trim_start_matches(['0', '.']).chars().filter(char::is_ascii_digit).count();
    for _ in sig..12 {
        s.push('0');
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub days: usize,
    pub acc: f64,
    pub mcc: f64,
    /// `sum(R)` as a percentage.
    pub irr_sum_pct: f64,
    /// `sum(R) + 1`.
    pub irr_paper_formula: f64,
    pub sr: f64,
    pub benchmark_irr_sum_pct: f64,
    pub benchmark_irr_paper_formula: f64,
    pub benchmark_sr: f64,
}

impl BacktestReport {
    const KEYS: [&'static str; 9] = [
        "days",
        "acc",
        "mcc",
        "irr_sum_pct",
        "irr_paper_formula",
        "sr",
        "benchmark_irr_sum_pct",
        "benchmark_irr_paper_formula",
        "benchmark_sr",
    ];

    fn values(&self) -> [String; 9] {
        [
            self.days.to_string(),
            format_number(self.acc),
            format_number(self.mcc),
            format_number(self.irr_sum_pct),
            format_number(self.irr_paper_formula),
            format_number(self.sr),
            format_number(self.benchmark_irr_sum_pct),
            format_number(self.benchmark_irr_paper_formula),
            format_number(self.benchmark_sr),
        ]
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        Self::KEYS.iter().zip(self.values()).map(|(k, v)| format!("{k}: {v}\n")).collect()
    }

    pub fn csv_header() -> String {
        Self::KEYS.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values().join(",")
    }
}
