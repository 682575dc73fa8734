//! Backtesting a forecaster and the five-seed selection protocol.

use std::collections::HashSet;

use chrono::NaiveDate;

use super::{accuracy, benchmark, irr, mcc, sharpe, trading_returns, trend_from_predictions, BacktestReport};
use crate::data::{Sample, Split, WindowedDataset};
use crate::model::{self, AceFormer, ModelConfig, TrainConfig, TrainOutcome};
use crate::par::{self, Exec};
use crate::{Error, Result};

/// Normalized `p`-day forecasts for each sample.
pub fn predict_samples(model: &AceFormer, samples: &[&Sample], exec: Exec) -> Result<Vec<Vec<f64>>> {
    par::try_map_range(exec, samples.len(), |i| model.predict(&samples[i].features))
}

/// One evaluation day of a backtest.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestDay {
    pub date: NaiveDate,
    pub prior_close: f64,
    pub actual_close: f64,
    pub predicted_close: f64,
    pub predicted_up: bool,
    pub actual_up: bool,
    pub actual_return: f64,
    pub strategy_return: f64,
}

/// Scores first-day close forecasts (price units) against `samples`.
pub fn backtest(samples: &[&Sample], predicted_closes: &[f64], rf: f64) -> Result<(BacktestReport, Vec<BacktestDay>)> {
    if samples.len() != predicted_closes.len() {
        return Err(Error::invalid(format!("{} samples but {} predictions", samples.len(), predicted_closes.len())));
    }
    let actual: Vec<f64> = samples.iter().map(|s| s.target_closes[0]).collect();
    let prior: Vec<f64> = samples.iter().map(|s| s.prior_close).collect();
    if prior.contains(&0.0) {
        return Err(Error::invalid("a prior close of zero has no daily return"));
    }
    let outcome = trend_from_predictions(predicted_closes, &actual, &prior)?;
    let actual_returns: Vec<f64> = samples.iter().map(|s| s.first_day_return()).collect();
    let strategy = trading_returns(&outcome, &actual_returns)?;
    let (bench_irr, bench_sr) = benchmark(&actual_returns, rf)?;
    let strat_irr = irr(&strategy);
    let report = BacktestReport {
        days: samples.len(),
        acc: accuracy(&outcome)?,
        mcc: mcc(&outcome)?,
        irr_sum_pct: (strat_irr - 1.0) * 100.0,
        irr_paper_formula: strat_irr,
        sr: sharpe(&strategy, rf)?,
        benchmark_irr_sum_pct: (bench_irr - 1.0) * 100.0,
        benchmark_irr_paper_formula: bench_irr,
        benchmark_sr: bench_sr,
    };
    let days = samples
        .iter()
        .enumerate()
        .map(|(i, s)| BacktestDay {
            date: s.target_dates[0],
            prior_close: prior[i],
            actual_close: actual[i],
            predicted_close: predicted_closes[i],
            predicted_up: outcome.predicted_up[i],
            actual_up: outcome.actual_up[i],
            actual_return: actual_returns[i],
            strategy_return: strategy[i],
        })
        .collect();
    Ok((report, days))
}

/// Validation performance of one trained run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunScore {
    pub seed: u64,
    pub val_acc: f64,
    pub val_mse: f64,
}

/// Validation ACC of first-day direction calls and MSE of the normalized
/// forecasts.
pub fn score_run(model: &AceFormer, val: &[&Sample], exec: Exec) -> Result<RunScore> {
    if val.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let preds = predict_samples(model, val, exec)?;
    let first: Vec<f64> = val.iter().zip(&preds).map(|(s, p)| s.close_norm().denormalize(p[0])).collect();
    let actual: Vec<f64> = val.iter().map(|s| s.target_closes[0]).collect();
    let prior: Vec<f64> = val.iter().map(|s| s.prior_close).collect();
    let outcome = trend_from_predictions(&first, &actual, &prior)?;
    let mut sq = 0.0;
    for (s, p) in val.iter().zip(&preds) {
        sq += s.targets.iter().zip(p).map(|(t, y)| (t - y) * (t - y)).sum::<f64>() / p.len() as f64;
    }
    Ok(RunScore { seed: model.config().seed, val_acc: accuracy(&outcome)?, val_mse: sq / val.len() as f64 })
}

/// Highest validation ACC, then lowest validation MSE, then lowest seed.
pub fn select_best_of_five(runs: &[RunScore]) -> Result<RunScore> {
    if runs.len() != 5 {
        return Err(Error::invalid(format!("selection needs exactly 5 runs, got {}", runs.len())));
    }
    let seeds: HashSet<u64> = runs.iter().map(|r| r.seed).collect();
    if seeds.len() != 5 {
        return Err(Error::invalid("the 5 runs must have distinct seeds"));
    }
    let best = runs
        .iter()
        .min_by(|a, b| b.val_acc.total_cmp(&a.val_acc).then(a.val_mse.total_cmp(&b.val_mse)).then(a.seed.cmp(&b.seed)))
        .expect("five runs");
    Ok(*best)
}

#[derive(Debug, Clone)]
pub struct SeededRun {
    pub seed: u64,
    pub score: RunScore,
    pub outcome: TrainOutcome,
}

#[derive(Debug, Clone)]
pub struct FiveSeedOutcome {
    pub runs: Vec<SeededRun>,
    pub chosen: RunScore,
}

impl FiveSeedOutcome {
    pub fn chosen_run(&self) -> &SeededRun {
        self.runs.iter().find(|r| r.seed == self.chosen.seed).expect("chosen seed is one of the runs")
    }
}

/// Trains with seeds `seed..seed + 5` and picks one on the validation split.
/// Each run derives its initialization, denoiser noise and shuffling from its
/// own seed; runs share nothing and may execute in parallel.
pub fn train_five(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    dataset: &WindowedDataset,
    seed: u64,
    exec: Exec,
) -> Result<FiveSeedOutcome> {
    model_config.validate()?;
    train_config.validate()?;
    let train_set = dataset.examples(Split::Train);
    let val_samples: Vec<&Sample> = dataset.split(Split::Val).collect();
    let val_set = dataset.examples(Split::Val);
    if train_set.is_empty() || val_samples.is_empty() {
        return Err(Error::invalid(format!(
            "train-five needs train and validation samples, got {} and {}",
            train_set.len(),
            val_samples.len()
        )));
    }
    let runs = par::try_map_range(exec, 5, |i| {
        let s = seed.wrapping_add(i as u64);
        let mut mc = *model_config;
        mc.seed = s;
        mc.aceemd.seed = s;
        let tc = TrainConfig { seed: s, ..*train_config };
        let init = AceFormer::new(mc)?.with_exec(Exec::Sequential);
        let outcome = model::train(&init, &train_set, &val_set, &tc, Exec::Sequential)?;
        let score = score_run(&outcome.model, &val_samples, Exec::Sequential)?;
        Ok::<_, Error>(SeededRun { seed: s, score, outcome })
    })?;
    let scores: Vec<RunScore> = runs.iter().map(|r| r.score).collect();
    let chosen = select_best_of_five(&scores)?;
    Ok(FiveSeedOutcome { runs, chosen })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(seed: u64, acc: f64, mse: f64) -> RunScore {
        RunScore { seed, val_acc: acc, val_mse: mse }
    }

    #[test]
    fn selection_rules() {
        let runs =
            [score(1, 50.0, 0.1), score(2, 70.0, 0.3), score(3, 60.0, 0.01), score(4, 40.0, 0.0), score(5, 55.0, 0.2)];
        assert_eq!(select_best_of_five(&runs).unwrap().seed, 2);
        let tie =
            [score(1, 70.0, 0.2), score(2, 70.0, 0.1), score(3, 60.0, 0.0), score(4, 10.0, 0.0), score(5, 70.0, 0.3)];
        assert_eq!(select_best_of_five(&tie).unwrap().seed, 2);
        let full_tie =
            [score(9, 70.0, 0.1), score(4, 70.0, 0.1), score(7, 70.0, 0.1), score(5, 70.0, 0.1), score(6, 70.0, 0.1)];
        assert_eq!(select_best_of_five(&full_tie).unwrap().seed, 4);
    }

    #[test]
    fn selection_preconditions() {
        let four = [score(1, 1.0, 1.0), score(2, 1.0, 1.0), score(3, 1.0, 1.0), score(4, 1.0, 1.0)];
        assert!(select_best_of_five(&four).is_err());
        let dup = [score(1, 1.0, 1.0), score(1, 1.0, 1.0), score(3, 1.0, 1.0), score(4, 1.0, 1.0), score(5, 1.0, 1.0)];
        assert!(select_best_of_five(&dup).is_err());
    }

    #[test]
    fn selection_is_permutation_invariant() {
        let runs = vec![
            score(1, 70.0, 0.2),
            score(2, 70.0, 0.1),
            score(3, 60.0, 0.0),
            score(4, 70.0, 0.1),
            score(5, 20.0, 0.3),
        ];
        let want = select_best_of_five(&runs).unwrap();
        let mut perm = runs.clone();
        // Heap's algorithm over all 120 orderings
        let mut c = [0usize; 5];
        let mut i = 0;
        while i < 5 {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i)
                } else {
                    perm.swap(c[i], i)
                }
                assert_eq!(select_best_of_five(&perm).unwrap(), want);
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
    }
}
