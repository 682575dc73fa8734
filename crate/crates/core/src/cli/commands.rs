use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{Cli, Command, Method, OutputSet, Predictor, RunConfig};
use crate::aceemd::{aceemd_denoise_with, emd_denoise};
use crate::autodiff::{read_checkpoint, write_checkpoint};
use crate::data::{self, parse_date, Sample, Split, WindowedDataset};
use crate::eval::{self, format_number, BacktestReport};
use crate::model::{self, AceFormer, EpochRecord};
use crate::par::Exec;
use crate::signal::{emd, TimeSeries, DEFAULT_MAX_IMFS, DEFAULT_MAX_SIFTS};
use crate::{Error, Result};

/// A value column read from a delimited file, with dates when the file has
/// a `date` column.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub dates: Option<Vec<NaiveDate>>,
    pub values: Vec<f64>,
}

pub fn read_series(path: &Path, column: &str) -> Result<Series> {
    let file = std::fs::File::open(path).map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = rdr.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let col = find(column)
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("{} has no {column:?} column", path.display()) })?;
    let date_col = find("date");
    let mut dates = date_col.map(|_| Vec::new());
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let raw = rec.get(col).ok_or_else(|| Error::Parse { line, msg: format!("missing {column:?} field") })?;
        let v: f64 = raw.trim().parse().map_err(|_| Error::Parse { line, msg: format!("{raw:?} is not a number") })?;
        if !v.is_finite() {
            return Err(Error::Parse { line, msg: "non-finite value".into() });
        }
        values.push(v);
        if let (Some(ds), Some(dc)) = (dates.as_mut(), date_col) {
            let raw = rec.get(dc).unwrap_or("");
            ds.push(parse_date(raw).map_err(|e| Error::Parse { line, msg: e.to_string() })?);
        }
    }
    Ok(Series { dates, values })
}

fn series_csv(dates: Option<&[NaiveDate]>, columns: &[(&str, &[f64])]) -> String {
    let mut out = String::from("t");
    if dates.is_some() {
        out.push_str(",date");
    }
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let n = columns.first().map_or(0, |c| c.1.len());
    for i in 0..n {
        let _ = write!(out, "{i}");
        if let Some(d) = dates {
            let _ = write!(out, ",{}", d[i]);
        }
        for (_, v) in columns {
            let _ = write!(out, ",{}", format_number(v[i]));
        }
        out.push('\n');
    }
    out
}

fn input_series(path: &Path, column: &str) -> Result<TimeSeries> {
    let s = read_series(path, column)?;
    let mut ts = TimeSeries::new(s.values)?;
    if let Some(d) = s.dates {
        ts.set_dates(d)?;
    }
    Ok(ts)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn decompose(out: &Path, input: &Path, column: &str, method: Method, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let x = input_series(input, column)?;
    let dates = x.dates();
    let mut set = OutputSet::new(out)?;
    let mut report = String::new();
    match method {
        Method::Emd => {
            let d = emd(&x, DEFAULT_MAX_IMFS, DEFAULT_MAX_SIFTS)?;
            for (k, imf) in d.imfs.iter().enumerate() {
                set.add(&format!("imf_{}.csv", k + 1), series_csv(dates, &[("value", imf.values())]))?;
            }
            set.add("residue.csv", series_csv(dates, &[("value", d.residue.values())]))?;
            let err = max_abs_diff(&d.reconstruct(), x.values());
            let _ = writeln!(report, "method: emd\ncomponents: {}", d.imfs.len());
            let _ = writeln!(report, "max_reconstruction_error: {}", format_number(err));
        }
        Method::Aceemd => {
            let r = aceemd_denoise_with(&x, &cfg.aceemd, Exec::default())?;
            set.add("imf1.csv", series_csv(dates, &[("value", r.imf1.values())]))?;
            set.add("r1.csv", series_csv(dates, &[("value", r.r1.values())]))?;
            let sum: Vec<f64> = r.imf1.iter().zip(r.r1.iter()).map(|(a, b)| a + b).collect();
            let _ = writeln!(report, "method: aceemd\ncomponents: 2");
            let _ = writeln!(report, "max_reconstruction_error: {}", format_number(max_abs_diff(&sum, x.values())));
        }
    }
    set.add("report.txt", report)?;
    set.commit()
}

fn denoise(out: &Path, input: &Path, column: &str, method: Method, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let x = input_series(input, column)?;
    let denoised = match method {
        Method::Emd => emd_denoise(&x)?,
        Method::Aceemd => aceemd_denoise_with(&x, &cfg.aceemd, Exec::default())?.r1,
    };
    let mut set = OutputSet::new(out)?;
    set.add("denoised.csv", series_csv(x.dates(), &[("original", x.values()), ("denoised", denoised.values())]))?;
    set.commit()
}

fn load_dataset(cfg: &RunConfig) -> Result<WindowedDataset> {
    let need =
        |p: &Option<PathBuf>, what: &str| p.clone().ok_or_else(|| Error::Config(format!("data.{what} is not set")));
    let primary = data::load_csv(need(&cfg.data.primary, "primary")?)?;
    let a = data::load_index_csv(need(&cfg.data.index_a, "index_a")?)?;
    let b = data::load_index_csv(need(&cfg.data.index_b, "index_b")?)?;
    let panel = data::align(&primary, &a, &b)?;
    if cfg.model.feature_width != data::FEATURE_NAMES.len() {
        return Err(Error::Config(format!(
            "model.feature_width must be {} for OHLCV plus two index closes",
            data::FEATURE_NAMES.len()
        )));
    }
    data::make_windows(&panel, cfg.model.input_window, cfg.model.predict_days, &cfg.splits)
}

fn history_csv(h: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for r in h {
        let _ = writeln!(s, "{},{},{}", r.epoch, format_number(r.train_loss), format_number(r.val_loss));
    }
    s
}

fn checkpoint_bytes(m: &AceFormer) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &m.to_checkpoint())?;
    Ok(buf)
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<AceFormer> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    let ckpt = read_checkpoint(std::io::BufReader::new(file))?;
    AceFormer::from_checkpoint(cfg.model, &ckpt)
}

fn train(out: &Path, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(cfg)?;
    let train_set = ds.examples(Split::Train);
    let val_set = ds.examples(Split::Val);
    let init = AceFormer::new(cfg.model)?;
    let outcome = model::train(&init, &train_set, &val_set, &cfg.train, Exec::default())?;
    let mut set = OutputSet::new(out)?;
    set.add("checkpoint.txt", checkpoint_bytes(&outcome.model)?)?;
    set.add("history.csv", history_csv(&outcome.history))?;
    set.add("manifest.txt", ds.manifest())?;
    set.commit()
}

fn train_five(out: &Path, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(cfg)?;
    let five = eval::train_five(&cfg.model, &cfg.train, &ds, cfg.seed, Exec::default())?;
    let mut set = OutputSet::new(out)?;
    let mut report = String::from("seed,val_acc,val_mse,best_epoch\n");
    for run in &five.runs {
        set.add(&format!("checkpoint_seed{}.txt", run.seed), checkpoint_bytes(&run.outcome.model)?)?;
        set.add(&format!("history_seed{}.csv", run.seed), history_csv(&run.outcome.history))?;
        let _ = writeln!(
            report,
            "{},{},{},{}",
            run.seed,
            format_number(run.score.val_acc),
            format_number(run.score.val_mse),
            run.outcome.best_epoch
        );
    }
    let _ = writeln!(report, "chosen_seed: {}", five.chosen.seed);
    set.add("selection.txt", report)?;
    set.add("manifest.txt", ds.manifest())?;
    set.commit()
}

/// Price-unit forecasts of every day for each sample.
fn model_closes(model: &AceFormer, samples: &[&Sample]) -> Result<Vec<Vec<f64>>> {
    let preds = eval::predict_samples(model, samples, Exec::default())?;
    Ok(samples.iter().zip(preds).map(|(s, p)| data::denormalize(&p, s.close_norm())).collect())
}

fn split_samples(ds: &WindowedDataset, split: Split) -> Result<Vec<&Sample>> {
    let v: Vec<&Sample> = ds.split(split).collect();
    if v.is_empty() {
        return Err(Error::invalid(format!("the {} split has no samples", split.name())));
    }
    Ok(v)
}

fn predict(out: &Path, cfg: &RunConfig, checkpoint: &Path, split: Split) -> Result<Vec<PathBuf>> {
    let model = load_model(cfg, checkpoint)?;
    let ds = load_dataset(cfg)?;
    let samples = split_samples(&ds, split)?;
    let closes = model_closes(&model, &samples)?;
    let p = cfg.model.predict_days;
    let mut s = String::from("first_target_date,prior_close");
    for k in 1..=p {
        let _ = write!(s, ",predicted_{k}");
    }
    for k in 1..=p {
        let _ = write!(s, ",actual_{k}");
    }
    s.push('\n');
    for (sample, c) in samples.iter().zip(&closes) {
        let _ = write!(s, "{},{}", sample.target_dates[0], format_number(sample.prior_close));
        for v in c.iter().chain(&sample.target_closes) {
            let _ = write!(s, ",{}", format_number(*v));
        }
        s.push('\n');
    }
    let mut set = OutputSet::new(out)?;
    set.add("predictions.csv", s)?;
    set.commit()
}

fn backtest(
    out: &Path,
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    predictor: Predictor,
    split: Split,
) -> Result<Vec<PathBuf>> {
    let model = match (predictor, checkpoint) {
        (Predictor::Model, Some(p)) => Some(load_model(cfg, p)?),
        (Predictor::Model, None) => {
            return Err(Error::Config("--checkpoint is required for the model predictor".into()))
        }
        _ => None,
    };
    let ds = load_dataset(cfg)?;
    let samples = split_samples(&ds, split)?;
    let first: Vec<f64> = match &model {
        Some(m) => model_closes(m, &samples)?.into_iter().map(|c| c[0]).collect(),
        None if predictor == Predictor::Oracle => samples.iter().map(|s| s.target_closes[0]).collect(),
        None => samples.iter().map(|s| s.prior_close + s.prior_close.abs().max(1.0) * 1e-6).collect(),
    };
    let (report, days) = eval::backtest(&samples, &first, cfg.backtest.rf)?;
    let mut daily = String::from(
        "date,prior_close,actual_close,predicted_close,predicted_up,actual_up,actual_return,strategy_return\n",
    );
    for d in &days {
        let _ = writeln!(
            daily,
            "{},{},{},{},{},{},{},{}",
            d.date,
            format_number(d.prior_close),
            format_number(d.actual_close),
            format_number(d.predicted_close),
            u8::from(d.predicted_up),
            u8::from(d.actual_up),
            format_number(d.actual_return),
            format_number(d.strategy_return)
        );
    }
    let mut set = OutputSet::new(out)?;
    set.add("report.txt", report.to_text())?;
    set.add("report.csv", format!("{}\n{}\n", BacktestReport::csv_header(), report.csv_row()))?;
    set.add("days.csv", daily)?;
    set.commit()
}

/// Copies the last column of each input, verbatim, under an index column.
fn plot_data(out: &Path, inputs: &[PathBuf], name: &str) -> Result<Vec<PathBuf>> {
    let mut headers = Vec::new();
    let mut columns: Vec<Vec<String>> = Vec::new();
    for path in inputs {
        let file =
            std::fs::File::open(path).map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
        let mut rdr = csv::ReaderBuilder::new().from_reader(file);
        let header = rdr.headers()?.clone();
        let last =
            header.len().checked_sub(1).ok_or_else(|| Error::invalid(format!("{} has no columns", path.display())))?;
        let mut col = Vec::new();
        for rec in rdr.records() {
            col.push(rec?.get(last).unwrap_or_default().to_string());
        }
        let mut h = header.get(last).unwrap_or_default().to_string();
        if headers.contains(&h) {
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            h = format!("{stem}.{h}");
        }
        headers.push(h);
        columns.push(col);
    }
    let n = columns[0].len();
    if let Some((i, c)) = columns.iter().enumerate().find(|(_, c)| c.len() != n) {
        return Err(Error::invalid(format!(
            "{} has {} rows but {} has {n}",
            inputs[i].display(),
            c.len(),
            inputs[0].display()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["index".to_string()];
    head.extend(headers);
    w.write_record(&head)?;
    for i in 0..n {
        let mut row = vec![i.to_string()];
        row.extend(columns.iter().map(|c| c[i].clone()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let mut set = OutputSet::new(out)?;
    set.add(name, bytes)?;
    set.commit()
}

pub(super) fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Decompose { input, column, method } => decompose(out, input, column, *method, cfg),
        Command::Denoise { input, column, method } => denoise(out, input, column, *method, cfg),
        Command::Train => train(out, cfg),
        Command::TrainFive => train_five(out, cfg),
        Command::Predict { checkpoint, split } => predict(out, cfg, checkpoint, (*split).into()),
        Command::Backtest { checkpoint, predictor, split } => {
            backtest(out, cfg, checkpoint.as_deref(), *predictor, (*split).into())
        }
        Command::PlotData { inputs, name } => plot_data(out, inputs, name),
    }
}
