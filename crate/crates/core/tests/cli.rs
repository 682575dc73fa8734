mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aceformer::autodiff::read_checkpoint;
use aceformer::model::AceFormer;
use common::{index_csv, ohlcv_csv, two_year_panel};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aceformer"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// Writes the panel CSVs and a small configuration into `dir`, with
/// `train` as the body of the training table.
fn workspace(dir: &Path, train: &str) -> PathBuf {
    let p = two_year_panel(17);
    fs::write(dir.join("primary.csv"), ohlcv_csv(&p.primary)).unwrap();
    fs::write(dir.join("a.csv"), index_csv(&p.index_a)).unwrap();
    fs::write(dir.join("b.csv"), index_csv(&p.index_b)).unwrap();
    let cfg = format!(
        r#"seed = 4

[data]
primary = "primary.csv"
index_a = "a.csv"
index_b = "b.csv"

[splits]
train_start = "2020-01-02"
train_end = "2020-06-26"
val_start = "2020-06-29"
val_end = "2020-09-08"
test_start = "2020-09-09"
test_end = "2020-12-31"

[model]
input_window = 12
predict_days = 2
d_model = 8
n_heads = 2
prob_factor = 1.0

[model.aceemd]
ensemble_size = 1

[train]
batch_size = 16
{train}
"#
    );
    let path = dir.join("run.toml");
    fs::write(&path, cfg).unwrap();
    path
}

fn series_file(dir: &Path) -> PathBuf {
    let v = common::random_series(2, 120);
    let mut s = String::from("date,close\n");
    for (i, x) in v.iter().enumerate() {
        s.push_str(&format!("{},{x}\n", common::date(2021, 1, 1) + chrono::Days::new(i as u64)));
    }
    let path = dir.join("series.csv");
    fs::write(&path, s).unwrap();
    path
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    aceformer::cli::read_series(path, name).unwrap().values
}

#[test]
fn decompose_writes_components_that_sum_to_the_input() {
    let dir = tempfile::tempdir().unwrap();
    let input = series_file(dir.path());
    let x = column(&input, "close");

    ok(dir.path(), &["decompose", "--input", "series.csv", "--method", "emd", "--out", "emd"]);
    let emd_dir = dir.path().join("emd");
    let mut sum = column(&emd_dir.join("residue.csv"), "value");
    let mut k = 1;
    while emd_dir.join(format!("imf_{k}.csv")).exists() {
        for (s, v) in sum.iter_mut().zip(column(&emd_dir.join(format!("imf_{k}.csv")), "value")) {
            *s += v;
        }
        k += 1;
    }
    assert!(k > 1);
    for (a, b) in sum.iter().zip(&x) {
        assert!((a - b).abs() < 1e-9);
    }

    ok(dir.path(), &["decompose", "--input", "series.csv", "--out", "ace"]);
    let imf1 = column(&dir.path().join("ace/imf1.csv"), "value");
    let r1 = column(&dir.path().join("ace/r1.csv"), "value");
    for i in 0..x.len() {
        assert!((imf1[i] + r1[i] - x[i]).abs() < 1e-12);
    }
    let report = fs::read_to_string(dir.path().join("ace/report.txt")).unwrap();
    assert!(report.contains("max_reconstruction_error"));
}

#[test]
fn denoise_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    series_file(dir.path());
    ok(dir.path(), &["denoise", "--input", "series.csv", "--seed", "3", "--out", "a"]);
    ok(dir.path(), &["denoise", "--input", "series.csv", "--seed", "3", "--out", "b"]);
    ok(dir.path(), &["denoise", "--input", "series.csv", "--seed", "4", "--out", "c"]);
    let read = |d: &str| fs::read(dir.path().join(d).join("denoised.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn failures_exit_nonzero_with_one_line_and_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["decompose", "--input", "missing.csv", "--out", "x"]);
    assert!(!o.status.success());
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));
    assert!(!dir.path().join("x").exists());
    let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
    assert!(leftovers.is_empty());

    let o = run(dir.path(), &["train", "--out", "t"]);
    assert!(!o.status.success());
    assert!(String::from_utf8(o.stderr).unwrap().contains("data.primary"));

    let o = run(dir.path(), &["bogus"]);
    assert!(!o.status.success());
    assert_eq!(String::from_utf8(o.stderr).unwrap().lines().count(), 1);
}

#[test]
fn zero_learning_rate_keeps_the_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = workspace(dir.path(), "max_epochs = 2\nlearning_rate = 0.0");
    let cfg = cfg.to_str().unwrap();
    ok(dir.path(), &["train", "--config", cfg, "--out", "run"]);
    let file = fs::File::open(dir.path().join("run/checkpoint.txt")).unwrap();
    let ckpt = read_checkpoint(std::io::BufReader::new(file)).unwrap();
    let loaded = aceformer::cli::RunConfig::load(Path::new(cfg)).unwrap().finalize().unwrap();
    let init = AceFormer::new(loaded.model).unwrap();
    assert_eq!(AceFormer::from_checkpoint(loaded.model, &ckpt).unwrap(), init);
    let manifest = fs::read_to_string(dir.path().join("run/manifest.txt")).unwrap();
    assert!(manifest.contains("train.samples"));
}

#[test]
fn same_seed_training_repeats_and_downstream_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = workspace(dir.path(), "max_epochs = 2\nlearning_rate = 0.003");
    let cfg = cfg.to_str().unwrap();
    ok(dir.path(), &["train", "--config", cfg, "--out", "a"]);
    ok(dir.path(), &["train", "--config", cfg, "--out", "b"]);
    let read = |p: &str| fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/history.csv"), read("b/history.csv"));
    assert_eq!(read("a/checkpoint.txt"), read("b/checkpoint.txt"));

    ok(dir.path(), &["predict", "--config", cfg, "--checkpoint", "a/checkpoint.txt", "--out", "pred"]);
    let preds = fs::read_to_string(dir.path().join("pred/predictions.csv")).unwrap();
    assert!(preds.lines().count() > 1);

    ok(dir.path(), &["backtest", "--config", cfg, "--checkpoint", "a/checkpoint.txt", "--out", "bt"]);
    let report = fs::read_to_string(dir.path().join("bt/report.txt")).unwrap();
    for key in ["acc:", "mcc:", "irr_sum_pct:", "sr:", "benchmark_sr:"] {
        assert!(report.contains(key), "{key} missing");
    }
}

#[test]
fn reference_predictors_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = workspace(dir.path(), "");
    let cfg = cfg.to_str().unwrap();
    ok(dir.path(), &["backtest", "--config", cfg, "--predictor", "oracle", "--out", "oracle"]);
    let text = fs::read_to_string(dir.path().join("oracle/report.txt")).unwrap();
    assert!(text.contains("acc: 100.000000000\n"), "{text}");
    assert!(text.contains("mcc: 1.00000000000\n"), "{text}");

    ok(dir.path(), &["backtest", "--config", cfg, "--predictor", "always-up", "--out", "up"]);
    let text = fs::read_to_string(dir.path().join("up/report.txt")).unwrap();
    let get = |k: &str| text.lines().find_map(|l| l.strip_prefix(&format!("{k}: "))).unwrap().to_string();
    assert_eq!(get("irr_paper_formula"), get("benchmark_irr_paper_formula"));
    assert_eq!(get("sr"), get("benchmark_sr"));

    let o = run(dir.path(), &["backtest", "--config", cfg, "--out", "none"]);
    assert!(!o.status.success());
    assert!(String::from_utf8(o.stderr).unwrap().contains("--checkpoint"));
}

#[test]
fn train_five_writes_every_run_and_a_stable_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = workspace(dir.path(), "max_epochs = 1");
    let cfg = cfg.to_str().unwrap();
    ok(dir.path(), &["train-five", "--config", cfg, "--out", "a"]);
    ok(dir.path(), &["train-five", "--config", cfg, "--out", "b"]);
    for s in 4..9 {
        assert!(dir.path().join(format!("a/checkpoint_seed{s}.txt")).exists());
    }
    let read = |p: &str| fs::read_to_string(dir.path().join(p)).unwrap();
    assert_eq!(read("a/selection.txt"), read("b/selection.txt"));
    let chosen: u64 =
        read("a/selection.txt").lines().find_map(|l| l.strip_prefix("chosen_seed: ")).unwrap().parse().unwrap();
    assert!((4..9).contains(&chosen));
}

#[test]
fn plot_data_copies_columns_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("x.csv"), "t,value\n0,1.50000000000\n1,-2.25\n").unwrap();
    fs::write(dir.path().join("y.csv"), "t,date,value\n0,2021-01-01,3e-7\n1,2021-01-02,0.1\n").unwrap();
    ok(dir.path(), &["plot-data", "--input", "x.csv", "--input", "y.csv", "--out", "plots"]);
    let text = fs::read_to_string(dir.path().join("plots/plot_data.csv")).unwrap();
    assert_eq!(text, "index,value,y.value\n0,1.50000000000,3e-7\n1,-2.25,0.1\n");

    fs::write(dir.path().join("z.csv"), "t,value\n0,1\n").unwrap();
    let o = run(dir.path(), &["plot-data", "--input", "x.csv", "--input", "z.csv", "--out", "bad"]);
    assert!(!o.status.success());
    assert!(!dir.path().join("bad").exists());
}
