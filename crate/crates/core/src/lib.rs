//! Ensemble EMD denoising and a sparse-attention trend forecaster for daily
//! OHLCV series.
//!
//! The crate is layered bottom-up:
//!
//! * [`signal`]: extrema, natural cubic splines, envelopes, sifting and
//!   classical EMD.
//! * [`aceemd`]: the paired-noise ensemble denoiser that removes the first
//!   intrinsic mode function.
//! * [`autodiff`]: a small tape-based reverse-mode engine over dense `f64`
//!   arrays, plus Adam and named-tensor checkpoints.
//! * [`model`]: the forecaster (pretreatment, distillation with
//!   probability attention and a time-aware bias, full attention, linear head)
//!   and its training loop.
//! * [`data`]: OHLCV ingestion, trading-day alignment and windowing.
//! * [`eval`]: trend and return metrics, the long-or-flat trading rule and
//!   best-of-five selection.
//! * [`cli`]: the `aceformer` command-line front end.
//!
//! Data-parallel loops (ensemble members, per-channel denoising, the
//! five-seed protocol) go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise.

pub mod aceemd;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod par;
pub mod signal;

pub use error::{Error, Result};
