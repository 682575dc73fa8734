//! Paired-noise ensemble denoiser.
//!
//! Each ensemble member adds a Gaussian draw `n` to the input and also
//! subtracts it, giving the pair `pe = x + n`, `pm = x - n`. Both are sifted
//! in lockstep: `pe` with envelopes anchored at the series endpoints, `pm`
//! with the same knots plus the midpoints between adjacent extrema. The loop
//! stops when `pe`'s candidate is an IMF, and the member's first IMF is the
//! `alpha`-weighted blend of the two candidates. The ensemble IMF is the
//! member average; the denoised signal is the input minus that IMF.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::par::{self, Exec};
use crate::signal::{build_knots, emd, is_imf, mean_envelope, std_dev, KnotRule, TimeSeries, DEFAULT_MAX_SIFTS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AceemdConfig {
    /// Number of noise pairs.
    pub ensemble_size: usize,
    /// Weight of the endpoint-anchored branch in each member's blend.
    pub alpha: f64,
    /// Noise standard deviation as a fraction of the input's.
    pub noise_scale: f64,
    pub seed: u64,
    /// Cap on lockstep sifting iterations per member.
    pub max_iters: usize,
}

impl Default for AceemdConfig {
    fn default() -> Self {
        Self { ensemble_size: 5, alpha: 0.5, noise_scale: 0.2, seed: 0, max_iters: DEFAULT_MAX_SIFTS }
    }
}

impl AceemdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size == 0 {
            return Err(Error::Config("ensemble_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::Config(format!(
                "noise_scale must be finite and non-negative, got {}",
                self.noise_scale
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// `pe = x + n`, `pm = x - n` for one Gaussian draw `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePair {
    pub pe: TimeSeries,
    pub pm: TimeSeries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseResult {
    /// Removed component (ensemble first IMF).
    pub imf1: TimeSeries,
    /// Denoised signal, `x - imf1`.
    pub r1: TimeSeries,
    /// Each member's blended IMF, in member order.
    pub per_member_imf1: Vec<TimeSeries>,
}

fn check_len(x: &[f64]) -> Result<()> {
    if x.len() < 4 {
        return Err(Error::invalid(format!("denoising needs at least 4 samples, got {}", x.len())));
    }
    Ok(())
}

fn member_noise(x: &[f64], config: &AceemdConfig, member: usize) -> Vec<f64> {
    let sd = config.noise_scale * std_dev(x);
    if sd == 0.0 {
        return vec![0.0; x.len()];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(member as u64));
    let normal = Normal::new(0.0, sd).expect("finite positive std");
    (0..x.len()).map(|_| normal.sample(&mut rng)).collect()
}

fn member_pair(x: &[f64], config: &AceemdConfig, member: usize) -> (Vec<f64>, Vec<f64>) {
    let noise = member_noise(x, config, member);
    let pe = x.iter().zip(&noise).map(|(v, n)| v + n).collect();
    let pm = x.iter().zip(&noise).map(|(v, n)| v - n).collect();
    (pe, pm)
}

/// The `ensemble_size` noise pairs; member `i` draws from `seed + i`.
pub fn make_noise_pairs(x: &TimeSeries, config: &AceemdConfig) -> Result<Vec<NoisePair>> {
    check_len(x)?;
    config.validate()?;
    (0..config.ensemble_size)
        .map(|i| {
            let (pe, pm) = member_pair(x, config, i);
            Ok(NoisePair { pe: x.derived(pe)?, pm: x.derived(pm)? })
        })
        .collect()
}

fn am_core_values(pe: &[f64], pm: &[f64], alpha: f64, max_iters: usize) -> Vec<f64> {
    let pe_rule = KnotRule::AnchoredEnds;
    let pm_rule = KnotRule::AnchoredWithMidpoints;
    if build_knots(pe, pe_rule).is_err() || build_knots(pm, pm_rule).is_err() {
        return vec![0.0; pe.len()];
    }
    let mut pe_h = pe.to_vec();
    let mut pm_h = pm.to_vec();
    for _ in 0..max_iters {
        let Ok(pe_mean) = mean_envelope(&pe_h, pe_rule) else {
            break;
        };
        if is_imf(&pe_h, &pe_mean) {
            break;
        }
        subtract_in_place(&mut pe_h, &pe_mean);
        // pm follows pe's iteration count; once flat it stops changing.
        if let Ok(pm_mean) = mean_envelope(&pm_h, pm_rule) {
            subtract_in_place(&mut pm_h, &pm_mean);
        }
    }
    pe_h.iter().zip(&pm_h).map(|(e, m)| alpha * e + (1.0 - alpha) * m).collect()
}

fn subtract_in_place(h: &mut [f64], mean: &[f64]) {
    for (v, m) in h.iter_mut().zip(mean) {
        *v -= m;
    }
}

/// Core of one ensemble member: lockstep sifting of the pair, blended by
/// `alpha`. A pair with either branch unsiftable yields all zeros.
pub fn am_core(pair: &NoisePair, alpha: f64, max_iters: usize) -> Result<TimeSeries> {
    if pair.pe.len() != pair.pm.len() {
        return Err(Error::invalid("noise pair branches differ in length"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    pair.pe.derived(am_core_values(&pair.pe, &pair.pm, alpha, max_iters))
}

/// Ensemble first IMF and its per-member contributions, on raw samples.
fn ensemble_imf(x: &[f64], config: &AceemdConfig, exec: Exec) -> (Vec<f64>, Vec<Vec<f64>>) {
    let members = par::map_range(exec, config.ensemble_size, |i| {
        let (pe, pm) = member_pair(x, config, i);
        am_core_values(&pe, &pm, config.alpha, config.max_iters)
    });
    // fixed member order keeps the average bit-identical across schedules
    let mut imf1 = vec![0.0; x.len()];
    for m in &members {
        for (acc, v) in imf1.iter_mut().zip(m) {
            *acc += v;
        }
    }
    let inv = config.ensemble_size as f64;
    for v in &mut imf1 {
        *v /= inv;
    }
    (imf1, members)
}

/// Removes the ensemble first IMF from `x`, returning `(imf1, r1)`.
pub fn denoise_values(x: &[f64], config: &AceemdConfig, exec: Exec) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(x)?;
    config.validate()?;
    let (imf1, _) = ensemble_imf(x, config, exec);
    let r1 = x.iter().zip(&imf1).map(|(v, i)| v - i).collect();
    Ok((imf1, r1))
}

pub fn aceemd_denoise(x: &TimeSeries, config: &AceemdConfig) -> Result<DenoiseResult> {
    aceemd_denoise_with(x, config, Exec::default())
}

pub fn aceemd_denoise_with(x: &TimeSeries, config: &AceemdConfig, exec: Exec) -> Result<DenoiseResult> {
    check_len(x)?;
    config.validate()?;
    let (imf1, members) = ensemble_imf(x, config, exec);
    let r1: Vec<f64> = x.iter().zip(&imf1).map(|(v, i)| v - i).collect();
    Ok(DenoiseResult {
        imf1: x.derived(imf1)?,
        r1: x.derived(r1)?,
        per_member_imf1: members.into_iter().map(|m| x.derived(m)).collect::<Result<_>>()?,
    })
}

/// Classical EMD denoising: the input minus its first mirrored-end IMF.
/// Returns the input unchanged when it has no IMF.
pub fn emd_denoise(x: &TimeSeries) -> Result<TimeSeries> {
    let d = emd(x, 1, DEFAULT_MAX_SIFTS)?;
    match d.imfs.first() {
        Some(imf) => x.derived(x.iter().zip(imf.values()).map(|(v, i)| v - i).collect()),
        None => Ok(x.clone()),
    }
}

/// Largest absolute difference over the first and last `k` samples.
pub fn endpoint_deviation(denoised: &[f64], reference: &[f64], k: usize) -> Result<f64> {
    if denoised.len() != reference.len() {
        return Err(Error::invalid(format!("length mismatch: {} vs {}", denoised.len(), reference.len())));
    }
    let n = denoised.len();
    if k == 0 || k > n / 2 {
        return Err(Error::invalid(format!("k must lie in 1..={} for length {n}, got {k}", n / 2)));
    }
    Ok((0..k).chain(n - k..n).map(|i| (denoised[i] - reference[i]).abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::signal::{extract_imf, pearson};

    fn ts(v: Vec<f64>) -> TimeSeries {
        TimeSeries::new(v).unwrap()
    }

    fn trend_plus_fast() -> (Vec<f64>, Vec<f64>) {
        let trend: Vec<f64> = (0..256).map(|t| t as f64 / 64.0).collect();
        let x = (0..256).map(|t| trend[t] + 0.1 * (2.0 * PI * t as f64 / 4.0).sin()).collect();
        (x, trend)
    }

    #[test]
    fn defaults() {
        let c = AceemdConfig::default();
        assert_eq!(c.ensemble_size, 5);
        assert_eq!(c.alpha, 0.5);
        assert_eq!(c.noise_scale, 0.2);
        assert_eq!(c.max_iters, 50);
    }

    #[test]
    fn config_validation() {
        let bad = [
            AceemdConfig { ensemble_size: 0, ..Default::default() },
            AceemdConfig { alpha: 1.5, ..Default::default() },
            AceemdConfig { noise_scale: -0.1, ..Default::default() },
            AceemdConfig { noise_scale: f64::NAN, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn zero_noise_pairs_equal_input() {
        let x = ts((0..32).map(|t| (t as f64).sin()).collect());
        let cfg = AceemdConfig { noise_scale: 0.0, ..Default::default() };
        for p in make_noise_pairs(&x, &cfg).unwrap() {
            assert_eq!(p.pe, x);
            assert_eq!(p.pm, x);
        }
    }

    #[test]
    fn pairs_are_opposite_and_reproducible() {
        let x = ts((0..64).map(|t| (t as f64 * 0.3).cos() * 5.0).collect());
        let cfg = AceemdConfig { seed: 99, ..Default::default() };
        let a = make_noise_pairs(&x, &cfg).unwrap();
        let b = make_noise_pairs(&x, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for p in &a {
            for i in 0..64 {
                assert!(((p.pe[i] + p.pm[i]) / 2.0 - x[i]).abs() < 1e-12);
            }
        }
        // members draw from distinct seeds
        assert_ne!(a[0].pe, a[1].pe);
    }

    #[test]
    fn alpha_one_is_the_pe_chain() {
        let x: Vec<f64> = (0..64).map(|t| (t as f64 * 0.9).sin() + 0.02 * t as f64).collect();
        let pair = NoisePair { pe: ts(x.clone()), pm: ts(x.iter().map(|v| -v).collect()) };
        let out = am_core(&pair, 1.0, 50).unwrap();
        let (expected, _) = extract_imf(&x, KnotRule::AnchoredEnds, 50).unwrap();
        assert_eq!(out.values(), &expected[..]);
    }

    #[test]
    fn blend_matches_independent_chains() {
        let x: Vec<f64> = (0..64).map(|t| (t as f64 * 1.3).sin() + 0.4 * (t as f64 * 0.2).sin()).collect();
        let pair = NoisePair { pe: ts(x.clone()), pm: ts(x.clone()) };
        let out = am_core(&pair, 0.5, 50).unwrap();

        // re-run both chains by hand: pe decides the iteration count
        let (pe_int, sifts) = extract_imf(&x, KnotRule::AnchoredEnds, 50).unwrap();
        let mut pm_int = x.clone();
        for _ in 0..sifts {
            let m = mean_envelope(&pm_int, KnotRule::AnchoredWithMidpoints).unwrap();
            for (v, mm) in pm_int.iter_mut().zip(&m) {
                *v -= mm;
            }
        }
        assert!(sifts > 0);
        for i in 0..64 {
            let want = 0.5 * pe_int[i] + 0.5 * pm_int[i];
            assert!((out[i] - want).abs() < 1e-15, "{i}: {} vs {want}", out[i]);
        }
        // different knot sets really give different chains
        assert_ne!(pe_int, pm_int);
    }

    #[test]
    fn constant_input_is_untouched() {
        let x = ts(vec![4.2; 16]);
        let pair = NoisePair { pe: x.clone(), pm: x.clone() };
        assert!(am_core(&pair, 0.5, 50).unwrap().iter().all(|v| *v == 0.0));
        let r = aceemd_denoise(&x, &AceemdConfig::default()).unwrap();
        assert!(r.imf1.iter().all(|v| *v == 0.0));
        assert_eq!(r.r1, x);
    }

    #[test]
    fn split_is_exact() {
        let (x, _) = trend_plus_fast();
        let x = ts(x);
        let r = aceemd_denoise(&x, &AceemdConfig::default()).unwrap();
        assert_eq!(r.per_member_imf1.len(), 5);
        for i in 0..x.len() {
            assert!((r.r1[i] + r.imf1[i] - x[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_noise_members_agree() {
        let (x, _) = trend_plus_fast();
        let x = ts(x);
        let cfg = AceemdConfig { noise_scale: 0.0, ensemble_size: 3, ..Default::default() };
        let r = aceemd_denoise(&x, &cfg).unwrap();
        for m in &r.per_member_imf1 {
            assert_eq!(m, &r.per_member_imf1[0]);
        }
        for i in 0..x.len() {
            assert!((r.imf1[i] - r.per_member_imf1[0][i]).abs() < 1e-15);
        }
    }

    #[test]
    fn denoising_moves_toward_the_trend() {
        let (x, trend) = trend_plus_fast();
        let r = aceemd_denoise(&ts(x.clone()), &AceemdConfig::default()).unwrap();
        let before = pearson(&x, &trend);
        let after = pearson(r.r1.values(), &trend);
        assert!(after > before, "{after} <= {before}");
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let (x, _) = trend_plus_fast();
        let x = ts(x);
        let cfg = AceemdConfig { ensemble_size: 6, seed: 3, ..Default::default() };
        let a = aceemd_denoise_with(&x, &cfg, Exec::Sequential).unwrap();
        let b = aceemd_denoise_with(&x, &cfg, Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn endpoint_deviation_examples() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(endpoint_deviation(&a, &a, 2).unwrap(), 0.0);
        let mut b = a.clone();
        b[0] += 3.0;
        assert_eq!(endpoint_deviation(&b, &a, 2).unwrap(), 3.0);
        // interior differences are ignored
        b[2] += 10.0;
        assert_eq!(endpoint_deviation(&b, &a, 2).unwrap(), 3.0);
        assert!(endpoint_deviation(&a, &a, 4).is_err());
        assert!(endpoint_deviation(&a, &a, 0).is_err());
        assert!(endpoint_deviation(&a, &a[1..], 1).is_err());
    }

    #[test]
    fn too_short_input() {
        assert!(aceemd_denoise(&ts(vec![1.0, 2.0, 1.0]), &AceemdConfig::default()).is_err());
    }
}
