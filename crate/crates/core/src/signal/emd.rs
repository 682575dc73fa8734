use super::{count_extrema, is_imf, mean_envelope, std_dev, KnotRule, TimeSeries};
use crate::{Error, Result};

pub const DEFAULT_MAX_IMFS: usize = 10;
pub const DEFAULT_MAX_SIFTS: usize = 50;
/// Residues whose std falls below this fraction of the input's are treated
/// as flat and end the decomposition.
const FLAT_RESIDUE: f64 = 1e-10;

/// IMFs (finest first) plus the final residue.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub imfs: Vec<TimeSeries>,
    pub residue: TimeSeries,
}

impl Decomposition {
    /// Element-wise sum of every IMF and the residue.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut out = self.residue.values().to_vec();
        for imf in &self.imfs {
            for (o, v) in out.iter_mut().zip(imf.values()) {
                *o += v;
            }
        }
        out
    }
}

/// Sifts `series` until the candidate passes [`is_imf`] or `max_sifts`
/// subtractions have been made. Returns the IMF and the number of sifts.
///
/// Fails with [`Error::NotSiftable`] only if the input itself cannot be
/// sifted; a candidate that loses its extrema mid-way is returned as is.
pub fn extract_imf(series: &[f64], rule: KnotRule, max_sifts: usize) -> Result<(Vec<f64>, usize)> {
    let mut h = series.to_vec();
    let mut sifts = 0;
    while sifts < max_sifts {
        let mean = match mean_envelope(&h, rule) {
            Ok(m) => m,
            Err(e @ Error::NotSiftable { .. }) if sifts == 0 => return Err(e),
            Err(Error::NotSiftable { .. }) => break,
            Err(e) => return Err(e),
        };
        if is_imf(&h, &mean) {
            break;
        }
        for (v, m) in h.iter_mut().zip(&mean) {
            *v -= m;
        }
        sifts += 1;
    }
    Ok((h, sifts))
}

/// Classical EMD with mirrored-extremum end conditions.
pub fn emd(series: &TimeSeries, max_imfs: usize, max_sifts: usize) -> Result<Decomposition> {
    emd_with(series, KnotRule::MirroredEnds, max_imfs, max_sifts)
}

/// EMD under an arbitrary envelope knot rule.
pub fn emd_with(series: &TimeSeries, rule: KnotRule, max_imfs: usize, max_sifts: usize) -> Result<Decomposition> {
    if series.len() < 4 {
        return Err(Error::invalid(format!("EMD needs at least 4 samples, got {}", series.len())));
    }
    let mut residue = series.values().to_vec();
    let mut imfs = Vec::new();
    // a residue flattened to rounding noise has spurious extrema
    let flat = FLAT_RESIDUE * std_dev(series.values());
    while imfs.len() < max_imfs && count_extrema(&residue) >= 2 && std_dev(&residue) > flat {
        let imf = match extract_imf(&residue, rule, max_sifts) {
            Ok((imf, _)) => imf,
            Err(Error::NotSiftable { .. }) => break,
            Err(e) => return Err(e),
        };
        for (r, v) in residue.iter_mut().zip(&imf) {
            *r -= v;
        }
        imfs.push(series.derived(imf)?);
    }
    Ok(Decomposition { imfs, residue: series.derived(residue)? })
}
