//! Graph-level building blocks: positional encoding and attention.

use crate::autodiff::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Sinusoidal encoding: column `2i` is `sin(pos / 10000^(2i/width))`, column
/// `2i + 1` the matching cosine.
pub fn positional_encoding(length: usize, width: usize) -> Tensor {
    let mut data = Vec::with_capacity(length * width);
    for pos in 0..length {
        for j in 0..width {
            let i = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * i / width as f64);
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![length, width], data).expect("length * width elements")
}

/// Number of queries that receive full attention:
/// `ceil(factor * ln(l_q))`, clamped to `1..=l_q`.
pub fn active_query_count(l_q: usize, factor: f64) -> usize {
    if l_q == 0 {
        return 0;
    }
    let u = (factor * (l_q as f64).ln()).ceil();
    (u.max(1.0) as usize).min(l_q)
}

/// Sparsity score per query row: max minus mean of its scaled scores.
pub fn sparsity_scores(scores: &Tensor) -> Vec<f64> {
    let w = scores.last_dim();
    scores
        .data()
        .chunks(w)
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max - row.iter().sum::<f64>() / w as f64
        })
        .collect()
}

/// Mask of the `u` queries with the largest sparsity score; ties go to the
/// lower index.
pub fn top_query_mask(scores: &[f64], u: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut mask = vec![false; scores.len()];
    for &i in order.iter().take(u) {
        mask[i] = true;
    }
    mask
}

fn check_qkv(g: &Graph, q: Var, k: Var, v: Var) -> Result<()> {
    let (sq, sk, sv) = (g.shape(q), g.shape(k), g.shape(v));
    if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 || sq[1] != sk[1] || sk[0] != sv[0] {
        return Err(Error::ShapeMismatch { op: "attention", left: [sq, sk].concat(), right: sv.to_vec() });
    }
    Ok(())
}

fn scaled_scores(g: &mut Graph, q: Var, k: Var) -> Result<Var> {
    let d = g.shape(q)[1] as f64;
    let kt = g.transpose(k)?;
    let s = g.matmul(q, kt)?;
    g.scale(s, 1.0 / d.sqrt())
}

/// `softmax(q k^T / sqrt(d)) v`.
pub fn full_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    check_qkv(g, q, k, v)?;
    let s = scaled_scores(g, q, k)?;
    let a = g.softmax(s)?;
    g.matmul(a, v)
}

/// Probability (ProbSparse) attention over all keys.
///
/// The [`active_query_count`] queries with the highest sparsity score get
/// full softmax attention; every other query outputs the key-axis mean of
/// `v`. Query selection is a discrete choice and carries no gradient.
pub fn prob_attention(g: &mut Graph, q: Var, k: Var, v: Var, factor: f64) -> Result<Var> {
    check_qkv(g, q, k, v)?;
    if !(factor > 0.0) {
        return Err(Error::invalid(format!("sparsity factor must be positive, got {factor}")));
    }
    let s = scaled_scores(g, q, k)?;
    let l_q = g.shape(q)[0];
    let u = active_query_count(l_q, factor);
    let mask = top_query_mask(&sparsity_scores(g.value(s)), u);
    let a = g.softmax(s)?;
    let full = g.matmul(a, v)?;
    let mean_v = g.mean(v, 0)?;
    g.select_rows(full, mean_v, &mask)
}

/// Which attention kernel a multi-head block uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttentionKind {
    Full,
    Prob { factor: f64 },
}

/// Projection weights of a multi-head self-attention block (no biases).
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Multi-head self-attention on `x: (L, d)`; heads split the projected
/// feature axis evenly.
pub fn multi_head_self_attention(
    g: &mut Graph,
    x: Var,
    w: AttentionWeights,
    n_heads: usize,
    kind: AttentionKind,
) -> Result<Var> {
    let d = g.shape(w.wq)[1];
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(Error::invalid(format!("{d} features do not split into {n_heads} heads")));
    }
    let q = g.matmul(x, w.wq)?;
    let k = g.matmul(x, w.wk)?;
    let v = g.matmul(x, w.wv)?;
    let hd = d / n_heads;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * hd, (h + 1) * hd);
        let (qh, kh, vh) = if n_heads == 1 {
            (q, k, v)
        } else {
            (g.slice(q, 1, lo, hi)?, g.slice(k, 1, lo, hi)?, g.slice(v, 1, lo, hi)?)
        };
        heads.push(match kind {
            AttentionKind::Full => full_attention(g, qh, kh, vh)?,
            AttentionKind::Prob { factor } => prob_attention(g, qh, kh, vh, factor)?,
        });
    }
    let merged = if n_heads == 1 { heads[0] } else { g.concat(&heads, 1)? };
    g.matmul(merged, w.wo)
}
