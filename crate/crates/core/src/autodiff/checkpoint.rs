//! Named-tensor checkpoints as line-oriented text.
//!
//! ```text
//! aceformer-checkpoint 1
//! meta <key> <value...>
//! tensor <name> <rank> <dim>...
//! <value> <value> ...
//! ```
//!
//! Values use Rust's shortest round-trip `{:e}` formatting, so reading a file
//! back reproduces every `f64` bit for bit.

use std::io::{BufRead, Write};

use super::Tensor;
use crate::{Error, Result};

const MAGIC: &str = "aceformer-checkpoint 1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::Checkpoint(format!("{kind} {s:?} must be a non-empty token without whitespace")));
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    writeln!(w, "{MAGIC}")?;
    for (k, v) in &ckpt.meta {
        check_token("meta key", k)?;
        if v.contains('\n') {
            return Err(Error::Checkpoint(format!("meta value for {k} spans lines")));
        }
        writeln!(w, "meta {k} {v}")?;
    }
    for (name, t) in &ckpt.tensors {
        check_token("tensor name", name)?;
        write!(w, "tensor {name} {}", t.rank())?;
        for d in t.shape() {
            write!(w, " {d}")?;
        }
        writeln!(w)?;
        let mut first = true;
        for v in t.data() {
            if !v.is_finite() {
                return Err(Error::Checkpoint(format!("non-finite value in {name}")));
            }
            if !first {
                w.write_all(b" ")?;
            }
            write!(w, "{v:e}")?;
            first = false;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Checkpoint> {
    let mut lines = r.lines().enumerate();
    let bad = |line: usize, msg: String| Error::Parse { line: line + 1, msg };
    match lines.next() {
        Some((_, Ok(l))) if l.trim_end() == MAGIC => {}
        Some((_, Err(e))) => return Err(e.into()),
        _ => return Err(Error::Checkpoint(format!("missing header {MAGIC:?}"))),
    }
    let mut ckpt = Checkpoint::default();
    while let Some((no, line)) = lines.next() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        match parts.next() {
            Some("meta") => {
                let key = parts.next().ok_or_else(|| bad(no, "meta without key".into()))?;
                let value = parts.collect::<Vec<_>>().join(" ");
                ckpt.meta.push((key.to_string(), value));
            }
            Some("tensor") => {
                let name = parts.next().ok_or_else(|| bad(no, "tensor without name".into()))?;
                let nums: Vec<usize> = parts
                    .map(|p| p.parse().map_err(|e| bad(no, format!("bad dimension {p:?}: {e}"))))
                    .collect::<Result<_>>()?;
                let (&rank, dims) = nums.split_first().ok_or_else(|| bad(no, "tensor without rank".into()))?;
                if dims.len() != rank {
                    return Err(bad(no, format!("rank {rank} but {} dimensions", dims.len())));
                }
                let (dno, data) = lines.next().ok_or_else(|| bad(no, format!("tensor {name} has no data line")))?;
                let data = data?;
                let values: Vec<f64> = if data.trim().is_empty() {
                    Vec::new()
                } else {
                    data.split(' ')
                        .map(|v| v.parse().map_err(|e| bad(dno, format!("bad value {v:?}: {e}"))))
                        .collect::<Result<_>>()?
                };
                let t = Tensor::new(dims.to_vec(), values).map_err(|e| bad(dno, e.to_string()))?;
                ckpt.tensors.push((name.to_string(), t));
            }
            Some(other) => return Err(bad(no, format!("unknown record {other:?}"))),
            None => {}
        }
    }
    Ok(ckpt)
}
