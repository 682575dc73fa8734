use super::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Conv1d { x: Var, w: Var, b: Option<Var> },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    Softmax(Var),
    Elu(Var, f64),
    LayerNorm { x: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Mse(Var, Var),
    Slice { x: Var, axis: usize, start: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Transpose(Var),
    Mean { x: Var, axis: usize },
    Sum(Var),
    Reshape(Var),
    StraightThrough(Var),
    SelectRows { selected: Var, fallback: Var, mask: Vec<bool> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation tape. Nodes are appended in evaluation order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

/// `(outer, axis_len, inner)` split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss with respect to `v`; zeros when
    /// `v` did not influence the loss.
    pub fn grad(&self, v: Var) -> Vec<f64> {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => vec![0.0; self.nodes[v.0].value.len()],
        }
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch { op, left: self.shape(a).to_vec(), right: self.shape(b).to_vec() }
    }

    /// `(m, k) x (k, n) -> (m, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(self.mismatch("matmul", a, b));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, bj) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                    *o += aip * bj;
                }
            }
        }
        let t = Tensor::new(vec![m, n], out)?;
        self.push_op("matmul", t, Op::MatMul(a, b), &[a, b])
    }

    /// `b`'s shape must equal `a`'s or a suffix of it (broadcast over the
    /// leading axes).
    fn broadcast_reps(&self, op: &'static str, a: Var, b: Var) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(self.mismatch(op, a, b));
        }
        Ok(self.value(a).len() / self.value(b).len().max(1))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_reps("add", a, b)?;
        let bl = self.value(b).len();
        let bv = self.value(b).data();
        let out: Vec<f64> = self.value(a).data().iter().enumerate().map(|(i, x)| x + bv[i % bl]).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push_op("add", t, Op::Add(a, b), &[a, b])
    }

    /// Element-wise product with the same broadcasting as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_reps("mul", a, b)?;
        let bl = self.value(b).len();
        let bv = self.value(b).data();
        let out: Vec<f64> = self.value(a).data().iter().enumerate().map(|(i, x)| x * bv[i % bl]).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push_op("mul", t, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).data().iter().map(|x| x * s).collect();
        let t = Tensor::new(self.shape(a).to_vec(), out)?;
        self.push_op("scale", t, Op::Scale(a, s), &[a])
    }

    /// Same-length 1-D convolution along the time axis with zero padding.
    ///
    /// `x: (L, C_in)`, `w: (C_out, C_in, K)` with odd `K`, optional
    /// `b: (C_out)`; output `(L, C_out)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 3 || sw[1] != sx[1] || sw[2] % 2 == 0 {
            return Err(self.mismatch("conv1d", x, w));
        }
        let (len, cin, cout, k) = (sx[0], sx[1], sw[0], sw[2]);
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(self.mismatch("conv1d bias", w, b));
            }
        }
        let pad = k / 2;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut out = vec![0.0; len * cout];
        for t in 0..len {
            for o in 0..cout {
                let mut acc = b.map_or(0.0, |b| self.value(b).data()[o]);
                for j in 0..k {
                    let Some(src) = (t + j).checked_sub(pad).filter(|s| *s < len) else {
                        continue;
                    };
                    for c in 0..cin {
                        acc += wv[(o * cin + c) * k + j] * xv[src * cin + c];
                    }
                }
                out[t * cout + o] = acc;
            }
        }
        let t = Tensor::new(vec![len, cout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push_op("conv1d", t, Op::Conv1d { x, w, b }, &inputs)
    }

    /// Non-overlapping `kh x kw` max pooling of a 2-D tensor. Both axes must
    /// divide evenly; ties route to the first maximum in row-major order.
    pub fn maxpool2d(&mut self, x: Var, kh: usize, kw: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || kh == 0 || kw == 0 || !sx[0].is_multiple_of(kh) || !sx[1].is_multiple_of(kw) {
            return Err(Error::ShapeMismatch { op: "maxpool2d", left: sx.to_vec(), right: vec![kh, kw] });
        }
        let (h, w) = (sx[0], sx[1]);
        let (oh, ow) = (h / kh, w / kw);
        let xv = self.value(x).data();
        let mut out = vec![0.0; oh * ow];
        let mut argmax = vec![0; oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                let mut best = i * kh * w + j * kw;
                for m in 0..kh {
                    for n in 0..kw {
                        let idx = (i * kh + m) * w + j * kw + n;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                }
                out[i * ow + j] = xv[best];
                argmax[i * ow + j] = best;
            }
        }
        let t = Tensor::new(vec![oh, ow], out)?;
        self.push_op("maxpool2d", t, Op::MaxPool2d { x, argmax }, &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let w = v.last_dim();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(w) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for e in row.iter_mut() {
                *e = (*e - mx).exp();
                sum += *e;
            }
            for e in row.iter_mut() {
                *e /= sum;
            }
        }
        let t = Tensor::new(v.shape().to_vec(), out)?;
        self.push_op("softmax", t, Op::Softmax(x), &[x])
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        let v = self.value(x);
        let out = v.data().iter().map(|&e| if e > 0.0 { e } else { alpha * e.exp_m1() }).collect();
        let t = Tensor::new(v.shape().to_vec(), out)?;
        self.push_op("elu", t, Op::Elu(x, alpha), &[x])
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let v = self.value(x);
        let w = v.last_dim();
        let mut xhat = v.data().to_vec();
        let mut inv_std = Vec::with_capacity(v.len() / w.max(1));
        for row in xhat.chunks_mut(w) {
            let mean = row.iter().sum::<f64>() / w as f64;
            let var = row.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / w as f64;
            let is = 1.0 / (var + eps).sqrt();
            for e in row.iter_mut() {
                *e = (*e - mean) * is;
            }
            inv_std.push(is);
        }
        let t = Tensor::new(v.shape().to_vec(), xhat.clone())?;
        self.push_op("layer_norm", t, Op::LayerNorm { x, xhat, inv_std }, &[x])
    }

    /// Mean squared error, returned as a scalar.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(self.mismatch("mse_loss", pred, target));
        }
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let n = p.len().max(1) as f64;
        let loss = p.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
        self.push_op("mse_loss", Tensor::scalar(loss), Op::Mse(pred, target), &[pred, target])
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::ShapeMismatch { op: "slice", left: shape, right: vec![axis, start, end] });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            out.extend_from_slice(&xv[base + start * inner..base + end * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = end - start;
        let t = Tensor::new(new_shape, out)?;
        self.push_op("slice", t, Op::Slice { x, axis, start }, &[x])
    }

    /// Concatenation along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(self.mismatch("concat", first, first));
        }
        for &p in &parts[1..] {
            let s = self.shape(p);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(self.mismatch("concat", first, p));
            }
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let total: usize = parts.iter().map(|&p| self.shape(p)[axis]).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let pv = self.value(p).data();
                out.extend_from_slice(&pv[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, out)?;
        self.push_op("concat", t, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(self.mismatch("transpose", x, x));
        }
        let (r, c) = (s[0], s[1]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        let t = Tensor::new(vec![c, r], out)?;
        self.push_op("transpose", t, Op::Transpose(x), &[x])
    }

    /// Mean along `axis`, keeping it with size 1.
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(self.mismatch("mean", x, x));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += xv[(o * len + a) * inner + i];
                }
            }
        }
        for e in &mut out {
            *e /= len as f64;
        }
        let mut new_shape = shape;
        new_shape[axis] = 1;
        let t = Tensor::new(new_shape, out)?;
        self.push_op("mean", t, Op::Mean { x, axis }, &[x])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push_op("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.len() {
            return Err(Error::ShapeMismatch { op: "reshape", left: v.shape().to_vec(), right: shape.to_vec() });
        }
        let t = Tensor::new(shape.to_vec(), v.data().to_vec())?;
        self.push_op("reshape", t, Op::Reshape(x), &[x])
    }

    /// Replaces `x`'s forward value with `value` while passing gradients
    /// through unchanged (identity Jacobian).
    pub fn straight_through(&mut self, x: Var, value: Tensor) -> Result<Var> {
        if value.shape() != self.shape(x) {
            return Err(Error::ShapeMismatch {
                op: "straight_through",
                left: self.shape(x).to_vec(),
                right: value.shape().to_vec(),
            });
        }
        self.push_op("straight_through", value, Op::StraightThrough(x), &[x])
    }

    /// Row `i` of the output is `selected[i]` where `mask[i]`, otherwise the
    /// single row of `fallback` (shape `(1, d)`).
    pub fn select_rows(&mut self, selected: Var, fallback: Var, mask: &[bool]) -> Result<Var> {
        let (ss, sf) = (self.shape(selected), self.shape(fallback));
        if ss.len() != 2 || sf != [1, ss[1]] || mask.len() != ss[0] {
            return Err(self.mismatch("select_rows", selected, fallback));
        }
        let d = ss[1];
        let fb = self.value(fallback).data();
        let sv = self.value(selected).data();
        let mut out = Vec::with_capacity(sv.len());
        for (i, &keep) in mask.iter().enumerate() {
            out.extend_from_slice(if keep { &sv[i * d..(i + 1) * d] } else { fb });
        }
        let t = Tensor::new(ss.to_vec(), out)?;
        self.push_op(
            "select_rows",
            t,
            Op::SelectRows { selected, fallback, mask: mask.to_vec() },
            &[selected, fallback],
        )
    }

    /// Reverse sweep from a scalar `loss`. Gradients from an earlier call are
    /// discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: impl IntoIterator<Item = (usize, f64)>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let g = self.grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        for (i, d) in delta {
            g[i] += d;
        }
    }

    fn accumulate_all(&mut self, v: Var, delta: &[f64]) {
        self.accumulate(v, delta.iter().copied().enumerate());
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                let av = self.value(a).data().to_vec();
                let bv = self.value(b).data().to_vec();
                let mut da = vec![0.0; m * k];
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * bv[p * n + j];
                            db[p * n + j] += av[i * k + p] * g[i * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                self.accumulate_all(a, &da);
                self.accumulate_all(b, &db);
            }
            Op::Add(a, b) => {
                self.accumulate_all(a, g);
                let bl = self.value(b).len();
                self.accumulate(b, g.iter().enumerate().map(|(i, d)| (i % bl, *d)));
            }
            Op::Mul(a, b) => {
                let bl = self.value(b).len();
                let av = self.value(a).data().to_vec();
                let bv = self.value(b).data().to_vec();
                self.accumulate(a, g.iter().enumerate().map(|(i, d)| (i, d * bv[i % bl])));
                self.accumulate(b, g.iter().enumerate().map(|(i, d)| (i % bl, d * av[i])));
            }
            Op::Scale(a, s) => {
                self.accumulate(a, g.iter().map(|d| d * s).enumerate());
            }
            Op::Conv1d { x, w, b } => {
                let (len, cin) = (self.shape(x)[0], self.shape(x)[1]);
                let (cout, k) = (self.shape(w)[0], self.shape(w)[2]);
                let pad = k / 2;
                let xv = self.value(x).data().to_vec();
                let wv = self.value(w).data().to_vec();
                let mut dx = vec![0.0; xv.len()];
                let mut dw = vec![0.0; wv.len()];
                let mut db = vec![0.0; cout];
                for t in 0..len {
                    for o in 0..cout {
                        let go = g[t * cout + o];
                        db[o] += go;
                        for j in 0..k {
                            let Some(src) = (t + j).checked_sub(pad).filter(|s| *s < len) else {
                                continue;
                            };
                            for c in 0..cin {
                                let wi = (o * cin + c) * k + j;
                                dx[src * cin + c] += wv[wi] * go;
                                dw[wi] += xv[src * cin + c] * go;
                            }
                        }
                    }
                }
                self.accumulate_all(x, &dx);
                self.accumulate_all(w, &dw);
                if let Some(b) = b {
                    self.accumulate_all(b, &db);
                }
            }
            Op::MaxPool2d { x, argmax } => {
                self.accumulate(x, argmax.iter().zip(g).map(|(&i, &d)| (i, d)));
            }
            Op::Softmax(x) => {
                let y = self.nodes[idx].value.data().to_vec();
                let w = self.nodes[idx].value.last_dim();
                let mut dx = vec![0.0; y.len()];
                for ((dr, yr), gr) in dx.chunks_mut(w).zip(y.chunks(w)).zip(g.chunks(w)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, yi), gi) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yi * (gi - dot);
                    }
                }
                self.accumulate_all(x, &dx);
            }
            Op::Elu(x, alpha) => {
                let xv = self.value(x).data().to_vec();
                let y = self.nodes[idx].value.data().to_vec();
                self.accumulate(
                    x,
                    g.iter().enumerate().map(|(i, d)| (i, if xv[i] > 0.0 { *d } else { d * (y[i] + alpha) })),
                );
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let w = self.value(x).last_dim();
                let mut dx = vec![0.0; xhat.len()];
                for (r, is) in inv_std.iter().enumerate() {
                    let rows = r * w..(r + 1) * w;
                    let (gr, xr) = (&g[rows.clone()], &xhat[rows.clone()]);
                    let mg = gr.iter().sum::<f64>() / w as f64;
                    let mgx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / w as f64;
                    for ((d, gi), xi) in dx[rows].iter_mut().zip(gr).zip(xr) {
                        *d = is * (gi - mg - xi * mgx);
                    }
                }
                self.accumulate_all(x, &dx);
            }
            Op::Mse(p, t) => {
                let pv = self.value(p).data().to_vec();
                let tv = self.value(t).data().to_vec();
                let n = pv.len().max(1) as f64;
                let d: Vec<f64> = pv.iter().zip(&tv).map(|(a, b)| 2.0 * (a - b) / n * g[0]).collect();
                self.accumulate_all(p, &d);
                self.accumulate(t, d.iter().map(|v| -v).enumerate());
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(x).to_vec();
                let (outer, len, inner) = split_axis(&shape, axis);
                let width = g.len() / (outer * inner).max(1);
                let mut pairs = Vec::with_capacity(g.len());
                for o in 0..outer {
                    for a in 0..width {
                        for i in 0..inner {
                            let src = (o * width + a) * inner + i;
                            pairs.push(((o * len + start + a) * inner + i, g[src]));
                        }
                    }
                }
                self.accumulate(x, pairs);
            }
            Op::Concat { parts, axis } => {
                let shape = self.nodes[idx].value.shape().to_vec();
                let (outer, total, inner) = split_axis(&shape, axis);
                let mut offset = 0;
                for p in parts {
                    let len = self.shape(p)[axis];
                    let mut d = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&g[base..base + len * inner]);
                    }
                    self.accumulate_all(p, &d);
                    offset += len;
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(x)[0], self.shape(x)[1]);
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = g[j * r + i];
                    }
                }
                self.accumulate_all(x, &d);
            }
            Op::Mean { x, axis } => {
                let shape = self.shape(x).to_vec();
                let (outer, len, inner) = split_axis(&shape, axis);
                let mut d = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            d[(o * len + a) * inner + i] = g[o * inner + i] / len as f64;
                        }
                    }
                }
                self.accumulate_all(x, &d);
            }
            Op::Sum(x) => {
                let n = self.value(x).len();
                self.accumulate(x, (0..n).map(|i| (i, g[0])));
            }
            Op::Reshape(x) | Op::StraightThrough(x) => self.accumulate_all(x, g),
            Op::SelectRows { selected, fallback, mask } => {
                let d = self.shape(selected)[1];
                let mut ds = vec![0.0; g.len()];
                let mut df = vec![0.0; d];
                for (i, &keep) in mask.iter().enumerate() {
                    let gr = &g[i * d..(i + 1) * d];
                    if keep {
                        ds[i * d..(i + 1) * d].copy_from_slice(gr);
                    } else {
                        for (f, v) in df.iter_mut().zip(gr) {
                            *f += v;
                        }
                    }
                }
                self.accumulate_all(selected, &ds);
                self.accumulate_all(fallback, &df);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Checks d(sum(op(inputs) * weights))/d(inputs) against central
    /// differences with h = 1e-5.
    fn check_op<F>(seed: u64, shapes: &[&[usize]], op: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(&mut rng, s)).collect();
        let eval = |ins: &[Tensor], weights: Option<&Tensor>| -> (f64, Vec<Vec<f64>>, Tensor) {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
            let out = op(&mut g, &vars).unwrap();
            let w = weights.cloned().unwrap_or_else(|| {
                let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
                rand_tensor(&mut r, g.shape(out))
            });
            let wv = g.constant(w.clone());
            let prod = g.mul(out, wv).unwrap();
            let loss = g.sum(prod).unwrap();
            let lv = g.value(loss).item().unwrap();
            g.backward(loss).unwrap();
            (lv, vars.iter().map(|&v| g.grad(v)).collect(), w)
        };
        let (_, analytic, w) = eval(&inputs, None);
        let h = 1e-5;
        for (k, t) in inputs.iter().enumerate() {
            for i in 0..t.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let numeric = (eval(&plus, Some(&w)).0 - eval(&minus, Some(&w)).0) / (2.0 * h);
                let a = analytic[k][i];
                let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                assert!(rel < 1e-4, "input {k}[{i}]: analytic {a} numeric {numeric} (seed {seed})");
            }
        }
    }

    #[test]
    fn matmul_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, &[3, 3]);
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(3));
        let av = g.constant(a.clone());
        let out = g.matmul(i, av).unwrap();
        assert_eq!(g.value(out), &a);
    }

    #[test]
    fn softmax_uniform_row() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::filled(&[2, 4], 3.7));
        let y = g.softmax(x).unwrap();
        assert!(g.value(y).data().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"), "{err}");
        assert!(matches!(err, Error::ShapeMismatch { op: "matmul", .. }));
        let c = g.constant(Tensor::zeros(&[3, 2]));
        assert!(g.add(a, c).is_err());
        assert!(g.maxpool2d(a, 2, 2).is_err());
        assert_eq!(g.len(), 3, "failed ops must not touch the tape");
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::filled(&[2], 1e308));
        assert!(matches!(g.scale(a, 10.0), Err(Error::NonFinite { op: "scale" })));
    }

    #[test]
    fn backward_basics() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap());
        let unused = g.param(Tensor::zeros(&[3]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), vec![1.0; 4]);
        assert_eq!(g.grad(unused), vec![0.0; 3]);

        let mut g = Graph::new();
        let x = g.param(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let l = g.mse_loss(x, x).unwrap();
        g.backward(l).unwrap();
        assert_eq!(g.grad(x), vec![0.0; 3]);

        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn maxpool_ties_route_to_first() {
        let mut g = Graph::new();
        let x = g.param(Tensor::filled(&[2, 2], 1.0));
        let p = g.maxpool2d(x, 2, 2).unwrap();
        let s = g.sum(p).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn select_rows_forward() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let f = g.constant(Tensor::from_rows(&[vec![9.0, 8.0]]).unwrap());
        let out = g.select_rows(a, f, &[false, true]).unwrap();
        assert_eq!(g.value(out).data(), &[9.0, 8.0, 3.0, 4.0]);
    }

    #[test]
    fn slice_concat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = rand_tensor(&mut rng, &[3, 5]);
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let a = g.slice(x, 1, 0, 2).unwrap();
        let b = g.slice(x, 1, 2, 5).unwrap();
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c), &t);
    }

    #[test]
    fn gradient_checks() {
        for seed in 0..20 {
            check_op(seed, &[&[3, 4], &[4, 2]], |g, v| g.matmul(v[0], v[1]));
            check_op(seed, &[&[3, 4], &[4]], |g, v| g.add(v[0], v[1]));
            check_op(seed, &[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1]));
            check_op(seed, &[&[2, 3, 4], &[4]], |g, v| g.mul(v[0], v[1]));
            check_op(seed, &[&[5]], |g, v| g.scale(v[0], -1.7));
            check_op(seed, &[&[6, 3], &[4, 3, 3], &[4]], |g, v| g.conv1d(v[0], v[1], Some(v[2])));
            check_op(seed, &[&[5, 2], &[3, 2, 5]], |g, v| g.conv1d(v[0], v[1], None));
            check_op(seed, &[&[4, 6]], |g, v| g.maxpool2d(v[0], 2, 2));
            check_op(seed, &[&[4, 6]], |g, v| g.maxpool2d(v[0], 2, 1));
            check_op(seed, &[&[3, 5]], |g, v| g.softmax(v[0]));
            check_op(seed, &[&[3, 5]], |g, v| g.elu(v[0], 1.0));
            check_op(seed, &[&[3, 5]], |g, v| g.layer_norm(v[0], 1e-5));
            check_op(seed, &[&[3, 2], &[3, 2]], |g, v| g.mse_loss(v[0], v[1]));
            check_op(seed, &[&[4, 5]], |g, v| g.slice(v[0], 1, 1, 4));
            check_op(seed, &[&[4, 5]], |g, v| g.slice(v[0], 0, 2, 4));
            check_op(seed, &[&[2, 3], &[2, 2]], |g, v| g.concat(&[v[0], v[1]], 1));
            check_op(seed, &[&[2, 3], &[1, 3]], |g, v| g.concat(&[v[0], v[1]], 0));
            check_op(seed, &[&[3, 4]], |g, v| g.transpose(v[0]));
            check_op(seed, &[&[3, 4]], |g, v| g.mean(v[0], 0));
            check_op(seed, &[&[3, 4]], |g, v| g.mean(v[0], 1));
            check_op(seed, &[&[3, 4]], |g, v| g.sum(v[0]));
            check_op(seed, &[&[3, 4]], |g, v| g.reshape(v[0], &[12]));
            check_op(seed, &[&[3, 2], &[1, 2]], |g, v| g.select_rows(v[0], v[1], &[true, false, true]));
        }
    }

    #[test]
    fn composite_graph_gradient() {
        for seed in 0..20 {
            check_op(seed, &[&[4, 3], &[3, 3], &[3]], |g, v| {
                let h = g.matmul(v[0], v[1])?;
                let h = g.add(h, v[2])?;
                let h = g.layer_norm(h, 1e-5)?;
                let t = g.transpose(h)?;
                let s = g.matmul(h, t)?;
                let s = g.softmax(s)?;
                let o = g.matmul(s, v[0])?;
                g.elu(o, 1.0)
            });
        }
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut g = Graph::new();
            let a = g.param(rand_tensor(&mut rng, &[4, 4]));
            let s = g.softmax(a).unwrap();
            let m = g.matmul(s, a).unwrap();
            let l = g.sum(m).unwrap();
            g.backward(l).unwrap();
            (g.value(l).clone(), g.grad(a))
        };
        assert_eq!(run(), run());
    }
}
