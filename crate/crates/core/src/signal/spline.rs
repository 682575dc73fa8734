use super::KnotSet;
use crate::{Error, Result};

/// Natural cubic spline (zero second derivative at both end knots).
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivative at each knot.
    m: Vec<f64>,
}

impl NaturalSpline {
    pub fn new(knots: &KnotSet) -> Result<Self> {
        let x: Vec<f64> = knots.indices().iter().map(|&i| i as f64).collect();
        Self::from_points(x, knots.values().to_vec())
    }

    /// Spline through arbitrary strictly increasing abscissae.
    pub fn from_points(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::invalid(format!(
                "spline needs at least 2 knots with matching ordinates (got {n} / {})",
                y.len()
            )));
        }
        if x.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("spline abscissae must be strictly increasing"));
        }
        let m = solve_second_derivatives(&x, &y);
        Ok(Self { x, y, m })
    }

    pub fn first(&self) -> f64 {
        self.x[0]
    }

    pub fn last(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    pub fn eval(&self, q: f64) -> Result<f64> {
        if !(q >= self.first() && q <= self.last()) {
            return Err(Error::OutOfKnotRange { query: q, first: self.first(), last: self.last() });
        }
        // segment i with x[i] <= q <= x[i + 1]
        let i = (self.x.partition_point(|&xi| xi <= q) - 1).min(self.x.len() - 2);
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        if q == x0 {
            return Ok(self.y[i]);
        }
        if q == x1 {
            return Ok(self.y[i + 1]);
        }
        let h = x1 - x0;
        let (a, b) = (x1 - q, q - x0);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        Ok(m0 * a.powi(3) / (6.0 * h)
            + m1 * b.powi(3) / (6.0 * h)
            + (self.y[i] / h - m0 * h / 6.0) * a
            + (self.y[i + 1] / h - m1 * h / 6.0) * b)
    }

    /// Evaluates at every integer abscissa from the first to the last knot.
    pub fn sample_grid(&self) -> Vec<f64> {
        let (lo, hi) = (self.first() as usize, self.last() as usize);
        (lo..=hi).map(|i| self.eval(i as f64).expect("grid lies within knot range")).collect()
    }
}

/// Thomas algorithm on the symmetric tridiagonal system for interior second
/// derivatives; the natural end conditions pin both ends to zero.
fn solve_second_derivatives(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let k = n - 2;
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let mut diag = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for j in 0..k {
        let i = j + 1;
        diag[j] = 2.0 * (h[i - 1] + h[i]);
        rhs[j] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
    }
    // forward sweep; off-diagonal entries are h[j] (upper) and h[j] (lower, row j + 1)
    for j in 1..k {
        let w = h[j] / diag[j - 1];
        diag[j] -= w * h[j];
        rhs[j] -= w * rhs[j - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for j in (0..k - 1).rev() {
        m[j + 1] = (rhs[j] - h[j + 1] * m[j + 2]) / diag[j];
    }
    m
}

/// Evaluates the natural spline through `knots` at integer `query` indices.
pub fn cubic_spline_eval(knots: &KnotSet, query: &[usize]) -> Result<Vec<f64>> {
    let spline = NaturalSpline::new(knots)?;
    query.iter().map(|&q| spline.eval(q as f64)).collect()
}
