//! Not-a-knot cubic spline through sensor values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise cubic interpolant; outside the knot range the end pieces are extended.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    // second derivatives at the knots
    m: Vec<f64>,
}

/// Solves a tridiagonal system in place (Thomas algorithm).
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = diag[0];
    c[0] = if n > 1 { upper[0] / d } else { 0.0 };
    rhs[0] /= d;
    for i in 1..n {
        d = diag[i] - lower[i] * c[i - 1];
        if i + 1 < n {
            c[i] = upper[i] / d;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / d;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

impl CubicSpline {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n != y.len() || n < 2 {
            return Err(Error::DimensionMismatch(format!("spline needs matching knots and values (got {n} and {})", y.len())));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("spline knots must be strictly increasing".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let mut m = vec![0.0; n];
        if n == 2 {
            return Ok(CubicSpline { x: x.to_vec(), y: y.to_vec(), m });
        }
        if n == 3 {
            // Not-a-knot with three points is the interpolating parabola.
            let d0 = (y[1] - y[0]) / h[0];
            let d1 = (y[2] - y[1]) / h[1];
            let c = 2.0 * (d1 - d0) / (h[0] + h[1]);
            return Ok(CubicSpline { x: x.to_vec(), y: y.to_vec(), m: vec![c; 3] });
        }
        let slope = |i: usize| (y[i + 1] - y[i]) / h[i];
        // Unknowns m[1..n-1]; end values eliminated by the not-a-knot conditions:
        // m0 = ((h0+h1) m1 - h0 m2) / h1 and symmetrically at the right end.
        let k = n - 2;
        let mut lo = vec![0.0; k];
        let mut di = vec![0.0; k];
        let mut up = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for r in 0..k {
            let i = r + 1;
            lo[r] = h[i - 1];
            di[r] = 2.0 * (h[i - 1] + h[i]);
            up[r] = h[i];
            rhs[r] = 6.0 * (slope(i) - slope(i - 1));
        }
        let (h0, h1) = (h[0], h[1]);
        di[0] += h0 * (h0 + h1) / h1;
        up[0] -= h0 * h0 / h1;
        let (ha, hb) = (h[n - 2], h[n - 3]);
        di[k - 1] += ha * (ha + hb) / hb;
        lo[k - 1] -= ha * ha / hb;
        solve_tridiagonal(&lo, &di, &up, &mut rhs);
        m[1..n - 1].copy_from_slice(&rhs);
        m[0] = ((h0 + h1) * m[1] - h0 * m[2]) / h1;
        m[n - 1] = ((ha + hb) * m[n - 2] - ha * m[n - 3]) / hb;
        Ok(CubicSpline { x: x.to_vec(), y: y.to_vec(), m })
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&k| k <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i] + b * self.y[i + 1] + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        (self.y[i + 1] - self.y[i]) / h + ((1.0 - 3.0 * a * a) * self.m[i] + (3.0 * b * b - 1.0) * self.m[i + 1]) * h / 6.0
    }

    pub fn eval_many(&self, ts: &[f64]) -> Vec<f64> {
        ts.iter().map(|&t| self.eval(t)).collect()
    }
}
