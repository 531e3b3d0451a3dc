//! Adam and L-BFGS over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bias-corrected Adam state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// One Adam update with an explicit learning rate.
pub fn adam_step(state: &mut Adam, params: &mut [f64], grad: &[f64], lr: f64) {
    state.lr = lr;
    state.step(params, grad);
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub history: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { history: 10, max_iters: 500, grad_tol: 1e-9, c1: 1e-4, max_backtracks: 50 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LbfgsReport {
    pub iterations: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub converged: bool,
    /// Iterations where the quasi-Newton line search failed and a steepest-descent step was taken.
    pub fallback_steps: Vec<usize>,
    pub loss_history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Backtracking Armijo search along `dir`; returns the accepted step and the new point.
fn backtrack<F>(f: &mut F, x: &[f64], fx: f64, gx: &[f64], dir: &[f64], step0: f64, opts: &LbfgsOptions) -> Option<(Vec<f64>, f64, Vec<f64>)>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let slope = dot(gx, dir);
    if !(slope < 0.0) {
        return None;
    }
    let mut step = step0;
    for _ in 0..opts.max_backtracks {
        let trial: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + step * di).collect();
        let (ft, gt) = f(&trial);
        if ft.is_finite() && ft <= fx + opts.c1 * step * slope {
            return Some((trial, ft, gt));
        }
        step *= 0.5;
    }
    None
}

/// Limited-memory BFGS with two-loop recursion and Armijo backtracking.
///
/// Stops when the gradient norm drops below `grad_tol` or after `max_iters`.
/// When the quasi-Newton direction admits no acceptable step, a steepest-descent
/// step is tried instead and the iteration is recorded in `fallback_steps`; if
/// that fails too, [`Error::LineSearchFailure`] is returned with `x` left at the
/// last accepted point.
pub fn lbfgs_minimize<F>(mut f: F, x: &mut Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (mut fx, mut gx) = f(x);
    if !fx.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0 });
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut report = LbfgsReport { loss: fx, grad_norm: norm(&gx), ..Default::default() };
    report.loss_history.push(fx);
    for it in 0..opts.max_iters {
        let gnorm = norm(&gx);
        if gnorm < opts.grad_tol {
            report.converged = true;
            break;
        }
        // Two-loop recursion.
        let mut q = gx.clone();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&y_hist[i], &s_hist[i])).collect();
        for i in (0..k).rev() {
            alpha[i] = rho[i] * dot(&s_hist[i], &q);
            for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        let gamma = if k > 0 { dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]) } else { 1.0 / gnorm.max(1.0) };
        q.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..k {
            let beta = rho[i] * dot(&y_hist[i], &q);
            for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        let dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let accepted = match backtrack(&mut f, x, fx, &gx, &dir, 1.0, opts) {
            Some(r) => Some(r),
            None => {
                report.fallback_steps.push(it);
                s_hist.clear();
                y_hist.clear();
                let sd: Vec<f64> = gx.iter().map(|g| -g).collect();
                backtrack(&mut f, x, fx, &gx, &sd, 1.0 / gnorm.max(1e-300), opts)
            }
        };
        let Some((xn, fnew, gnew)) = accepted else {
            report.iterations = it;
            return Err(Error::LineSearchFailure(it));
        };
        let s: Vec<f64> = xn.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&gx).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * norm(&s) * norm(&y) {
            if s_hist.len() == opts.history {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        *x = xn;
        fx = fnew;
        gx = gnew;
        report.iterations = it + 1;
        report.loss_history.push(fx);
    }
    report.loss = fx;
    report.grad_norm = norm(&gx);
    report.converged |= report.grad_norm < opts.grad_tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_finds_scalar_minimizer() {
        let mut w = vec![0.0];
        let mut adam = Adam::new(1, 0.1);
        for _ in 0..2000 {
            let g = vec![2.0 * (w[0] - 5.0)];
            adam.step(&mut w, &g);
        }
        assert!((w[0] - 5.0).abs() < 1e-3, "w = {}", w[0]);
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut w = vec![1.5, -2.0];
        let mut adam = Adam::new(2, 0.01);
        for _ in 0..10 {
            adam.step(&mut w, &[0.0, 0.0]);
        }
        assert_eq!(w, vec![1.5, -2.0]);
    }

    #[test]
    fn lbfgs_convex_quadratic() {
        // f(x) = 0.5 xᵀ A x - bᵀ x with A = diag(1..10).
        let n = 10;
        let a: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let f = |x: &[f64]| {
            let v = (0..n).map(|i| 0.5 * a[i] * x[i] * x[i] - b[i] * x[i]).sum();
            let g = (0..n).map(|i| a[i] * x[i] - b[i]).collect();
            (v, g)
        };
        let mut x = vec![0.0; n];
        let rep = lbfgs_minimize(f, &mut x, &LbfgsOptions { max_iters: 100, ..Default::default() }).unwrap();
        assert!(rep.converged);
        assert!(rep.grad_norm < 1e-9);
        assert!(rep.iterations < 50, "{} iterations", rep.iterations);
        for i in 0..n {
            assert!((x[i] - b[i] / a[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let mut x = vec![-1.2, 1.0];
        let rep = lbfgs_minimize(f, &mut x, &LbfgsOptions { max_iters: 200, ..Default::default() }).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?} after {}", rep.iterations);
    }
}
