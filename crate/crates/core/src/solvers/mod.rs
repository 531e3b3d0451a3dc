//! Reference solvers producing ground-truth outputs for the benchmark problems.

pub mod advection;
pub mod antiderivative;
pub mod burgers;
pub mod diffusion_reaction;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use advection::solve_advection;
pub use antiderivative::{dopri5_scalar, solve_antiderivative};
pub use burgers::{solve_burgers, solve_burgers_on};
pub use diffusion_reaction::{solve_diffusion_reaction, solve_diffusion_reaction_on};

/// Output of a reference solve on a tensor query grid.
///
/// For space-time problems values are stored x-major: `values[i * t.len() + j] = u(x_i, t_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionField {
    pub x: Vec<f64>,
    pub t: Option<Vec<f64>>,
    pub values: Vec<f64>,
}

impl SolutionField {
    pub fn query_dim(&self) -> usize {
        if self.t.is_some() {
            2
        } else {
            1
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        match &self.t {
            Some(t) => self.values[i * t.len() + j],
            None => self.values[i],
        }
    }

    /// Query points as rows, in the same order as `values`.
    pub fn queries(&self) -> Array2<f64> {
        tensor_queries(&self.x, self.t.as_deref())
    }
}

/// Rows `(x)` or `(x, t)` enumerating a tensor grid x-major.
pub fn tensor_queries(x: &[f64], t: Option<&[f64]>) -> Array2<f64> {
    match t {
        None => Array2::from_shape_fn((x.len(), 1), |(i, _)| x[i]),
        Some(t) => {
            let nt = t.len();
            Array2::from_shape_fn((x.len() * nt, 2), |(r, c)| if c == 0 { x[r / nt] } else { t[r % nt] })
        }
    }
}

/// Thomas factorization of a fixed tridiagonal matrix, reused across time steps.
#[derive(Clone, Debug)]
pub(crate) struct Tridiagonal {
    lower: Vec<f64>,
    // modified upper coefficients and pivots
    c: Vec<f64>,
    pivot: Vec<f64>,
}

impl Tridiagonal {
    /// `lower[0]` and `upper[n-1]` are ignored.
    pub fn new(lower: &[f64], diag: &[f64], upper: &[f64]) -> Self {
        let n = diag.len();
        let mut c = vec![0.0; n];
        let mut pivot = vec![0.0; n];
        pivot[0] = diag[0];
        for i in 1..n {
            c[i - 1] = upper[i - 1] / pivot[i - 1];
            pivot[i] = diag[i] - lower[i] * c[i - 1];
        }
        Tridiagonal { lower: lower.to_vec(), c, pivot }
    }

    pub fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] /= self.pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) / self.pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.c[i] * rhs[i + 1];
        }
    }
}

/// Cyclic tridiagonal solve with constant coefficients `(a, b, c)` on every row,
/// via Sherman–Morrison on a reduced non-cyclic system.
#[derive(Clone, Debug)]
pub(crate) struct CyclicTridiagonal {
    inner: Tridiagonal,
    z: Vec<f64>,
    gamma: f64,
    beta: f64,
}

impl CyclicTridiagonal {
    pub fn new(n: usize, a: f64, b: f64, c: f64) -> Self {
        // corners: A[0][n-1] = a (beta), A[n-1][0] = c (alpha)
        let (alpha, beta) = (c, a);
        let gamma = -b;
        let mut diag = vec![b; n];
        diag[0] = b - gamma;
        diag[n - 1] = b - alpha * beta / gamma;
        let inner = Tridiagonal::new(&vec![a; n], &diag, &vec![c; n]);
        let mut z = vec![0.0; n];
        z[0] = gamma;
        z[n - 1] = alpha;
        inner.solve(&mut z);
        CyclicTridiagonal { inner, z, gamma, beta }
    }

    pub fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        self.inner.solve(rhs);
        let num = rhs[0] + self.beta * rhs[n - 1] / self.gamma;
        let den = 1.0 + self.z[0] + self.beta * self.z[n - 1] / self.gamma;
        let f = num / den;
        for (r, z) in rhs.iter_mut().zip(&self.z) {
            *r -= f * z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclic_solve_matches_dense_product() {
        let n = 7;
        let (a, b, c) = (-0.3, 2.1, -0.5);
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 0.2).collect();
        let mut rhs: Vec<f64> = (0..n).map(|i| a * x[(i + n - 1) % n] + b * x[i] + c * x[(i + 1) % n]).collect();
        CyclicTridiagonal::new(n, a, b, c).solve(&mut rhs);
        for i in 0..n {
            assert!((rhs[i] - x[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn tensor_query_order() {
        let q = tensor_queries(&[0.0, 1.0], Some(&[0.0, 0.5, 1.0]));
        assert_eq!(q.nrows(), 6);
        assert_eq!(q.row(1).to_vec(), vec![0.0, 0.5]);
        assert_eq!(q.row(3).to_vec(), vec![1.0, 0.0]);
    }
}
