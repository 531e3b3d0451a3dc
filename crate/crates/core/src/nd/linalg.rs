//! Cholesky with a jitter ladder, symmetric square roots, triangular solves.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Row-major 64-bit dense matrix.
pub type DenseMatrix = Array2<f64>;

/// Largest diagonal jitter tried before a factorization is declared not PSD.
pub const JITTER_CAP: f64 = 1e-4;
/// Smallest nonzero jitter on the ladder.
pub const JITTER_FLOOR: f64 = 1e-12;

/// Lower-triangular factor of `A + jitter * I`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CholeskyFactor {
    pub lower: DenseMatrix,
    pub jitter: f64,
}

impl CholeskyFactor {
    /// Solves `(L Lᵀ) x = b`.
    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let y = solve_lower(&self.lower, b);
        solve_lower_transpose(&self.lower, y.view())
    }

    /// Solves for several right-hand sides stored as columns.
    pub fn solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(b.raw_dim());
        for (j, col) in b.columns().into_iter().enumerate() {
            out.column_mut(j).assign(&self.solve(col));
        }
        out
    }

    /// `log det(L Lᵀ)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `(L Lᵀ)^{-1}` as a dense matrix.
    pub fn inverse(&self) -> DenseMatrix {
        let n = self.lower.nrows();
        self.solve_matrix(&DenseMatrix::eye(n))
    }
}

fn check_square(a: &DenseMatrix) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c || r == 0 {
        return Err(Error::DimensionMismatch(format!("expected a non-empty square matrix, got {r}x{c}")));
    }
    Ok(r)
}

fn try_cholesky(a: &DenseMatrix, jitter: f64) -> Option<DenseMatrix> {
    let n = a.nrows();
    let mut l = DenseMatrix::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]] + jitter;
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

/// Cholesky factorization of a symmetric matrix with escalating diagonal jitter.
///
/// Starts at `jitter` (or at [`JITTER_FLOOR`] after a failed jitter-free attempt)
/// and multiplies by ten until the factorization succeeds or the jitter exceeds
/// [`JITTER_CAP`]. The jitter actually used is reported in the factor.
pub fn cholesky_psd(a: &DenseMatrix, jitter: f64) -> Result<CholeskyFactor> {
    check_square(a)?;
    if jitter < 0.0 || !jitter.is_finite() {
        return Err(Error::InvalidArgument(format!("jitter must be >= 0, got {jitter}")));
    }
    let mut j = jitter;
    loop {
        if let Some(lower) = try_cholesky(a, j) {
            return Ok(CholeskyFactor { lower, jitter: j });
        }
        j = if j == 0.0 { JITTER_FLOOR } else { j * 10.0 };
        if j > JITTER_CAP * (1.0 + 1e-9) {
            return Err(Error::NotPsd { jitter: j / 10.0 });
        }
    }
}

/// Forward substitution `L y = b`.
pub fn solve_lower(l: &DenseMatrix, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    y
}

/// Back substitution `Lᵀ x = y`.
pub fn solve_lower_transpose(l: &DenseMatrix, y: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Largest absolute entry.
pub fn max_abs(a: &DenseMatrix) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn frobenius(a: &DenseMatrix) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest `|A[i][j] - A[j][i]|`.
pub fn asymmetry(a: &DenseMatrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}

pub fn is_symmetric(a: &DenseMatrix) -> bool {
    asymmetry(a) <= 1e-12 * max_abs(a)
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DenseMatrix) -> DenseMatrix {
    (a + &a.t()) * 0.5
}

/// Eigenvalues (ascending order not guaranteed) and eigenvectors as columns.
pub fn symmetric_eigen(a: &DenseMatrix) -> Result<(Array1<f64>, DenseMatrix)> {
    let n = check_square(a)?;
    let m = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    let eig = SymmetricEigen::try_new(m, 1e-15, 10_000).ok_or(Error::EigenFailure)?;
    let values = Array1::from_iter(eig.eigenvalues.iter().copied());
    let vectors = DenseMatrix::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, j)]);
    Ok((values, vectors))
}

/// Principal square root of a symmetric PSD matrix.
///
/// Eigenvalues below zero (numerical rank deficiency) are clamped to zero
/// before taking square roots.
pub fn sqrtm_psd(a: &DenseMatrix) -> Result<DenseMatrix> {
    check_square(a)?;
    let asym = asymmetry(a);
    if asym > 1e-12 * max_abs(a).max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric(asym));
    }
    let (values, vectors) = symmetric_eigen(a)?;
    let roots = values.mapv(|v| v.max(0.0).sqrt());
    let scaled = &vectors * &roots.view().insert_axis(ndarray::Axis(0));
    Ok(symmetrize(&scaled.dot(&vectors.t())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn rel_frob(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        frobenius(&(a - b)) / frobenius(b)
    }

    #[test]
    fn cholesky_identity_and_diagonal() {
        let f = cholesky_psd(&DenseMatrix::eye(3), 0.0).unwrap();
        assert_eq!(f.lower, DenseMatrix::eye(3));
        assert_eq!(f.jitter, 0.0);
        let f = cholesky_psd(&array![[4.0, 0.0], [0.0, 9.0]], 0.0).unwrap();
        assert_eq!(f.lower, array![[2.0, 0.0], [0.0, 3.0]]);
    }

    #[test]
    fn cholesky_rbf_gram_reconstructs() {
        let n = 50;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let a = DenseMatrix::from_shape_fn((n, n), |(i, j)| (-(xs[i] - xs[j]).powi(2) / (2.0 * 0.25)).exp());
        let f = cholesky_psd(&a, 0.0).unwrap();
        let shifted = &a + &(DenseMatrix::eye(n) * f.jitter);
        let rec = f.lower.dot(&f.lower.t());
        assert!(frobenius(&(&rec - &shifted)) / frobenius(&a) < 1e-8);
        assert!(f.jitter <= JITTER_CAP);
    }

    #[test]
    fn cholesky_rejects_indefinite_and_rectangular() {
        let a = array![[1.0, 0.0], [0.0, -1.0]];
        assert!(matches!(cholesky_psd(&a, 0.0), Err(Error::NotPsd { .. })));
        let r = DenseMatrix::zeros((2, 3));
        assert!(matches!(cholesky_psd(&r, 0.0), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn cholesky_solve_matches() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let f = cholesky_psd(&a, 0.0).unwrap();
        let x = f.solve(array![1.0, 2.0].view());
        let back = a.dot(&x);
        assert!((back[0] - 1.0).abs() < 1e-14 && (back[1] - 2.0).abs() < 1e-14);
        assert!((f.log_det() - 11.0_f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn sqrtm_identity_and_diagonal() {
        let s = sqrtm_psd(&DenseMatrix::eye(4)).unwrap();
        assert!(rel_frob(&s, &DenseMatrix::eye(4)) < 1e-14);
        let d = DenseMatrix::from_diag(&array![4.0, 16.0, 25.0]);
        let s = sqrtm_psd(&d).unwrap();
        let expect = DenseMatrix::from_diag(&array![2.0, 4.0, 5.0]);
        assert!(rel_frob(&s, &expect) < 1e-14);
    }

    #[test]
    fn sqrtm_random_psd_reconstructs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let m = DenseMatrix::from_shape_fn((5, 5), |_| StandardNormal.sample(&mut rng));
        let b = m.t().dot(&m);
        let s = sqrtm_psd(&b).unwrap();
        assert!(asymmetry(&s) == 0.0);
        assert!(rel_frob(&s.dot(&s), &b) < 1e-8);
    }

    #[test]
    fn sqrtm_rejects_asymmetric() {
        let a = array![[1.0, 0.5], [0.0, 1.0]];
        assert!(matches!(sqrtm_psd(&a), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn sqrtm_clamps_rank_deficiency() {
        let v = array![[1.0, 2.0, 3.0]];
        let a = v.t().dot(&v);
        let s = sqrtm_psd(&a).unwrap();
        assert!(s.iter().all(|x| x.is_finite()));
        assert!(rel_frob(&s.dot(&s), &a) < 1e-8);
    }
}
