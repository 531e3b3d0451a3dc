//! 2-Wasserstein distance between mean-zero Gaussian fields and power-law fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::fields::{gram_matrix, GaussianFieldSpec};
use crate::nd::linalg::{sqrtm_psd, symmetrize, DenseMatrix};

/// Rectangle-rule discretization of the covariance operator: `K[i][j] = k(x_i, x_j) Δx`
/// with `Δx = 1 / n` for `n` points on a unit-length domain.
pub fn cov_operator_matrix(spec: &GaussianFieldSpec, grid: &[f64]) -> DenseMatrix {
    let n = grid.len();
    let width = match n {
        0 | 1 => 1.0,
        _ => grid[n - 1] - grid[0],
    };
    gram_matrix(spec, grid) * (width / n as f64)
}

/// Gelbrich distance between two centred Gaussians with covariances `k1`, `k2`.
pub fn w2_from_covariances(k1: &DenseMatrix, k2: &DenseMatrix) -> Result<f64> {
    if k1.dim() != k2.dim() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", k1.dim(), k2.dim())));
    }
    let r1 = sqrtm_psd(k1)?;
    let inner = symmetrize(&r1.dot(k2).dot(&r1));
    let cross = sqrtm_psd(&inner)?;
    let t = k1.diag().sum() + k2.diag().sum() - 2.0 * cross.diag().sum();
    Ok(t.max(0.0).sqrt())
}

pub fn w2_distance(spec1: &GaussianFieldSpec, spec2: &GaussianFieldSpec, grid: &[f64]) -> Result<f64> {
    w2_from_covariances(&cov_operator_matrix(spec1, grid), &cov_operator_matrix(spec2, grid))
}

/// `log error = intercept + exponent · log W2`, fitted by least squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub log_intercept: f64,
    pub exponent_stderr: f64,
    pub ci95: (f64, f64),
    pub residuals: Vec<f64>,
    pub n_points: usize,
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    let n = points.len();
    if n < 3 {
        return Err(Error::DegenerateFit(format!("need at least 3 points, got {n}")));
    }
    if points.iter().any(|&(w, e)| !(w > 0.0) || !(e > 0.0)) {
        return Err(Error::DegenerateFit("all distances and errors must be positive".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return Err(Error::DegenerateFit("all distances are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - intercept - slope * x).collect();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let stderr = (sse / (nf - 2.0) / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, nf - 2.0).map_err(|e| Error::DegenerateFit(e.to_string()))?.inverse_cdf(0.975);
    Ok(PowerLawFit {
        exponent: slope,
        log_intercept: intercept,
        exponent_stderr: stderr,
        ci95: (slope - q * stderr, slope + q * stderr),
        residuals,
        n_points: n,
    })
}

/// Two-sided t-test p-value for equality of two fitted exponents.
pub fn compare_slopes(a: &PowerLawFit, b: &PowerLawFit) -> f64 {
    let diff = a.exponent - b.exponent;
    let se = (a.exponent_stderr.powi(2) + b.exponent_stderr.powi(2)).sqrt();
    if diff == 0.0 {
        return 1.0;
    }
    if se == 0.0 {
        return 0.0;
    }
    let df = (a.n_points + b.n_points) as f64 - 4.0;
    let Ok(t) = StudentsT::new(0.0, 1.0, df.max(1.0)) else { return f64::NAN };
    (2.0 * (1.0 - t.cdf((diff / se).abs()))).clamp(0.0, 1.0)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::sensor_grid;
    use ndarray::Array1;

    #[test]
    fn trace_is_domain_length() {
        let grid = sensor_grid(101);
        let k = cov_operator_matrix(&GaussianFieldSpec::rbf(0.3), &grid);
        assert!((k.diag().sum() - 1.0).abs() < 1e-3);
        assert_eq!(k, k.t());
    }

    #[test]
    fn two_point_grid_by_hand() {
        let spec = GaussianFieldSpec::rbf(0.5);
        let k = cov_operator_matrix(&spec, &[0.0, 1.0]);
        let off = (-2.0f64).exp() * 0.5;
        assert!((k[[0, 1]] - off).abs() < 1e-15 && (k[[0, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_specs_have_zero_distance() {
        let grid = sensor_grid(60);
        let s = GaussianFieldSpec::rbf(0.4);
        assert!(w2_distance(&s, &s, &grid).unwrap() < 1e-6);
    }

    #[test]
    fn commuting_closed_form() {
        let a = Array1::from(vec![0.5, 0.2, 0.1, 0.05]);
        let b = Array1::from(vec![0.3, 0.3, 0.01, 0.2]);
        let d = w2_from_covariances(&DenseMatrix::from_diag(&a), &DenseMatrix::from_diag(&b)).unwrap();
        let expect: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>().sqrt();
        assert!((d - expect).abs() < 1e-10);
    }

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = [0.1, 0.2, 0.4, 0.8].iter().map(|&w| (w, 3.0 * w * w)).collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-12);
        assert!(fit.exponent_stderr < 1e-10);
        assert!((fit.log_intercept - 3f64.ln()).abs() < 1e-12);
        assert_eq!(compare_slopes(&fit, &fit), 1.0);
    }

    #[test]
    fn degenerate_fits() {
        assert!(fit_power_law(&[(0.5, 1.0), (0.5, 2.0), (0.5, 3.0)]).is_err());
        assert!(fit_power_law(&[(0.5, 1.0), (0.6, 2.0)]).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
    }
}
