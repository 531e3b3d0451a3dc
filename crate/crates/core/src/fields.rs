//! Kernel families and Gaussian random field sampling on 1D grids.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::CubicSpline;
use crate::nd::linalg::{cholesky_psd, CholeskyFactor, DenseMatrix, JITTER_FLOOR};
use crate::nd::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
    ExpSineSquared,
    /// Matern with smoothness 1.5.
    Matern15,
}

/// Mean-zero, unit-variance stationary Gaussian field on an interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFieldSpec {
    pub kernel: KernelKind,
    pub length_scale: f64,
    /// Period of the `ExpSineSquared` kernel; ignored by the others.
    #[serde(default = "default_period")]
    pub periodicity: f64,
}

fn default_period() -> f64 {
    1.0
}

impl GaussianFieldSpec {
    pub fn rbf(length_scale: f64) -> Self {
        GaussianFieldSpec { kernel: KernelKind::Rbf, length_scale, periodicity: 1.0 }
    }

    pub fn exp_sine_squared(length_scale: f64, periodicity: f64) -> Self {
        GaussianFieldSpec { kernel: KernelKind::ExpSineSquared, length_scale, periodicity }
    }

    pub fn matern15(length_scale: f64) -> Self {
        GaussianFieldSpec { kernel: KernelKind::Matern15, length_scale, periodicity: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0) || !self.length_scale.is_finite() {
            return Err(Error::InvalidArgument(format!("correlation length must be positive, got {}", self.length_scale)));
        }
        if self.kernel == KernelKind::ExpSineSquared && !(self.periodicity > 0.0) {
            return Err(Error::InvalidArgument(format!("periodicity must be positive, got {}", self.periodicity)));
        }
        Ok(())
    }

    pub fn covariance(&self, x1: f64, x2: f64) -> f64 {
        kernel_eval(self, x1, x2)
    }
}

/// Covariance `k(x1, x2)` of the field; `k(x, x) = 1`.
pub fn kernel_eval(spec: &GaussianFieldSpec, x1: f64, x2: f64) -> f64 {
    let r = (x1 - x2).abs();
    let l = spec.length_scale;
    match spec.kernel {
        KernelKind::Rbf => (-r * r / (2.0 * l * l)).exp(),
        KernelKind::ExpSineSquared => {
            let s = (std::f64::consts::PI * r / spec.periodicity).sin();
            (-2.0 * s * s / (l * l)).exp()
        }
        KernelKind::Matern15 => matern15(r, l),
    }
}

/// `(1 + √3 r / l) exp(−√3 r / l)`.
pub fn matern15(r: f64, l: f64) -> f64 {
    let z = 3f64.sqrt() * r / l;
    (1.0 + z) * (-z).exp()
}

pub fn gram_matrix(spec: &GaussianFieldSpec, grid: &[f64]) -> DenseMatrix {
    let n = grid.len();
    let mut k = DenseMatrix::zeros((n, n));
    for i in 0..n {
        k[[i, i]] = kernel_eval(spec, grid[i], grid[i]);
        for j in 0..i {
            let v = kernel_eval(spec, grid[i], grid[j]);
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

/// `m` equispaced points on `[0, 1]`.
pub fn sensor_grid(m: usize) -> Vec<f64> {
    linspace(0.0, 1.0, m)
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| if i == n - 1 { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

/// Values of one input function at sensor locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionSample {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl FunctionSample {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::DimensionMismatch(format!("{} sensors but {} values", grid.len(), values.len())));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("sensor grid must be strictly increasing".into()));
        }
        Ok(FunctionSample { grid, values })
    }

    /// Samples a closure on a grid.
    pub fn from_fn(grid: &[f64], f: impl Fn(f64) -> f64) -> Self {
        FunctionSample { grid: grid.to_vec(), values: grid.iter().map(|&x| f(x)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Not-a-knot cubic interpolant through the sensor values.
    pub fn interpolant(&self) -> Result<CubicSpline> {
        CubicSpline::new(&self.grid, &self.values)
    }

    /// Sum of absolute increments between neighbouring sensors.
    pub fn total_variation(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }
}

/// Cached factorization for repeated draws from one field on one grid.
///
/// Grid points that are indistinguishable under the kernel (equal modulo the
/// period of a periodic kernel) share one latent value, so periodic samples are
/// exactly periodic rather than periodic up to jitter.
#[derive(Clone, Debug)]
pub struct GrfSampler {
    grid: Vec<f64>,
    factor: CholeskyFactor,
    // grid index -> index into the reduced point set
    representative: Vec<usize>,
}

impl GrfSampler {
    pub fn new(spec: &GaussianFieldSpec, grid: &[f64]) -> Result<Self> {
        spec.validate()?;
        if grid.len() < 2 {
            return Err(Error::InvalidArgument("grid needs at least two points".into()));
        }
        let mut reduced: Vec<f64> = Vec::new();
        let mut representative = Vec::with_capacity(grid.len());
        for &x in grid {
            let key = if spec.kernel == KernelKind::ExpSineSquared {
                let p = spec.periodicity;
                let r = x.rem_euclid(p);
                if (p - r).abs() < 1e-12 * p.max(1.0) {
                    0.0
                } else {
                    r
                }
            } else {
                x
            };
            let found = reduced.iter().position(|&y| (y - key).abs() < 1e-12 * key.abs().max(1.0));
            match found {
                Some(i) if spec.kernel == KernelKind::ExpSineSquared => representative.push(i),
                _ => {
                    representative.push(reduced.len());
                    reduced.push(key);
                }
            }
        }
        let gram = gram_matrix(spec, &reduced);
        let factor = cholesky_psd(&gram, JITTER_FLOOR)?;
        Ok(GrfSampler { grid: grid.to_vec(), factor, representative })
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> FunctionSample {
        let k = self.factor.lower.nrows();
        let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
        let l = &self.factor.lower;
        let latent: Vec<f64> = (0..k).map(|i| (0..=i).map(|j| l[[i, j]] * z[j]).sum()).collect();
        let values = self.representative.iter().map(|&r| latent[r]).collect();
        FunctionSample { grid: self.grid.clone(), values }
    }
}

/// Draws `n` independent functions `L z`, `z ~ N(0, I)`, from a seeded stream.
pub fn sample_grf(spec: &GaussianFieldSpec, grid: &[f64], n: usize, seed: u64) -> Result<Vec<FunctionSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let sampler = GrfSampler::new(spec, grid)?;
    let mut rng = seeded(seed);
    Ok((0..n).map(|_| sampler.draw(&mut rng)).collect())
}

/// Shifts a field so that its minimum over the grid is exactly 1.
pub fn derive_advection_speed(field: &FunctionSample) -> FunctionSample {
    let min = field.values.iter().copied().fold(f64::INFINITY, f64::min);
    let values = field.values.iter().map(|&v| if v == min { 1.0 } else { v - min + 1.0 }).collect();
    FunctionSample { grid: field.grid.clone(), values }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        let rbf = GaussianFieldSpec::rbf(0.5);
        assert_eq!(kernel_eval(&rbf, 0.3, 0.3), 1.0);
        assert!((kernel_eval(&rbf, 0.0, 0.5) - (-0.5f64).exp()).abs() < 1e-15);
        let per = GaussianFieldSpec::exp_sine_squared(0.5, 1.0);
        assert!((kernel_eval(&per, 0.0, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(kernel_eval(&GaussianFieldSpec::matern15(0.3), 0.2, 0.2), 1.0);
    }

    #[test]
    fn kernels_are_symmetric() {
        for spec in [GaussianFieldSpec::rbf(0.2), GaussianFieldSpec::exp_sine_squared(0.7, 1.0), GaussianFieldSpec::matern15(0.4)] {
            assert_eq!(kernel_eval(&spec, 0.1, 0.8), kernel_eval(&spec, 0.8, 0.1));
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let grid = sensor_grid(30);
        let a = sample_grf(&GaussianFieldSpec::rbf(0.3), &grid, 3, 11).unwrap();
        let b = sample_grf(&GaussianFieldSpec::rbf(0.3), &grid, 3, 11).unwrap();
        assert_eq!(a, b);
        let c = sample_grf(&GaussianFieldSpec::rbf(0.3), &grid, 3, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn periodic_samples_wrap() {
        let grid = sensor_grid(100);
        for s in sample_grf(&GaussianFieldSpec::exp_sine_squared(1.0, 1.0), &grid, 5, 1).unwrap() {
            assert!((s.values[0] - s.values[99]).abs() < 1e-8);
        }
    }

    #[test]
    fn advection_speed_shift() {
        let v = FunctionSample::new(vec![0.0, 0.5, 1.0], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(derive_advection_speed(&v).values, vec![1.0, 2.0, 4.0]);
        let c = FunctionSample::from_fn(&[0.0, 1.0], |_| 5.0);
        assert_eq!(derive_advection_speed(&c).values, vec![1.0, 1.0]);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(GaussianFieldSpec::rbf(0.0).validate().is_err());
        assert!(GaussianFieldSpec::exp_sine_squared(1.0, -1.0).validate().is_err());
        assert!(sample_grf(&GaussianFieldSpec::rbf(0.5), &[0.0], 1, 0).is_err());
    }
}
