//! Benchmark problem definitions: residual operators, boundary/initial terms,
//! hard constraints and reference solves.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{derive_advection_speed, linspace, sensor_grid, FunctionSample, GaussianFieldSpec};
use crate::interp::CubicSpline;
use crate::nd::jet::Jet2;
use crate::solvers::{self, advection, tensor_queries, SolutionField};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemKind {
    /// `u' = v`, `u(0) = 0` on `[0, 1]`.
    Antiderivative,
    /// `u_t = D u_xx + k u² + v(x)` with zero initial and boundary values.
    DiffusionReaction { k: f64, d: f64 },
    /// Periodic viscous Burgers with initial condition `v`.
    Burgers { nu: f64 },
    /// `u_t + v(x) u_x = 0` with `u(x,0) = sin(πx)`, `u(0,t) = sin(πt/2)`.
    Advection,
}

/// Local derivatives of a candidate solution at one point.
/// `ut` is zero for the one-dimensional problem.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointDerivs {
    pub u: f64,
    pub ux: f64,
    pub uxx: f64,
    pub ut: f64,
}

/// Residual value and its partial derivatives with respect to each local derivative.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Residual {
    pub value: f64,
    pub d_u: f64,
    pub d_ux: f64,
    pub d_uxx: f64,
    pub d_ut: f64,
}

/// A linear condition `Σ cᵢ u(pᵢ) = target`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTerm {
    pub points: Vec<(Vec<f64>, f64)>,
    pub target: f64,
}

/// Output transform `u = ξ_coord · N(ξ)` enforcing `u = 0` on `ξ_coord = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardConstraint {
    pub coord: usize,
}

impl HardConstraint {
    fn factor(&self, point: &[f64], direction: Option<usize>) -> Jet2 {
        let c = point[self.coord];
        if direction == Some(self.coord) {
            Jet2::variable(c)
        } else {
            Jet2::constant(c)
        }
    }

    pub fn apply(&self, point: &[f64], raw: f64) -> f64 {
        point[self.coord] * raw
    }

    /// Transforms a jet of the raw network output along `direction`.
    pub fn apply_jet(&self, point: &[f64], direction: usize, raw: Jet2) -> Jet2 {
        self.factor(point, Some(direction)) * raw
    }

    /// Maps a cotangent on the transformed jet back onto the raw jet.
    pub fn pullback(&self, point: &[f64], direction: usize, g: [f64; 3]) -> [f64; 3] {
        let a = self.factor(point, Some(direction));
        [
            a.value * g[0] + a.d1 * g[1] + a.d2 * g[2],
            a.value * g[1] + 2.0 * a.d1 * g[2],
            a.value * g[2],
        ]
    }
}

/// Input function with its interpolant, as seen by residual operators.
#[derive(Clone, Debug)]
pub struct InputFunction {
    pub sample: FunctionSample,
    spline: CubicSpline,
}

impl InputFunction {
    pub fn new(sample: FunctionSample) -> Result<Self> {
        let spline = sample.interpolant()?;
        Ok(InputFunction { sample, spline })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.spline.eval(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemDef {
    pub kind: ProblemKind,
    /// Whether the antiderivative initial condition is imposed by output transform.
    #[serde(default = "yes")]
    pub hard_constraint: bool,
}

fn yes() -> bool {
    true
}

impl ProblemDef {
    pub fn antiderivative() -> Self {
        ProblemDef { kind: ProblemKind::Antiderivative, hard_constraint: true }
    }

    pub fn diffusion_reaction() -> Self {
        ProblemDef { kind: ProblemKind::DiffusionReaction { k: 0.01, d: 0.01 }, hard_constraint: true }
    }

    pub fn burgers() -> Self {
        ProblemDef { kind: ProblemKind::Burgers { nu: 0.1 }, hard_constraint: true }
    }

    pub fn advection() -> Self {
        ProblemDef { kind: ProblemKind::Advection, hard_constraint: true }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "antiderivative" => Some(Self::antiderivative()),
            "diffusion_reaction" | "diffusion-reaction" => Some(Self::diffusion_reaction()),
            "burgers" => Some(Self::burgers()),
            "advection" => Some(Self::advection()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ProblemKind::Antiderivative => "antiderivative",
            ProblemKind::DiffusionReaction { .. } => "diffusion_reaction",
            ProblemKind::Burgers { .. } => "burgers",
            ProblemKind::Advection => "advection",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ProblemKind::DiffusionReaction { k, d } if !(d > 0.0) || k < 0.0 => {
                Err(Error::InvalidArgument(format!("diffusion-reaction needs D > 0 and k >= 0 (D={d}, k={k})")))
            }
            ProblemKind::Burgers { nu } if !(nu > 0.0) => Err(Error::InvalidArgument(format!("viscosity must be positive, got {nu}"))),
            _ => Ok(()),
        }
    }

    /// 1 for `x`, 2 for `(x, t)`.
    pub fn query_dim(&self) -> usize {
        match self.kind {
            ProblemKind::Antiderivative => 1,
            _ => 2,
        }
    }

    /// Reference query grid: 100 points for the antiderivative, 101×101 otherwise (x-major).
    pub fn query_grid(&self) -> Array2<f64> {
        match self.kind {
            ProblemKind::Antiderivative => tensor_queries(&sensor_grid(100), None),
            _ => {
                let g = linspace(0.0, 1.0, 101);
                tensor_queries(&g, Some(&g))
            }
        }
    }

    /// Field family from which inputs are drawn, at correlation length `l`.
    pub fn field(&self, l: f64) -> GaussianFieldSpec {
        match self.kind {
            ProblemKind::Burgers { .. } => GaussianFieldSpec::exp_sine_squared(l, 1.0),
            _ => GaussianFieldSpec::rbf(l),
        }
    }

    pub fn default_train_length(&self) -> f64 {
        match self.kind {
            ProblemKind::Burgers { .. } => 1.0,
            _ => 0.5,
        }
    }

    pub fn default_test_length(&self) -> f64 {
        match self.kind {
            ProblemKind::Burgers { .. } => 0.6,
            _ => 0.2,
        }
    }

    /// Maps a raw field draw to the operator input (advection speeds are shifted to min 1).
    pub fn prepare_input(&self, raw: &FunctionSample) -> FunctionSample {
        match self.kind {
            ProblemKind::Advection => derive_advection_speed(raw),
            _ => raw.clone(),
        }
    }

    pub fn solve(&self, v: &FunctionSample) -> Result<SolutionField> {
        match self.kind {
            ProblemKind::Antiderivative => solvers::solve_antiderivative(v),
            ProblemKind::DiffusionReaction { k, d } => solvers::solve_diffusion_reaction(v, k, d),
            ProblemKind::Burgers { nu } => solvers::solve_burgers(v, nu),
            ProblemKind::Advection => solvers::solve_advection(v),
        }
    }

    pub fn constraint(&self) -> Option<HardConstraint> {
        match self.kind {
            ProblemKind::Antiderivative if self.hard_constraint => Some(HardConstraint { coord: 0 }),
            _ => None,
        }
    }

    /// Highest derivative order needed along each coordinate, indexed by coordinate.
    pub fn jet_orders(&self) -> Vec<usize> {
        match self.kind {
            ProblemKind::Antiderivative => vec![1],
            ProblemKind::DiffusionReaction { .. } | ProblemKind::Burgers { .. } => vec![2, 1],
            ProblemKind::Advection => vec![1, 1],
        }
    }

    /// PDE residual at `point` given local derivatives and the input value `v(x)`.
    pub fn residual(&self, d: &PointDerivs, v: f64) -> Residual {
        match self.kind {
            ProblemKind::Antiderivative => Residual { value: d.ux - v, d_ux: 1.0, ..Default::default() },
            ProblemKind::DiffusionReaction { k, d: diff } => Residual {
                value: d.ut - diff * d.uxx - k * d.u * d.u - v,
                d_u: -2.0 * k * d.u,
                d_uxx: -diff,
                d_ut: 1.0,
                ..Default::default()
            },
            ProblemKind::Burgers { nu } => Residual {
                value: d.ut + d.u * d.ux - nu * d.uxx,
                d_u: d.ux,
                d_ux: d.u,
                d_uxx: -nu,
                d_ut: 1.0,
            },
            ProblemKind::Advection => Residual { value: d.ut + v * d.ux, d_ux: v, d_ut: 1.0, ..Default::default() },
        }
    }

    /// `n` uniform interior collocation points.
    pub fn sample_collocation<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_fn((n, self.query_dim()), |_| rng.random::<f64>())
    }

    /// Uniform collocation grid with `per_axis` points per coordinate (x-major).
    pub fn quadrature_grid(&self, per_axis: usize) -> Array2<f64> {
        let g = linspace(0.0, 1.0, per_axis);
        if self.query_dim() == 1 {
            tensor_queries(&g, None)
        } else {
            tensor_queries(&g, Some(&g))
        }
    }

    /// About `n` randomly placed boundary/initial conditions for input `v`.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, n: usize, v: &InputFunction, rng: &mut R) -> Vec<BoundaryTerm> {
        let single = |p: Vec<f64>, target: f64| BoundaryTerm { points: vec![(p, 1.0)], target };
        match self.kind {
            ProblemKind::Antiderivative => {
                if self.constraint().is_some() {
                    Vec::new()
                } else {
                    vec![single(vec![0.0], 0.0)]
                }
            }
            ProblemKind::DiffusionReaction { .. } => (0..n)
                .map(|i| {
                    let s = rng.random::<f64>();
                    match i % 4 {
                        0 | 1 => single(vec![s, 0.0], 0.0),
                        2 => single(vec![0.0, s], 0.0),
                        _ => single(vec![1.0, s], 0.0),
                    }
                })
                .collect(),
            ProblemKind::Burgers { .. } => (0..n)
                .map(|i| {
                    let s = rng.random::<f64>();
                    if i % 2 == 0 {
                        single(vec![s, 0.0], v.eval(s))
                    } else {
                        BoundaryTerm { points: vec![(vec![0.0, s], 1.0), (vec![1.0, s], -1.0)], target: 0.0 }
                    }
                })
                .collect(),
            ProblemKind::Advection => (0..n)
                .map(|i| {
                    let s = rng.random::<f64>();
                    if i % 2 == 0 {
                        single(vec![s, 0.0], advection::initial_value(s))
                    } else {
                        single(vec![0.0, s], advection::inflow_value(s))
                    }
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn hard_constraint_jet_rules() {
        let c = HardConstraint { coord: 0 };
        let raw = Jet2::new(2.0, 3.0, 5.0);
        let u = c.apply_jet(&[0.5], 0, raw);
        // u = x N: u' = N + x N', u'' = 2N' + x N''
        assert_eq!(u, Jet2::new(1.0, 2.0 + 1.5, 6.0 + 2.5));
        // Pullback is the transpose of the jet map.
        let g = [0.3, -0.7, 1.1];
        let back = c.pullback(&[0.5], 0, g);
        let e = |k: usize| {
            let mut p = [0.0; 3];
            p[k] = 1.0;
            let j = c.apply_jet(&[0.5], 0, Jet2::new(p[0], p[1], p[2]));
            g[0] * j.value + g[1] * j.d1 + g[2] * j.d2
        };
        for (k, b) in back.iter().enumerate() {
            assert!((b - e(k)).abs() < 1e-15);
        }
    }

    #[test]
    fn residuals_vanish_on_exact_solutions() {
        let p = ProblemDef::antiderivative();
        let r = p.residual(&PointDerivs { u: 0.3, ux: 1.0, ..Default::default() }, 1.0);
        assert_eq!(r.value, 0.0);
        let adv = ProblemDef::advection();
        // u = sin(π(x − t)) with unit speed
        let (x, t) = (0.7, 0.2);
        let d = PointDerivs { u: (PI * (x - t)).sin(), ux: PI * (PI * (x - t)).cos(), uxx: 0.0, ut: -PI * (PI * (x - t)).cos() };
        assert!(adv.residual(&d, 1.0).value.abs() < 1e-14);
    }

    #[test]
    fn boundary_sampling_shapes() {
        let mut rng = crate::nd::rng::seeded(0);
        let v = InputFunction::new(FunctionSample::from_fn(&sensor_grid(100), |x| (2.0 * PI * x).sin())).unwrap();
        assert!(ProblemDef::antiderivative().sample_boundary(10, &v, &mut rng).is_empty());
        let b = ProblemDef::burgers().sample_boundary(10, &v, &mut rng);
        assert_eq!(b.len(), 10);
        assert_eq!(b[1].points.len(), 2);
        assert_eq!(ProblemDef::diffusion_reaction().query_grid().dim(), (10201, 2));
    }
}
