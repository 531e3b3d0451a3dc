//! Detecting harmful extrapolation and repairing it by fine-tuning.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{generate_dataset_with_sensors, OperatorDataset};
use crate::deeponet::{adam_on_subset, mean, DeepONet, DeepONetConfig, ParamSubset, PhysicsBatch};
use crate::error::{Error, Result};
use crate::fields::{FunctionSample, GaussianFieldSpec};
use crate::nd::optim::{lbfgs_minimize, LbfgsOptions};
use crate::nd::rng::{derive_seed, seeded, stream_id};
use crate::problem::{InputFunction, PointDerivs, ProblemDef};

/// Anything that can report a candidate solution and its derivatives at points.
pub trait FieldModel {
    fn values(&self, points: ArrayView2<f64>) -> Result<Vec<f64>>;
    fn derivs(&self, problem: &ProblemDef, points: ArrayView2<f64>) -> Result<Vec<PointDerivs>>;
}

/// A DeepONet with its branch input fixed to one function.
pub struct BoundModel<'a> {
    pub model: &'a DeepONet,
    pub v: &'a [f64],
}

impl FieldModel for BoundModel<'_> {
    fn values(&self, points: ArrayView2<f64>) -> Result<Vec<f64>> {
        self.model.predict_field(self.v, points)
    }

    fn derivs(&self, problem: &ProblemDef, points: ArrayView2<f64>) -> Result<Vec<PointDerivs>> {
        self.model.point_derivs(problem, self.v, points)
    }
}

/// A closed-form candidate, e.g. an exact solution.
pub struct ClosureModel<F: Fn(&[f64]) -> PointDerivs>(pub F);

impl<F: Fn(&[f64]) -> PointDerivs> FieldModel for ClosureModel<F> {
    fn values(&self, points: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(points.rows().into_iter().map(|p| (self.0)(p.as_slice().expect("contiguous")).u).collect())
    }

    fn derivs(&self, _: &ProblemDef, points: ArrayView2<f64>) -> Result<Vec<PointDerivs>> {
        Ok(points.rows().into_iter().map(|p| (self.0)(p.as_slice().expect("contiguous"))).collect())
    }
}

/// Mean absolute PDE residual over `grid` (a uniform grid approximates the domain average).
pub fn mismatch_phys(model: &dyn FieldModel, v: &InputFunction, problem: &ProblemDef, grid: ArrayView2<f64>) -> Result<f64> {
    let d = model.derivs(problem, grid)?;
    let total: f64 = d.iter().zip(grid.rows()).map(|(d, p)| problem.residual(d, v.eval(p[0])).value.abs()).sum();
    Ok(total / d.len() as f64)
}

/// Root relative squared error of predictions against observed values.
pub fn rrse(pred: &[f64], observed: &[f64]) -> Result<f64> {
    if pred.len() != observed.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions vs {} observations", pred.len(), observed.len())));
    }
    let den: f64 = observed.iter().map(|u| u * u).sum();
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num: f64 = pred.iter().zip(observed).map(|(p, u)| (p - u).powi(2)).sum();
    Ok((num / den).sqrt())
}

/// Sparse measurements of one output function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    /// `K × d` locations.
    pub points: Array2<f64>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub noise: Option<f64>,
}

impl Observations {
    pub fn new(points: Array2<f64>, values: Vec<f64>) -> Result<Self> {
        if points.nrows() != values.len() || values.is_empty() {
            return Err(Error::DimensionMismatch(format!("{} locations, {} values", points.nrows(), values.len())));
        }
        if points.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidArgument("observation outside the unit domain".into()));
        }
        Ok(Observations { points, values, noise: None })
    }

    /// Observations at the listed rows of a query grid with known values.
    pub fn at_indices(queries: ArrayView2<f64>, values: &[f64], indices: &[usize]) -> Result<Self> {
        Self::new(queries.select(Axis(0), indices), indices.iter().map(|&i| values[i]).collect())
    }

    /// `k` distinct query-grid points drawn uniformly.
    pub fn random_on_grid<R: Rng + ?Sized>(queries: ArrayView2<f64>, values: &[f64], k: usize, rng: &mut R) -> Result<Self> {
        if k == 0 || k > queries.nrows() {
            return Err(Error::InvalidArgument(format!("cannot draw {k} of {} grid points", queries.nrows())));
        }
        let mut idx = sample(rng, queries.nrows(), k).into_vec();
        idx.sort_unstable();
        Self::at_indices(queries, values, &idx)
    }

    /// Adds Gaussian noise with standard deviation `level` times the RMS of the values.
    pub fn with_noise<R: Rng + ?Sized>(mut self, level: f64, rng: &mut R) -> Self {
        if level > 0.0 {
            let rms = (self.values.iter().map(|u| u * u).sum::<f64>() / self.values.len() as f64).sqrt();
            for u in &mut self.values {
                let z: f64 = StandardNormal.sample(rng);
                *u += level * rms * z;
            }
        }
        self.noise = Some(level);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn mismatch_obs(model: &dyn FieldModel, obs: &Observations) -> Result<f64> {
    rrse(&model.values(obs.points.view())?, &obs.values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    InterpolationOrBenign,
    HarmfulExtrapolation,
}

/// Baseline mismatch levels at the training correlation length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub eps0_phys: Option<f64>,
    pub eps0_obs: Option<f64>,
    pub alpha: f64,
}

impl Threshold {
    pub fn phys(&self) -> Option<f64> {
        self.eps0_phys.map(|e| self.alpha * e)
    }

    pub fn obs(&self) -> Option<f64> {
        self.eps0_obs.map(|e| self.alpha * e)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub e_phys: Option<f64>,
    pub e_obs: Option<f64>,
    pub threshold: Threshold,
    pub decision: Regime,
}

/// Flags harmful extrapolation when any available mismatch exceeds `α` times its baseline,
/// i.e. when the largest ratio `E / ε0` exceeds `α`.
pub fn decide(e_phys: Option<f64>, e_obs: Option<f64>, threshold: &Threshold) -> MismatchReport {
    let ratios = [(e_phys, threshold.eps0_phys), (e_obs, threshold.eps0_obs)];
    let worst = ratios.iter().filter_map(|&(e, e0)| Some(e? / e0?)).fold(f64::NEG_INFINITY, f64::max);
    let decision = if worst > threshold.alpha { Regime::HarmfulExtrapolation } else { Regime::InterpolationOrBenign };
    MismatchReport { e_phys, e_obs, threshold: *threshold, decision }
}

/// Which mismatch measures a calibration or detection uses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub physics: bool,
    /// Number of observation points, if observations are available.
    pub observations: Option<usize>,
    /// Points per axis of the residual quadrature grid.
    pub quadrature_per_axis: usize,
}

impl MeasureSpec {
    pub fn new(physics: bool, observations: Option<usize>) -> Self {
        MeasureSpec { physics, observations, quadrature_per_axis: 101 }
    }
}

/// Mismatch values of `model` on every function of `data`.
pub fn mismatch_on_dataset(model: &DeepONet, problem: &ProblemDef, data: &OperatorDataset, measures: &MeasureSpec, seed: u64) -> Result<Vec<(Option<f64>, Option<f64>)>> {
    let grid = problem.quadrature_grid(measures.quadrature_per_axis);
    let mut rng = seeded(derive_seed(seed, stream_id("observation-placement")));
    (0..data.len())
        .map(|i| {
            let v = data.input(i);
            let bound = BoundModel { model, v: &v.values };
            let e_phys = if measures.physics { Some(mismatch_phys(&bound, &InputFunction::new(v.clone())?, problem, grid.view())?) } else { None };
            let e_obs = match measures.observations {
                Some(k) => {
                    let obs = Observations::random_on_grid(data.queries.view(), data.targets.row(i).as_slice().expect("contiguous"), k, &mut rng)?;
                    Some(mismatch_obs(&bound, &obs)?)
                }
                None => None,
            };
            Ok((e_phys, e_obs))
        })
        .collect()
}

/// Physics and observation mismatch of one function; either may be absent.
type MeasurePair = (Option<f64>, Option<f64>);

/// `ε0` as the mean mismatch over `n` fresh functions at the training length scale.
pub fn calibrate_threshold(
    model: &DeepONet,
    problem: &ProblemDef,
    field: &GaussianFieldSpec,
    alpha: f64,
    n: usize,
    measures: &MeasureSpec,
    seed: u64,
) -> Result<Threshold> {
    if !(alpha >= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 1, got {alpha}")));
    }
    let data = generate_dataset_with_sensors(problem, field, n, model.config.sensors, seed)?;
    let m = mismatch_on_dataset(model, problem, &data, measures, seed)?;
    let avg = |pick: fn(&MeasurePair) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = m.iter().filter_map(pick).collect();
        (!vals.is_empty()).then(|| mean(&vals))
    };
    Ok(Threshold { eps0_phys: avg(|r| r.0), eps0_obs: avg(|r| r.1), alpha })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Lbfgs,
}

/// Settings shared by the fine-tuning methods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTuneSpec {
    pub subset: ParamSubset,
    pub lr: f64,
    pub iters: usize,
    pub w_f: f64,
    pub w_b: f64,
    /// Observation weight in the joint loss.
    pub lambda: f64,
    /// Rate of the periodic `λ ← λ + γ L_obs` update; `None` keeps `λ` fixed.
    #[serde(default)]
    pub adaptive_lambda: Option<f64>,
    pub optimizer: OptimizerKind,
    pub n_collocation: usize,
    pub n_boundary: usize,
    /// Training-set query points drawn per step in the joint loss (`None` = all).
    #[serde(default)]
    pub train_queries_per_step: Option<usize>,
    pub seed: u64,
}

impl FineTuneSpec {
    /// Physics fine-tune defaults for `problem`.
    pub fn physics(problem: &ProblemDef, subset: ParamSubset) -> Self {
        let (lr, iters) = match problem.name() {
            "antiderivative" => (0.002, 1000),
            "diffusion_reaction" => (0.001, 2000),
            _ => (0.001, 5000),
        };
        let (n_collocation, n_boundary) = if problem.query_dim() == 1 { (200, 1) } else { (2500, 200) };
        FineTuneSpec {
            subset,
            lr,
            iters,
            w_f: 1.0,
            w_b: 1.0,
            lambda: 0.3,
            adaptive_lambda: None,
            optimizer: OptimizerKind::Adam,
            n_collocation,
            n_boundary,
            train_queries_per_step: None,
            seed: 0,
        }
    }

    /// Observation-only fine-tune defaults.
    pub fn observations_alone(problem: &ProblemDef) -> Self {
        let mut s = Self::physics(problem, ParamSubset::BranchAndTrunk);
        if problem.query_dim() == 1 {
            s.optimizer = OptimizerKind::Adam;
            s.lr = 0.001;
            s.iters = 1000;
        } else {
            s.optimizer = OptimizerKind::Lbfgs;
            s.iters = 500;
        }
        s
    }

    /// Joint training-set plus observation fine-tune defaults.
    pub fn observations_together(problem: &ProblemDef) -> Self {
        let mut s = Self::physics(problem, ParamSubset::BranchAndTrunk);
        s.optimizer = OptimizerKind::Adam;
        s.lr = 0.001;
        s.iters = if problem.query_dim() == 1 { 1000 } else { 3000 };
        s.lambda = 0.3;
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FineTuneLog {
    /// `(iteration, loss)` every 100 iterations and at the end.
    pub losses: Vec<(usize, f64)>,
    /// Observation weight after each adaptive update (starting value first).
    pub lambda_trajectory: Vec<f64>,
    pub fallback_steps: Vec<usize>,
}

fn run_optimizer<F>(model: &DeepONet, spec: &FineTuneSpec, mut loss_grad: F) -> Result<(DeepONet, FineTuneLog)>
where
    F: FnMut(usize, &DeepONet) -> Result<(f64, Vec<f64>)>,
{
    let indices = model.subset_indices(spec.subset);
    let mut params = model.to_flat();
    let mut probe = model.clone();
    let mut log = FineTuneLog::default();
    match spec.optimizer {
        OptimizerKind::Adam => {
            adam_on_subset(
                &mut params,
                &indices,
                spec.lr,
                spec.iters,
                |it, p| {
                    probe.load_flat(p)?;
                    loss_grad(it, &probe)
                },
                |it, loss, _| {
                    if it % 100 == 0 || it == spec.iters {
                        log.losses.push((it, loss));
                    }
                },
            )?;
        }
        OptimizerKind::Lbfgs => {
            let base = params.clone();
            let mut sub: Vec<f64> = indices.iter().map(|&i| params[i]).collect();
            let mut failure: Option<Error> = None;
            let mut calls = 0;
            let report = lbfgs_minimize(
                |x| {
                    let mut full = base.clone();
                    for (v, &i) in x.iter().zip(&indices) {
                        full[i] = *v;
                    }
                    let r = probe.load_flat(&full).and_then(|_| loss_grad(calls, &probe));
                    calls += 1;
                    match r {
                        Ok((l, g)) => (l, indices.iter().map(|&i| g[i]).collect()),
                        Err(e) => {
                            failure = Some(e);
                            (f64::NAN, vec![0.0; indices.len()])
                        }
                    }
                },
                &mut sub,
                &LbfgsOptions { max_iters: spec.iters, ..Default::default() },
            );
            if let Some(e) = failure {
                return Err(e);
            }
            match report {
                Ok(r) => {
                    log.losses = r.loss_history.iter().enumerate().map(|(i, l)| (i, *l)).collect();
                    log.fallback_steps = r.fallback_steps;
                }
                // Keep the last accepted point when the line search gives up.
                Err(Error::LineSearchFailure(it)) => log.fallback_steps.push(it),
                Err(e) => return Err(e),
            }
            for (v, &i) in sub.iter().zip(&indices) {
                params[i] = *v;
            }
        }
    }
    let mut out = model.clone();
    out.load_flat(&params)?;
    Ok((out, log))
}

fn single_branch(v: &FunctionSample) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.values.clone()).expect("row")
}

/// Fine-tunes the chosen parameter subset on the physics loss for one input function.
pub fn ft_phys(model: &DeepONet, v: &InputFunction, problem: &ProblemDef, spec: &FineTuneSpec) -> Result<(DeepONet, FineTuneLog)> {
    let mut batch = PhysicsBatch::sample(problem, std::slice::from_ref(v), spec.n_collocation, spec.n_boundary, derive_seed(spec.seed, stream_id("ft-phys")));
    batch.w_f = spec.w_f;
    batch.w_b = spec.w_b;
    run_optimizer(model, spec, |_, m| {
        let (loss, g) = m.physics_loss_grad(&batch)?;
        Ok((loss.total, g))
    })
}

/// Fine-tunes on the observation MSE alone.
pub fn ft_obs_alone(model: &DeepONet, v: &FunctionSample, obs: &Observations, spec: &FineTuneSpec) -> Result<(DeepONet, FineTuneLog)> {
    let branch = single_branch(v);
    let targets = Array2::from_shape_vec((1, obs.len()), obs.values.clone()).expect("row");
    run_optimizer(model, spec, |_, m| m.data_loss_grad(branch.view(), obs.points.view(), targets.view()))
}

/// Fine-tunes on `L_T + λ L_obs` with the original training set.
pub fn ft_obs_together(model: &DeepONet, v: &FunctionSample, obs: &Observations, train: &OperatorDataset, spec: &FineTuneSpec) -> Result<(DeepONet, FineTuneLog)> {
    if !(spec.lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", spec.lambda)));
    }
    let branch = single_branch(v);
    let targets = Array2::from_shape_vec((1, obs.len()), obs.values.clone()).expect("row");
    let mut lambda = if spec.adaptive_lambda.is_some() { 0.1 } else { spec.lambda };
    let mut trajectory = vec![lambda];
    let mut rng = seeded(derive_seed(spec.seed, stream_id("ft-obs-t-queries")));
    let (out, mut log) = run_optimizer(model, spec, |it, m| {
        let (lt, mut g) = match spec.train_queries_per_step {
            Some(k) if k < train.num_queries() => {
                let sub = train.subsample_queries(k, &mut rng);
                m.data_loss_grad(train.branch.view(), sub.queries.view(), sub.targets.view())?
            }
            _ => m.data_loss_grad(train.branch.view(), train.queries.view(), train.targets.view())?,
        };
        let (lo, go) = m.data_loss_grad(branch.view(), obs.points.view(), targets.view())?;
        if let Some(gamma) = spec.adaptive_lambda {
            if it > 0 && it < spec.iters && it % 100 == 0 {
                // d(L_T + λ L_obs)/dλ = L_obs
                lambda += gamma * lo;
                trajectory.push(lambda);
            }
        }
        for (a, b) in g.iter_mut().zip(&go) {
            *a += lambda * b;
        }
        Ok((lt + lambda * lo, g))
    })?;
    log.lambda_trajectory = trajectory;
    Ok((out, log))
}

/// A freshly initialized network trained on the physics loss for a single input function.
pub fn train_pinn(config: DeepONetConfig, v: &InputFunction, problem: &ProblemDef, spec: &FineTuneSpec) -> Result<(DeepONet, FineTuneLog)> {
    let model = DeepONet::for_problem(problem, config);
    let spec = FineTuneSpec { subset: ParamSubset::BranchAndTrunk, ..spec.clone() };
    ft_phys(&model, v, problem, &spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::sensor_grid;
    use ndarray::array;

    #[test]
    fn rrse_cases() {
        let u = [1.0, -2.0, 0.5];
        assert_eq!(rrse(&u, &u).unwrap(), 0.0);
        assert_eq!(rrse(&[0.0; 3], &u).unwrap(), 1.0);
        let twice: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
        assert!((rrse(&twice, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(rrse(&[1.0], &[0.0]), Err(Error::ZeroReference));
    }

    #[test]
    fn exact_antiderivative_has_no_residual() {
        let p = ProblemDef::antiderivative();
        let v = InputFunction::new(FunctionSample::from_fn(&sensor_grid(100), |x| (3.0 * x).cos())).unwrap();
        let exact = ClosureModel(|p: &[f64]| PointDerivs { u: (3.0 * p[0]).sin() / 3.0, ux: (3.0 * p[0]).cos(), ..Default::default() });
        let e = mismatch_phys(&exact, &v, &p, p.quadrature_grid(101).view()).unwrap();
        assert!(e < 1e-6, "{e}");
        let zero = ClosureModel(|_: &[f64]| PointDerivs::default());
        let one = InputFunction::new(FunctionSample::from_fn(&sensor_grid(100), |_| 1.0)).unwrap();
        assert!((mismatch_phys(&zero, &one, &p, p.quadrature_grid(101).view()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decision_rule() {
        let t = Threshold { eps0_phys: Some(1.0), eps0_obs: Some(0.1), alpha: 1.5 };
        assert_eq!(decide(Some(1.4), Some(0.14), &t).decision, Regime::InterpolationOrBenign);
        assert_eq!(decide(Some(1.4), Some(0.16), &t).decision, Regime::HarmfulExtrapolation);
        assert_eq!(decide(Some(1.6), None, &t).decision, Regime::HarmfulExtrapolation);
        let t1 = t.with_alpha(1.0);
        assert_eq!(t1.phys(), t1.eps0_phys);
    }

    #[test]
    fn observations_validate_domain() {
        assert!(Observations::new(array![[1.5]], vec![1.0]).is_err());
        assert!(Observations::new(array![[0.5]], vec![]).is_err());
    }
}
