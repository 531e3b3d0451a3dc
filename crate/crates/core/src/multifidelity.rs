//! Gaussian process regression, two-fidelity co-kriging and multifidelity networks.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{matern15, KernelKind};
use crate::nd::activation::{Activation, ActivationKind};
use crate::nd::linalg::{solve_lower, CholeskyFactor, JITTER_CAP};
use crate::nd::mlp::{mlp_param_grad, Mlp};
use crate::nd::optim::{lbfgs_minimize, Adam, LbfgsOptions};
use crate::nd::rng::{derive_seed, seeded, stream_id};
use crate::problem::ProblemDef;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Box bounds on the GP hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GprBounds {
    pub length_scale: (f64, f64),
    pub signal_variance: (f64, f64),
    pub noise_variance: (f64, f64),
}

impl Default for GprBounds {
    fn default() -> Self {
        GprBounds { length_scale: (1e-2, 10.0), signal_variance: (1e-4, 1e2), noise_variance: (1e-10, 1.0) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// Noise variance optimized with the other hyperparameters.
    Fitted,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GprOptions {
    pub kernel: KernelKind,
    pub restarts: usize,
    pub max_iters: usize,
    pub noise: NoiseModel,
    pub bounds: GprBounds,
    pub seed: u64,
}

impl Default for GprOptions {
    fn default() -> Self {
        GprOptions { kernel: KernelKind::Rbf, restarts: 5, max_iters: 100, noise: NoiseModel::Fitted, bounds: GprBounds::default(), seed: 0 }
    }
}

impl GprOptions {
    pub fn with_kernel(kernel: KernelKind) -> Self {
        GprOptions { kernel, ..Default::default() }
    }
}

/// Isotropic kernel hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GprHyper {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

/// An exact GP posterior with constant mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GprModel {
    pub kernel: KernelKind,
    pub hyper: GprHyper,
    pub mean: f64,
    pub inputs: Array2<f64>,
    pub targets: Vec<f64>,
    pub factor: CholeskyFactor,
    pub alpha: Vec<f64>,
    pub log_marginal_likelihood: f64,
    /// Log marginal likelihood at the first restart's starting point.
    pub initial_log_marginal_likelihood: f64,
}

fn unit_kernel(kind: KernelKind, r: f64, l: f64) -> f64 {
    match kind {
        KernelKind::Matern15 => matern15(r, l),
        _ => (-0.5 * (r / l).powi(2)).exp(),
    }
}

/// Derivative of the unit kernel with respect to `log l`.
fn unit_kernel_dlog_l(kind: KernelKind, r: f64, l: f64) -> f64 {
    match kind {
        KernelKind::Matern15 => {
            let a = 3f64.sqrt() * r / l;
            a * a * (-a).exp()
        }
        _ => {
            let q = (r / l).powi(2);
            q * (-0.5 * q).exp()
        }
    }
}

fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn pairwise(x: ArrayView2<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, n, |i, j| distance(x.row(i), x.row(j)))
}

fn check_data(x: ArrayView2<f64>, y: &[f64], min: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} locations, {} targets", x.nrows(), y.len())));
    }
    if y.len() < min {
        return Err(Error::DegenerateData(format!("need at least {min} points, got {}", y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("non-finite data".into()));
    }
    for i in 0..x.nrows() {
        for j in 0..i {
            if distance(x.row(i), x.row(j)) == 0.0 {
                return Err(Error::DegenerateData(format!("duplicated location at rows {j} and {i}")));
            }
        }
    }
    Ok(())
}

fn cholesky_with_jitter(k: &DMatrix<f64>) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    let n = k.nrows();
    let mut jitter = 0.0;
    loop {
        let shifted = if jitter > 0.0 { k + DMatrix::identity(n, n) * jitter } else { k.clone() };
        if let Some(c) = shifted.cholesky() {
            return Ok((c, jitter));
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
        if jitter > JITTER_CAP * (1.0 + 1e-9) {
            return Err(Error::NotPsd { jitter: jitter / 10.0 });
        }
    }
}

/// Result of one likelihood evaluation with the linear mean coefficients profiled out.
struct Evaluation {
    nlml: f64,
    /// Gradient with respect to `(log l, log σ², log noise)`.
    grad: [f64; 3],
    beta: Vec<f64>,
    alpha: DVector<f64>,
    lower: DMatrix<f64>,
    jitter: f64,
}

/// Negative log marginal likelihood with mean `H β`, where `β` is its generalized least-squares estimate.
fn evaluate(kind: KernelKind, dist: &DMatrix<f64>, y: &DVector<f64>, h: &DMatrix<f64>, hyp: &GprHyper, want_grad: bool) -> Result<Evaluation> {
    let n = y.len();
    let (l, s2, nz) = (hyp.length_scale, hyp.signal_variance, hyp.noise_variance);
    let unit = dist.map(|r| unit_kernel(kind, r, l));
    let k = &unit * s2 + DMatrix::identity(n, n) * nz;
    let (chol, jitter) = cholesky_with_jitter(&k)?;
    let kinv_h = chol.solve(h);
    let kinv_y = chol.solve(y);
    let a = h.transpose() * &kinv_h;
    let b = h.transpose() * &kinv_y;
    let beta = a.clone().cholesky().map(|c| c.solve(&b)).ok_or_else(|| Error::DegenerateData("mean design is rank deficient".into()))?;
    let resid = y - h * &beta;
    let alpha = chol.solve(&resid);
    let lower = chol.l();
    let log_det: f64 = 2.0 * lower.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let nlml = 0.5 * resid.dot(&alpha) + 0.5 * log_det + 0.5 * n as f64 * LOG_2PI;
    let mut grad = [0.0; 3];
    if want_grad {
        // d(nlml)/dθ = ½ tr((K⁻¹ − ααᵀ) dK/dθ); β drops out by stationarity.
        let w = chol.inverse() - &alpha * alpha.transpose();
        let mut g = [0.0; 3];
        for j in 0..n {
            for i in 0..n {
                let wij = w[(i, j)];
                g[0] += wij * s2 * unit_kernel_dlog_l(kind, dist[(i, j)], l);
                g[1] += wij * s2 * unit[(i, j)];
            }
            g[2] += w[(j, j)] * nz;
        }
        grad = g.map(|v| 0.5 * v);
    }
    Ok(Evaluation { nlml, grad, beta: beta.iter().copied().collect(), alpha, lower, jitter })
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Maps an unconstrained coordinate into `log` of a bounded interval.
#[derive(Clone, Copy)]
struct LogBox {
    lo: f64,
    hi: f64,
}

impl LogBox {
    fn new((a, b): (f64, f64)) -> Self {
        LogBox { lo: a.ln(), hi: b.ln() }
    }

    fn value(&self, z: f64) -> f64 {
        (self.lo + (self.hi - self.lo) * sigmoid(z)).exp()
    }

    fn dlog_dz(&self, z: f64) -> f64 {
        let s = sigmoid(z);
        (self.hi - self.lo) * s * (1.0 - s)
    }

    fn coordinate(&self, v: f64) -> f64 {
        let t = ((v.ln() - self.lo) / (self.hi - self.lo)).clamp(1e-6, 1.0 - 1e-6);
        logit(t)
    }
}

struct Fit {
    hyper: GprHyper,
    eval: Evaluation,
    initial_nlml: f64,
}

/// Multi-start likelihood maximization with the mean design `h`.
fn fit_hyper(x: ArrayView2<f64>, y: &[f64], h: &DMatrix<f64>, opts: &GprOptions) -> Result<Fit> {
    if !matches!(opts.kernel, KernelKind::Rbf | KernelKind::Matern15) {
        return Err(Error::InvalidArgument(format!("GP regression supports rbf and matern15 kernels, got {:?}", opts.kernel)));
    }
    let dist = pairwise(x);
    let yv = DVector::from_column_slice(y);
    let boxes = [LogBox::new(opts.bounds.length_scale), LogBox::new(opts.bounds.signal_variance), LogBox::new(opts.bounds.noise_variance)];
    let fixed_noise = match opts.noise {
        NoiseModel::Fixed(v) if !(v >= 1e-10) => return Err(Error::InvalidArgument(format!("noise variance must be >= 1e-10, got {v}"))),
        NoiseModel::Fixed(v) => Some(v),
        NoiseModel::Fitted => None,
    };
    let hyper_of = |z: &[f64]| GprHyper {
        length_scale: boxes[0].value(z[0]),
        signal_variance: boxes[1].value(z[1]),
        noise_variance: fixed_noise.unwrap_or_else(|| boxes[2].value(z[2])),
    };
    let n_free = if fixed_noise.is_some() { 2 } else { 3 };
    let mean_y = y.iter().sum::<f64>() / y.len() as f64;
    let var_y = y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / y.len() as f64;
    let s2_0 = var_y.clamp(opts.bounds.signal_variance.0 * 1.01, opts.bounds.signal_variance.1 * 0.99);
    let mut rng = seeded(derive_seed(opts.seed, stream_id("gpr-restarts")));
    let mut starts = vec![vec![boxes[0].coordinate(0.3), boxes[1].coordinate(s2_0), boxes[2].coordinate((1e-6 * s2_0).max(1e-9))]];
    for _ in 1..opts.restarts.max(1) {
        starts.push((0..3).map(|_| rng.random_range(-3.0..3.0)).collect());
    }

    let objective = |z: &[f64]| -> (f64, Vec<f64>) {
        match evaluate(opts.kernel, &dist, &yv, h, &hyper_of(z), true) {
            Ok(e) => (e.nlml, (0..n_free).map(|k| e.grad[k] * boxes[k].dlog_dz(z[k])).collect()),
            Err(_) => (f64::INFINITY, vec![0.0; n_free]),
        }
    };
    let initial_nlml = objective(&starts[0][..n_free]).0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in &starts {
        let mut z = start[..n_free].to_vec();
        let lbfgs = LbfgsOptions { max_iters: opts.max_iters, grad_tol: 1e-7, ..Default::default() };
        match lbfgs_minimize(objective, &mut z, &lbfgs) {
            Ok(_) | Err(Error::LineSearchFailure(_)) => {}
            Err(Error::NonFiniteLoss { .. }) => continue,
            Err(e) => return Err(e),
        }
        let v = objective(&z).0;
        // Strict improvement only, so ties keep the earliest restart.
        if v.is_finite() && best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, z));
        }
    }
    let (_, z) = best.ok_or(Error::NotPsd { jitter: JITTER_CAP })?;
    let hyper = hyper_of(&z);
    let eval = evaluate(opts.kernel, &dist, &yv, h, &hyper, false)?;
    Ok(Fit { hyper, eval, initial_nlml })
}

fn model_from_fit(kernel: KernelKind, x: ArrayView2<f64>, targets: Vec<f64>, mean: f64, fit: Fit) -> GprModel {
    let n = targets.len();
    let lower = Array2::from_shape_fn((n, n), |(i, j)| fit.eval.lower[(i, j)]);
    GprModel {
        kernel,
        hyper: fit.hyper,
        mean,
        inputs: x.to_owned(),
        targets,
        factor: CholeskyFactor { lower, jitter: fit.eval.jitter },
        alpha: fit.eval.alpha.iter().copied().collect(),
        log_marginal_likelihood: -fit.eval.nlml,
        initial_log_marginal_likelihood: -fit.initial_nlml,
    }
}

/// Fits a constant-mean GP to `(x, y)` by maximizing the marginal likelihood.
pub fn gpr_fit(x: ArrayView2<f64>, y: &[f64], opts: &GprOptions) -> Result<GprModel> {
    check_data(x, y, 2)?;
    let h = DMatrix::from_element(y.len(), 1, 1.0);
    let fit = fit_hyper(x, y, &h, opts)?;
    let mean = fit.eval.beta[0];
    Ok(model_from_fit(opts.kernel, x, y.to_vec(), mean, fit))
}

impl GprModel {
    fn cross(&self, q: ArrayView1<f64>) -> Array1<f64> {
        let h = &self.hyper;
        Array1::from_iter(self.inputs.rows().into_iter().map(|xi| h.signal_variance * unit_kernel(self.kernel, distance(xi, q), h.length_scale)))
    }

    /// Posterior mean and latent variance at each row of `q`.
    pub fn predict(&self, q: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        if q.ncols() != self.inputs.ncols() {
            return Err(Error::DimensionMismatch(format!("query dimension {} vs {}", q.ncols(), self.inputs.ncols())));
        }
        let mut mean = Vec::with_capacity(q.nrows());
        let mut var = Vec::with_capacity(q.nrows());
        for row in q.rows() {
            let k = self.cross(row);
            mean.push(self.mean + k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>());
            let v = solve_lower(&self.factor.lower, k.view());
            var.push((self.hyper.signal_variance - v.dot(&v)).max(0.0));
        }
        Ok((mean, var))
    }

    pub fn predict_mean(&self, q: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.predict(q)?.0)
    }
}

pub fn gpr_predict(model: &GprModel, q: ArrayView2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    model.predict(q)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoMode {
    /// Scale estimated jointly with the discrepancy GP by maximum likelihood.
    Fitted,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfgprOptions {
    pub gpr: GprOptions,
    pub rho: RhoMode,
    /// Cap on the low-fidelity set; larger sets are subsampled uniformly.
    pub max_low: usize,
}

impl Default for MfgprOptions {
    fn default() -> Self {
        MfgprOptions { gpr: GprOptions::default(), rho: RhoMode::Fitted, max_low: 400 }
    }
}

/// `u_high(ξ) = ρ u_low(ξ) + δ(ξ)` with independent GPs for `u_low` and `δ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfgprModel {
    pub low: GprModel,
    pub rho: f64,
    pub delta: GprModel,
}

impl MfgprModel {
    pub fn predict(&self, q: ArrayView2<f64>) -> Result<Vec<f64>> {
        let low = self.low.predict_mean(q)?;
        let delta = self.delta.predict_mean(q)?;
        Ok(low.iter().zip(&delta).map(|(l, d)| self.rho * l + d).collect())
    }
}

/// Two-stage co-kriging: a GP on the low-fidelity set, then `(ρ, δ)` on the high-fidelity residuals.
pub fn mfgpr_fit(low_x: ArrayView2<f64>, low_y: &[f64], high_x: ArrayView2<f64>, high_y: &[f64], opts: &MfgprOptions) -> Result<MfgprModel> {
    if high_y.is_empty() {
        return Err(Error::DegenerateData("no high-fidelity data".into()));
    }
    if low_x.ncols() != high_x.ncols() {
        return Err(Error::DimensionMismatch(format!("low inputs have dimension {}, high {}", low_x.ncols(), high_x.ncols())));
    }
    let low = if low_y.len() > opts.max_low {
        let mut rng = seeded(derive_seed(opts.gpr.seed, stream_id("mfgpr-low-subsample")));
        let mut idx = sample(&mut rng, low_y.len(), opts.max_low).into_vec();
        idx.sort_unstable();
        let y: Vec<f64> = idx.iter().map(|&i| low_y[i]).collect();
        gpr_fit(low_x.select(Axis(0), &idx).view(), &y, &opts.gpr)?
    } else {
        gpr_fit(low_x, low_y, &opts.gpr)?
    };
    let m = low.predict_mean(high_x)?;
    match opts.rho {
        RhoMode::Fixed(rho) => {
            let resid: Vec<f64> = high_y.iter().zip(&m).map(|(y, l)| y - rho * l).collect();
            let delta = gpr_fit(high_x, &resid, &opts.gpr)?;
            Ok(MfgprModel { low, rho, delta })
        }
        RhoMode::Fitted => {
            check_data(high_x, high_y, 2)?;
            let n = high_y.len();
            let h = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { m[i] });
            let fit = fit_hyper(high_x, high_y, &h, &opts.gpr)?;
            let (mu, rho) = (fit.eval.beta[0], fit.eval.beta[1]);
            let resid: Vec<f64> = high_y.iter().zip(&m).map(|(y, l)| y - rho * l).collect();
            let delta = model_from_fit(opts.gpr.kernel, high_x, resid, mu, fit);
            Ok(MfgprModel { low, rho, delta })
        }
    }
}

pub fn mfgpr_predict(model: &MfgprModel, q: ArrayView2<f64>) -> Result<Vec<f64>> {
    model.predict(q)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfnnConfig {
    pub low_depth: usize,
    pub low_width: usize,
    pub high_depth: usize,
    pub high_width: usize,
    pub lr: f64,
    pub low_iters: usize,
    pub high_iters: usize,
    /// L2 penalty on the nonlinear correlation weights.
    pub l2: f64,
    /// Mini-batch size for the low-fidelity fit (`None` = full batch).
    #[serde(default)]
    pub low_batch: Option<usize>,
    pub seed: u64,
}

impl MfnnConfig {
    /// Sizes, learning rate and regularization used for `problem` with `n_high` observations.
    pub fn for_problem(problem: &ProblemDef, n_high: usize) -> Self {
        if problem.query_dim() == 1 {
            return MfnnConfig { low_depth: 4, low_width: 40, high_depth: 3, high_width: 30, lr: 0.005, low_iters: 10_000, high_iters: 10_000, l2: 1e-6, low_batch: None, seed: 0 };
        }
        let l2 = match n_high {
            0..=20 => 1e-5,
            21..=50 => 1e-6,
            51..=100 => 1e-7,
            _ => 1e-8,
        };
        MfnnConfig { low_depth: 4, low_width: 128, high_depth: 3, high_width: 15, lr: 0.001, low_iters: 10_000, high_iters: 10_000, l2, low_batch: None, seed: 0 }
    }

    fn sizes(input: usize, depth: usize, width: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat_n(width, depth.saturating_sub(2)));
        s.push(1);
        s
    }
}

/// Low-fidelity net plus linear and nonlinear correlation nets on `(ξ, y_low)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfnnModel {
    pub low: Mlp,
    pub linear: Mlp,
    pub nonlinear: Mlp,
    pub l2: f64,
    pub low_loss: f64,
    pub high_loss: f64,
}

fn mse_grad(pred: &Array2<f64>, target: ArrayView1<f64>) -> (f64, Array2<f64>) {
    let n = pred.nrows() as f64;
    let diff = &pred.column(0) - &target;
    let g = (&diff * (2.0 / n)).insert_axis(Axis(1)).to_owned();
    (diff.dot(&diff) / n, g)
}

fn augmented(x: ArrayView2<f64>, y_low: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[x, y_low.view()]).expect("same rows")
}

impl MfnnModel {
    pub fn predict_low(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.low.forward(x)?.column(0).to_vec())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        let z = augmented(x, &self.low.forward(x)?);
        let a = self.linear.forward(z.view())?;
        let b = self.nonlinear.forward(z.view())?;
        Ok(a.column(0).iter().zip(b.column(0)).map(|(p, q)| p + q).collect())
    }
}

/// Fits the low-fidelity net to `(low_x, low_y)` then the correlation nets to the high-fidelity data.
pub fn mfnn_fit(low_x: ArrayView2<f64>, low_y: &[f64], high_x: ArrayView2<f64>, high_y: &[f64], cfg: &MfnnConfig) -> Result<MfnnModel> {
    if high_y.is_empty() || low_y.is_empty() {
        return Err(Error::DegenerateData("multifidelity fit needs low and high data".into()));
    }
    if low_x.nrows() != low_y.len() || high_x.nrows() != high_y.len() || low_x.ncols() != high_x.ncols() {
        return Err(Error::DimensionMismatch("multifidelity data shapes disagree".into()));
    }
    let d = low_x.ncols();
    let mut rng = seeded(derive_seed(cfg.seed, stream_id("mfnn-init")));
    let silu = Activation::plain(ActivationKind::Silu);
    let mut low = Mlp::new(&MfnnConfig::sizes(d, cfg.low_depth, cfg.low_width), silu, false, &mut rng);
    let mut linear = Mlp::new(&[d + 1, 1], Activation::plain(ActivationKind::Identity), false, &mut rng);
    let mut nonlinear = Mlp::new(&MfnnConfig::sizes(d + 1, cfg.high_depth, cfg.high_width), silu, false, &mut rng);

    let ly = Array1::from_vec(low_y.to_vec());
    let mut batch_rng = seeded(derive_seed(cfg.seed, stream_id("mfnn-batches")));
    let mut flat = low.params.to_flat();
    let mut adam = Adam::new(flat.len(), cfg.lr);
    let mut low_loss = f64::NAN;
    for it in 0..cfg.low_iters {
        let (loss, g) = match cfg.low_batch {
            Some(b) if b < low_y.len() => {
                let idx = sample(&mut batch_rng, low_y.len(), b).into_vec();
                let xb = low_x.select(Axis(0), &idx);
                let yb = ly.select(Axis(0), &idx);
                mlp_param_grad(&low, xb.view(), |p| mse_grad(p, yb.view()))?
            }
            _ => mlp_param_grad(&low, low_x, |p| mse_grad(p, ly.view()))?,
        };
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        low_loss = loss;
        adam.step(&mut flat, &g.to_flat());
        low.params.load_flat(&flat)?;
    }

    let z = augmented(high_x, &low.forward(high_x)?);
    let hy = Array1::from_vec(high_y.to_vec());
    let n_lin = linear.params.num_params();
    let mut flat = linear.params.to_flat();
    nonlinear.params.flatten_into(&mut flat);
    let mut adam = Adam::new(flat.len(), cfg.lr);
    let mut high_loss = f64::NAN;
    for it in 0..cfg.high_iters {
        // MSE(a + b, y) has the parameter gradients of MSE(a, y - b) and MSE(b, y - a).
        let a = linear.forward(z.view())?;
        let b = nonlinear.forward(z.view())?;
        let (lin_loss, _) = mse_grad(&(&a + &b), hy.view());
        let target_for_linear = &hy - &b.column(0);
        let target_for_nonlinear = &hy - &a.column(0);
        let (_, g_lin) = mlp_param_grad(&linear, z.view(), |p| mse_grad(p, target_for_linear.view()))?;
        let (_, mut g_nl) = mlp_param_grad(&nonlinear, z.view(), |p| mse_grad(p, target_for_nonlinear.view()))?;
        let mut penalty = 0.0;
        for (gw, w) in g_nl.weights.iter_mut().zip(&nonlinear.params.weights) {
            penalty += w.iter().map(|v| v * v).sum::<f64>();
            gw.scaled_add(2.0 * cfg.l2, w);
        }
        let loss = lin_loss + cfg.l2 * penalty;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        high_loss = lin_loss;
        let mut g = g_lin.to_flat();
        g_nl.flatten_into(&mut g);
        adam.step(&mut flat, &g);
        linear.params.load_flat(&flat[..n_lin])?;
        nonlinear.params.load_flat(&flat[n_lin..])?;
    }
    Ok(MfnnModel { low, linear, nonlinear, l2: cfg.l2, low_loss, high_loss })
}

pub fn mfnn_predict(model: &MfnnModel, x: ArrayView2<f64>) -> Result<Vec<f64>> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::sensor_grid;

    fn column(xs: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).unwrap()
    }

    #[test]
    fn interpolates_noiseless_data() {
        let xs: Vec<f64> = (0..7).map(|i| i as f64 / 6.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (4.0 * x).sin()).collect();
        let x = column(&xs);
        let opts = GprOptions { noise: NoiseModel::Fixed(1e-10), ..Default::default() };
        let m = gpr_fit(x.view(), &ys, &opts).unwrap();
        let (mean, var) = m.predict(x.view()).unwrap();
        for (p, y) in mean.iter().zip(&ys) {
            assert!((p - y).abs() < 1e-6, "{p} vs {y}");
        }
        assert!(var.iter().all(|v| *v < 1e-6));
        assert!(m.log_marginal_likelihood >= m.initial_log_marginal_likelihood);
    }

    #[test]
    fn constant_targets_give_constant_mean() {
        let x = column(&[0.1, 0.4, 0.5, 0.9]);
        let m = gpr_fit(x.view(), &[2.5; 4], &GprOptions::default()).unwrap();
        let q = column(&sensor_grid(21));
        for p in m.predict_mean(q.view()).unwrap() {
            assert!((p - 2.5).abs() < 1e-3, "{p}");
        }
    }

    #[test]
    fn far_variance_reverts_to_prior() {
        let x = column(&[0.0, 0.05]);
        let m = gpr_fit(x.view(), &[1.0, 1.1], &GprOptions::default()).unwrap();
        let far = column(&[1e3]);
        let (_, var) = m.predict(far.view()).unwrap();
        assert!((var[0] - m.hyper.signal_variance).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_data() {
        let x = column(&[0.2, 0.2, 0.5]);
        assert!(matches!(gpr_fit(x.view(), &[1.0, 2.0, 3.0], &GprOptions::default()), Err(Error::DegenerateData(_))));
        let one = column(&[0.2]);
        assert!(matches!(gpr_fit(one.view(), &[1.0], &GprOptions::default()), Err(Error::DegenerateData(_))));
        let periodic = GprOptions::with_kernel(KernelKind::ExpSineSquared);
        assert!(gpr_fit(column(&[0.1, 0.2]).view(), &[0.0, 1.0], &periodic).is_err());
        let empty = Array2::zeros((0, 1));
        assert!(matches!(mfgpr_fit(x.view(), &[1.0, 2.0, 3.0], empty.view(), &[], &MfgprOptions::default()), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn likelihood_gradient_matches_finite_differences() {
        let xs: Vec<f64> = (0..9).map(|i| (i as f64 * 0.37).fract()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).cos() + 0.1 * x).collect();
        let dist = pairwise(column(&xs).view());
        let y = DVector::from_column_slice(&ys);
        let h = DMatrix::from_element(9, 1, 1.0);
        for kind in [KernelKind::Rbf, KernelKind::Matern15] {
            let base = [0.3f64.ln(), 0.7f64.ln(), 1e-3f64.ln()];
            let at = |p: [f64; 3]| {
                let hyp = GprHyper { length_scale: p[0].exp(), signal_variance: p[1].exp(), noise_variance: p[2].exp() };
                evaluate(kind, &dist, &y, &h, &hyp, true).unwrap()
            };
            let e = at(base);
            for k in 0..3 {
                let step = 1e-6;
                let mut p = base;
                p[k] += step;
                let up = at(p).nlml;
                p[k] -= 2.0 * step;
                let down = at(p).nlml;
                let fd = (up - down) / (2.0 * step);
                assert!((fd - e.grad[k]).abs() < 1e-5 * fd.abs().max(1.0), "{kind:?} {k}: {fd} vs {}", e.grad[k]);
            }
        }
    }

    #[test]
    fn matern_kernel_is_accepted() {
        let xs = sensor_grid(8);
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let m = gpr_fit(column(&xs).view(), &ys, &GprOptions::with_kernel(KernelKind::Matern15)).unwrap();
        let p = m.predict_mean(column(&[0.5]).view()).unwrap()[0];
        assert!((p - 0.25).abs() < 1e-2);
    }

    #[test]
    fn mfnn_fits_high_data_without_regularization() {
        let lx = sensor_grid(40);
        let ly: Vec<f64> = lx.iter().map(|x| (2.0 * x).sin()).collect();
        let hx = [0.1f64, 0.3, 0.5, 0.7, 0.9];
        let hy: Vec<f64> = hx.iter().map(|x| 1.5 * (2.0 * x).sin() + 0.2 * x).collect();
        let cfg = MfnnConfig { low_depth: 3, low_width: 20, high_depth: 3, high_width: 10, lr: 0.005, low_iters: 2000, high_iters: 3000, l2: 0.0, low_batch: None, seed: 1 };
        let m = mfnn_fit(column(&lx).view(), &ly, column(&hx).view(), &hy, &cfg).unwrap();
        let pred = m.predict(column(&hx).view()).unwrap();
        let mse = pred.iter().zip(&hy).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / hy.len() as f64;
        assert!(mse < 1e-4, "{mse}");
    }
}
