//! DeepONet model, data and physics losses, training and evaluation.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::OperatorDataset;
use crate::error::{Error, Result};
use crate::fields::{GaussianFieldSpec, GrfSampler};
use crate::nd::activation::{Activation, ActivationKind};
use crate::nd::mlp::{BatchJets, JetTape, Mlp, MlpParams};
use crate::nd::optim::Adam;
use crate::nd::rng::{derive_seed, seeded, stream_id};
use crate::problem::{BoundaryTerm, HardConstraint, InputFunction, PointDerivs, ProblemDef};

/// Shape of one sub-network. `depth` counts layers including the input layer,
/// so depth 3 means one hidden layer followed by the output layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub depth: usize,
    pub width: usize,
    pub activation: ActivationKind,
    /// Scale factor `n` of a layer-wise adaptive activation, if enabled.
    #[serde(default)]
    pub laaf_scale: Option<f64>,
}

impl NetConfig {
    pub fn new(depth: usize, width: usize, activation: ActivationKind) -> Self {
        NetConfig { depth, width, activation, laaf_scale: None }
    }

    fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat_n(self.width, self.depth.saturating_sub(2)));
        s.push(output);
        s
    }

    fn activation(&self) -> Activation {
        match self.laaf_scale {
            Some(n) => Activation::adaptive(self.activation, n),
            None => Activation::plain(self.activation),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepONetConfig {
    pub sensors: usize,
    pub query_dim: usize,
    pub branch: NetConfig,
    pub trunk: NetConfig,
    /// Number of basis functions `p` (output width of both nets).
    pub latent: usize,
    /// Apply the trunk activation to the trunk output as well.
    #[serde(default = "default_true")]
    pub trunk_activate_output: bool,
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl DeepONetConfig {
    /// Branch and trunk of depth 3, width 40; ReLU branch, tanh trunk.
    pub fn antiderivative(seed: u64) -> Self {
        DeepONetConfig {
            sensors: 100,
            query_dim: 1,
            branch: NetConfig::new(3, 40, ActivationKind::Relu),
            trunk: NetConfig::new(3, 40, ActivationKind::Tanh),
            latent: 40,
            trunk_activate_output: true,
            seed,
        }
    }

    /// Space-time problems: ReLU branch of depth 3, GELU trunk of depth 4.
    pub fn space_time(width: usize, seed: u64) -> Self {
        DeepONetConfig {
            sensors: 100,
            query_dim: 2,
            branch: NetConfig::new(3, width, ActivationKind::Relu),
            trunk: NetConfig::new(4, width, ActivationKind::Gelu),
            latent: width,
            trunk_activate_output: true,
            seed,
        }
    }

    pub fn for_problem(problem: &ProblemDef, width: usize, seed: u64) -> Self {
        if problem.query_dim() == 1 {
            let mut c = Self::antiderivative(seed);
            c.branch.width = width;
            c.trunk.width = width;
            c.latent = width;
            c
        } else {
            Self::space_time(width, seed)
        }
    }
}

/// Which parameters a fine-tune may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSubset {
    BranchAndTrunk,
    Branch,
    Trunk,
    TrunkLast,
}

impl ParamSubset {
    pub const ALL: [ParamSubset; 4] = [ParamSubset::BranchAndTrunk, ParamSubset::Branch, ParamSubset::Trunk, ParamSubset::TrunkLast];

    pub fn name(self) -> &'static str {
        match self {
            ParamSubset::BranchAndTrunk => "branch_trunk",
            ParamSubset::Branch => "branch",
            ParamSubset::Trunk => "trunk",
            ParamSubset::TrunkLast => "trunk_last",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepONet {
    pub config: DeepONetConfig,
    pub branch: Mlp,
    pub trunk: Mlp,
    pub bias: f64,
    pub constraint: Option<HardConstraint>,
}

fn row_view(x: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, x.len()), x).expect("row view")
}

impl DeepONet {
    pub fn new(config: DeepONetConfig) -> Self {
        let mut rng = seeded(config.seed);
        let branch = Mlp::new(&config.branch.sizes(config.sensors, config.latent), config.branch.activation(), false, &mut rng);
        let trunk = Mlp::new(
            &config.trunk.sizes(config.query_dim, config.latent),
            config.trunk.activation(),
            config.trunk_activate_output,
            &mut rng,
        );
        DeepONet { config, branch, trunk, bias: 0.0, constraint: None }
    }

    pub fn for_problem(problem: &ProblemDef, config: DeepONetConfig) -> Self {
        let mut m = Self::new(config);
        m.constraint = problem.constraint();
        m
    }

    pub fn num_params(&self) -> usize {
        self.branch.params.num_params() + self.trunk.params.num_params() + 1
    }

    /// Flat layout: branch parameters, trunk parameters, then the output bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.branch.params.flatten_into(&mut v);
        self.trunk.params.flatten_into(&mut v);
        v.push(self.bias);
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!("expected {} parameters, got {}", self.num_params(), flat.len())));
        }
        let nb = self.branch.params.load_flat(flat)?;
        let nt = self.trunk.params.load_flat(&flat[nb..])?;
        self.bias = flat[nb + nt];
        Ok(())
    }

    pub fn branch_range(&self) -> Range<usize> {
        0..self.branch.params.num_params()
    }

    pub fn trunk_range(&self) -> Range<usize> {
        let nb = self.branch.params.num_params();
        nb..nb + self.trunk.params.num_params()
    }

    pub fn bias_index(&self) -> usize {
        self.num_params() - 1
    }

    /// Flat indices updated when fine-tuning `subset`. The output bias belongs to
    /// the whole-network subset only.
    pub fn subset_indices(&self, subset: ParamSubset) -> Vec<usize> {
        match subset {
            ParamSubset::BranchAndTrunk => (0..self.num_params()).collect(),
            ParamSubset::Branch => self.branch_range().collect(),
            ParamSubset::Trunk => self.trunk_range().collect(),
            ParamSubset::TrunkLast => {
                let off = self.trunk_range().start;
                let tp = &self.trunk.params;
                let last = tp.num_layers() - 1;
                let mut idx: Vec<usize> = tp.layer_range(last).map(|i| i + off).collect();
                if let Some(s) = tp.slope_index(last) {
                    idx.push(s + off);
                }
                idx
            }
        }
    }

    fn check_sensors(&self, branch: &ArrayView2<f64>) -> Result<()> {
        if branch.ncols() != self.config.sensors {
            return Err(Error::DimensionMismatch(format!("model expects {} sensors, got {}", self.config.sensors, branch.ncols())));
        }
        Ok(())
    }

    fn constraint_factor(&self, queries: &ArrayView2<f64>) -> Option<Array1<f64>> {
        self.constraint.map(|c| queries.column(c.coord).to_owned())
    }

    /// Predictions `n × Q` for `n` input functions on `Q` shared query points.
    pub fn predict_batch(&self, branch: ArrayView2<f64>, queries: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_sensors(&branch)?;
        let b = self.branch.forward(branch)?;
        let t = self.trunk.forward(queries)?;
        let mut p = b.dot(&t.t()) + self.bias;
        if let Some(a) = self.constraint_factor(&queries) {
            p *= &a.view().insert_axis(Axis(0));
        }
        Ok(p)
    }

    pub fn predict(&self, v: &[f64], xi: &[f64]) -> Result<f64> {
        Ok(self.predict_batch(row_view(v), row_view(xi))?[[0, 0]])
    }

    /// Predictions for one input function on many query points.
    pub fn predict_field(&self, v: &[f64], queries: ArrayView2<f64>) -> Result<Vec<f64>> {
        Ok(self.predict_batch(row_view(v), queries)?.row(0).to_vec())
    }

    fn assemble_grad(&self, gb: MlpParams, gt: MlpParams, gbias: f64) -> Result<Vec<f64>> {
        let mut flat = Vec::with_capacity(self.num_params());
        gb.flatten_into(&mut flat);
        gt.flatten_into(&mut flat);
        flat.push(gbias);
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(i));
        }
        Ok(flat)
    }

    /// Mean squared error over all `(function, query)` pairs and its flat gradient.
    pub fn data_loss_grad(&self, branch: ArrayView2<f64>, queries: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Vec<f64>)> {
        self.check_sensors(&branch)?;
        let (bj, btape) = self.branch.forward_jet(branch, 0, 0)?;
        let (tj, ttape) = self.trunk.forward_jet(queries, 0, 0)?;
        let (b, t) = (&bj.parts[0], &tj.parts[0]);
        let raw = b.dot(&t.t()) + self.bias;
        let factor = self.constraint_factor(&queries);
        let pred = match &factor {
            Some(a) => &raw * &a.view().insert_axis(Axis(0)),
            None => raw,
        };
        if pred.dim() != targets.dim() {
            return Err(Error::DimensionMismatch(format!("predictions {:?} vs targets {:?}", pred.dim(), targets.dim())));
        }
        let diff = &pred - &targets;
        let count = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
        let mut g = diff * (2.0 / count);
        if let Some(a) = &factor {
            g *= &a.view().insert_axis(Axis(0));
        }
        let gb = g.dot(t);
        let gt = g.t().dot(b);
        let gbias = g.sum();
        let pb = self.branch.backward(&btape, &BatchJets { parts: vec![gb] });
        let pt = self.trunk.backward(&ttape, &BatchJets { parts: vec![gt] });
        Ok((loss, self.assemble_grad(pb, pt, gbias)?))
    }

    /// Value and derivatives of the prediction for input `v` at `points`, as
    /// required by `problem`'s residual.
    pub fn point_derivs(&self, problem: &ProblemDef, v: &[f64], points: ArrayView2<f64>) -> Result<Vec<PointDerivs>> {
        let b = self.branch.forward(row_view(v))?;
        let b = b.row(0);
        let orders = problem.jet_orders();
        let mut out = vec![PointDerivs::default(); points.nrows()];
        for (c, &order) in orders.iter().enumerate() {
            let (tj, _) = self.trunk.forward_jet(points, c, order)?;
            for (j, d) in out.iter_mut().enumerate() {
                let raw: Vec<f64> = tj.parts.iter().enumerate().map(|(k, t)| t.row(j).dot(&b) + if k == 0 { self.bias } else { 0.0 }).collect();
                let mut jet = crate::nd::jet::Jet2::new(raw[0], raw.get(1).copied().unwrap_or(0.0), raw.get(2).copied().unwrap_or(0.0));
                if let Some(hc) = &self.constraint {
                    jet = hc.apply_jet(points.row(j).as_slice().expect("contiguous"), c, jet);
                }
                if c == 0 {
                    d.u = jet.value;
                    d.ux = jet.d1;
                    d.uxx = if order >= 2 { jet.d2 } else { 0.0 };
                } else {
                    d.ut = jet.d1;
                }
            }
        }
        Ok(out)
    }

    /// Physics loss `w_F · mean r² + w_B · mean b²` and its flat gradient.
    pub fn physics_loss_grad(&self, batch: &PhysicsBatch) -> Result<(PhysicsLoss, Vec<f64>)> {
        let problem = &batch.problem;
        let n = batch.branch.nrows();
        let npts = batch.collocation.nrows();
        let (bj, btape) = self.branch.forward_jet(batch.branch.view(), 0, 0)?;
        let b = &bj.parts[0];
        let mut gb = Array2::<f64>::zeros(b.raw_dim());
        let mut gbias = 0.0;
        let mut gtrunk = self.trunk.params.zeros_like();
        let orders = problem.jet_orders();

        let mut residual_loss = 0.0;
        if batch.w_f != 0.0 && npts > 0 {
            let passes: Vec<(BatchJets, JetTape)> =
                orders.iter().enumerate().map(|(c, &o)| self.trunk.forward_jet(batch.collocation.view(), c, o)).collect::<Result<_>>()?;
            // raw[c][k] is npts × n
            let raw: Vec<Vec<Array2<f64>>> = passes
                .iter()
                .map(|(tj, _)| tj.parts.iter().enumerate().map(|(k, t)| if k == 0 { t.dot(&b.t()) + self.bias } else { t.dot(&b.t()) }).collect())
                .collect();
            let mut g: Vec<Vec<Array2<f64>>> = raw.iter().map(|p| p.iter().map(|a| Array2::zeros(a.raw_dim())).collect()).collect();
            let scale = 2.0 * batch.w_f / (n * npts) as f64;
            for j in 0..npts {
                let point = batch.collocation.row(j);
                let point = point.as_slice().expect("contiguous");
                for i in 0..n {
                    let jets: Vec<crate::nd::jet::Jet2> = raw
                        .iter()
                        .enumerate()
                        .map(|(c, p)| {
                            let get = |k: usize| p.get(k).map_or(0.0, |a| a[[j, i]]);
                            let jet = crate::nd::jet::Jet2::new(get(0), get(1), get(2));
                            match &self.constraint {
                                Some(hc) => hc.apply_jet(point, c, jet),
                                None => jet,
                            }
                        })
                        .collect();
                    let d = PointDerivs {
                        u: jets[0].value,
                        ux: jets[0].d1,
                        uxx: jets[0].d2,
                        ut: jets.get(1).map_or(0.0, |j| j.d1),
                    };
                    let r = problem.residual(&d, batch.input_at_collocation[[i, j]]);
                    residual_loss += r.value * r.value;
                    let gr = scale * r.value;
                    let mut cot = vec![[gr * r.d_u, gr * r.d_ux, gr * r.d_uxx]];
                    if jets.len() > 1 {
                        cot.push([0.0, gr * r.d_ut, 0.0]);
                    }
                    for (c, gc) in cot.into_iter().enumerate() {
                        let gc = match &self.constraint {
                            Some(hc) => hc.pullback(point, c, gc),
                            None => gc,
                        };
                        for (k, gk) in g[c].iter_mut().enumerate() {
                            gk[[j, i]] = gc[k];
                        }
                    }
                }
            }
            residual_loss /= (n * npts) as f64;
            for (c, (tj, tape)) in passes.iter().enumerate() {
                let mut gt_parts = Vec::with_capacity(tj.parts.len());
                for (k, t) in tj.parts.iter().enumerate() {
                    let gk = &g[c][k];
                    gt_parts.push(gk.dot(b));
                    gb += &gk.t().dot(t);
                    if k == 0 {
                        gbias += gk.sum();
                    }
                }
                gtrunk.accumulate(&self.trunk.backward(tape, &BatchJets { parts: gt_parts }));
            }
        }

        let mut boundary_loss = 0.0;
        let bd = &batch.boundary;
        if batch.w_b != 0.0 && !bd.targets.is_empty() {
            let (tj, tape) = self.trunk.forward_jet(bd.points.view(), 0, 0)?;
            let t = &tj.parts[0];
            let mut values = vec![0.0; bd.owner.len()];
            for (r, v) in values.iter_mut().enumerate() {
                let raw = t.row(r).dot(&b.row(bd.owner[r])) + self.bias;
                let point = bd.points.row(r);
                *v = match &self.constraint {
                    Some(hc) => hc.apply(point.as_slice().expect("contiguous"), raw),
                    None => raw,
                };
            }
            let mut res = bd.targets.iter().map(|&y| -y).collect::<Vec<f64>>();
            for r in 0..values.len() {
                res[bd.term[r]] += bd.coeff[r] * values[r];
            }
            let m = res.len() as f64;
            boundary_loss = res.iter().map(|x| x * x).sum::<f64>() / m;
            let mut gt = Array2::<f64>::zeros(t.raw_dim());
            for r in 0..values.len() {
                let mut gu = 2.0 * batch.w_b * res[bd.term[r]] * bd.coeff[r] / m;
                if let Some(hc) = &self.constraint {
                    gu = hc.apply(bd.points.row(r).as_slice().expect("contiguous"), gu);
                }
                let i = bd.owner[r];
                gt.row_mut(r).scaled_add(gu, &b.row(i));
                gb.row_mut(i).scaled_add(gu, &t.row(r));
                gbias += gu;
            }
            gtrunk.accumulate(&self.trunk.backward(&tape, &BatchJets { parts: vec![gt] }));
        }

        let gbranch = self.branch.backward(&btape, &BatchJets { parts: vec![gb] });
        let grad = self.assemble_grad(gbranch, gtrunk, gbias)?;
        let loss = PhysicsLoss { residual: residual_loss, boundary: boundary_loss, total: batch.w_f * residual_loss + batch.w_b * boundary_loss };
        Ok((loss, grad))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhysicsLoss {
    pub residual: f64,
    pub boundary: f64,
    pub total: f64,
}

/// Flattened boundary/initial conditions: one row per evaluation point.
#[derive(Clone, Debug, Default)]
pub struct BoundaryBatch {
    pub points: Array2<f64>,
    /// Input function each point belongs to.
    pub owner: Vec<usize>,
    pub coeff: Vec<f64>,
    /// Condition each point contributes to.
    pub term: Vec<usize>,
    pub targets: Vec<f64>,
}

impl BoundaryBatch {
    pub fn from_terms(per_function: &[Vec<BoundaryTerm>], dim: usize) -> Self {
        let mut rows = Vec::new();
        let mut owner = Vec::new();
        let mut coeff = Vec::new();
        let mut term = Vec::new();
        let mut targets = Vec::new();
        for (i, terms) in per_function.iter().enumerate() {
            for t in terms {
                for (p, c) in &t.points {
                    rows.extend_from_slice(p);
                    owner.push(i);
                    coeff.push(*c);
                    term.push(targets.len());
                }
                targets.push(t.target);
            }
        }
        let points = Array2::from_shape_vec((owner.len(), dim), rows).expect("boundary points share a dimension");
        BoundaryBatch { points, owner, coeff, term, targets }
    }
}

/// Everything a physics loss needs for a set of input functions.
#[derive(Clone, Debug)]
pub struct PhysicsBatch {
    pub problem: ProblemDef,
    /// `n × m` sensor values.
    pub branch: Array2<f64>,
    /// `N × d` interior collocation points shared by all functions.
    pub collocation: Array2<f64>,
    /// `n × N` input values `v(x_j)` at each collocation point.
    pub input_at_collocation: Array2<f64>,
    pub boundary: BoundaryBatch,
    pub w_f: f64,
    pub w_b: f64,
}

impl PhysicsBatch {
    /// Samples `n_colloc` interior and about `n_boundary` boundary points per function.
    pub fn sample(problem: &ProblemDef, inputs: &[InputFunction], n_colloc: usize, n_boundary: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        let collocation = problem.sample_collocation(n_colloc, &mut rng);
        Self::with_collocation(problem, inputs, collocation, n_boundary, seed)
    }

    pub fn with_collocation(problem: &ProblemDef, inputs: &[InputFunction], collocation: Array2<f64>, n_boundary: usize, seed: u64) -> Self {
        let mut rng = seeded(derive_seed(seed, stream_id("boundary")));
        let m = inputs.first().map_or(0, |f| f.sample.len());
        let mut branch = Array2::zeros((inputs.len(), m));
        for (i, f) in inputs.iter().enumerate() {
            branch.row_mut(i).assign(&ndarray::ArrayView1::from(&f.sample.values));
        }
        let input_at_collocation = Array2::from_shape_fn((inputs.len(), collocation.nrows()), |(i, j)| inputs[i].eval(collocation[[j, 0]]));
        let terms: Vec<Vec<BoundaryTerm>> = inputs.iter().map(|f| problem.sample_boundary(n_boundary, f, &mut rng)).collect();
        let boundary = BoundaryBatch::from_terms(&terms, problem.query_dim());
        PhysicsBatch { problem: *problem, branch, collocation, input_at_collocation, boundary, w_f: 1.0, w_b: 1.0 }
    }
}

/// `‖pred − true‖₂ / ‖true‖₂`.
pub fn l2_relative_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions vs {} references", pred.len(), truth.len())));
    }
    let den: f64 = truth.iter().map(|t| t * t).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>().sqrt();
    Ok(num / den)
}

/// Per-function relative L2 errors of `model` on `data`.
pub fn evaluate(model: &DeepONet, data: &OperatorDataset) -> Result<Vec<f64>> {
    let pred = model.predict_batch(data.branch.view(), data.queries.view())?;
    pred.rows()
        .into_iter()
        .zip(data.targets.rows())
        .map(|(p, t)| l2_relative_error(p.as_slice().expect("contiguous"), t.as_slice().expect("contiguous")))
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len().max(1) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub iters: usize,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Query points drawn afresh each step; `None` trains on every query (full batch).
    #[serde(default)]
    pub queries_per_step: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_log_every() -> usize {
    1000
}

impl TrainConfig {
    pub fn new(lr: f64, iters: usize) -> Self {
        TrainConfig { lr, iters, log_every: 1000, queries_per_step: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub train_loss: f64,
    /// `(label, mean relative L2 error)` per test set.
    pub test_errors: Vec<(String, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.train_loss)
    }

    pub fn loss_at(&self, iteration: usize) -> Option<f64> {
        self.records.iter().find(|r| r.iteration == iteration).map(|r| r.train_loss)
    }
}

/// Labelled evaluation set logged during training.
#[derive(Clone, Debug)]
pub struct TestSet<'a> {
    pub label: String,
    pub data: &'a OperatorDataset,
}

/// Training aborted; carries the history recorded so far.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainFailure {
    pub history: TrainHistory,
    pub error: Error,
}

impl std::fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training aborted after {} records: {}", self.history.records.len(), self.error)
    }
}

impl std::error::Error for TrainFailure {}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Self {
        f.error
    }
}

/// Adam over the parameters listed in `indices`; all other entries of `params`
/// are never written. `step(iter, params)` returns the loss and full gradient.
/// `observe(iter, loss, params)` is called before each update and after the last.
pub fn adam_on_subset<F, O>(params: &mut [f64], indices: &[usize], lr: f64, iters: usize, mut step: F, mut observe: O) -> Result<f64>
where
    F: FnMut(usize, &[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(usize, f64, &[f64]),
{
    let mut adam = Adam::new(indices.len(), lr);
    let mut sub: Vec<f64> = indices.iter().map(|&i| params[i]).collect();
    let mut gsub = vec![0.0; indices.len()];
    let mut last = f64::NAN;
    for it in 0..=iters {
        let (loss, grad) = step(it, params)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        observe(it, loss, params);
        last = loss;
        if it == iters {
            break;
        }
        for (g, &i) in gsub.iter_mut().zip(indices) {
            *g = grad[i];
        }
        adam.step(&mut sub, &gsub);
        for (v, &i) in sub.iter().zip(indices) {
            params[i] = *v;
        }
    }
    Ok(last)
}

/// Full-batch Adam on the data MSE, logging loss and test errors every `log_every` steps.
pub fn train(model: &mut DeepONet, data: &OperatorDataset, cfg: &TrainConfig, tests: &[TestSet]) -> std::result::Result<TrainHistory, TrainFailure> {
    let mut history = TrainHistory::default();
    if cfg.iters == 0 || !(cfg.lr > 0.0) {
        return Err(TrainFailure { history, error: Error::InvalidArgument("need iters >= 1 and lr > 0".into()) });
    }
    let mut params = model.to_flat();
    let all: Vec<usize> = (0..params.len()).collect();
    let mut rng = seeded(derive_seed(cfg.seed, stream_id("queries")));
    let mut probe = model.clone();
    let log_every = cfg.log_every.max(1);
    let mut pending: Option<Error> = None;
    let result = adam_on_subset(
        &mut params,
        &all,
        cfg.lr,
        cfg.iters,
        |_, p| {
            probe.load_flat(p)?;
            match cfg.queries_per_step {
                Some(k) if k < data.num_queries() => {
                    let sub = data.subsample_queries(k, &mut rng);
                    probe.data_loss_grad(data.branch.view(), sub.queries.view(), sub.targets.view())
                }
                _ => probe.data_loss_grad(data.branch.view(), data.queries.view(), data.targets.view()),
            }
        },
        |it, loss, p| {
            if it % log_every == 0 || it == cfg.iters {
                let mut eval_model = model.clone();
                let mut test_errors = Vec::new();
                if !tests.is_empty() {
                    if let Err(e) = eval_model.load_flat(p) {
                        pending = Some(e);
                    }
                    for t in tests {
                        match evaluate(&eval_model, t.data) {
                            Ok(errs) => test_errors.push((t.label.clone(), mean(&errs))),
                            Err(e) => pending = Some(e),
                        }
                    }
                }
                history.records.push(HistoryRecord { iteration: it, train_loss: loss, test_errors });
            }
        },
    );
    if let Err(error) = result {
        return Err(TrainFailure { history, error });
    }
    if let Some(error) = pending {
        return Err(TrainFailure { history, error });
    }
    model.load_flat(&params).map_err(|error| TrainFailure { history: history.clone(), error })?;
    Ok(history)
}

/// Physics-only training over `n_functions` inputs drawn from `field`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicsTrainConfig {
    pub n_functions: usize,
    pub n_collocation: usize,
    pub n_boundary: usize,
    pub lr: f64,
    pub iters: usize,
    pub w_f: f64,
    pub w_b: f64,
    pub seed: u64,
}

/// Trains a DeepONet from residual and boundary losses alone (no solution data).
pub fn train_pideeponet(config: DeepONetConfig, problem: &ProblemDef, field: &GaussianFieldSpec, cfg: &PhysicsTrainConfig) -> Result<(DeepONet, TrainHistory)> {
    let mut model = DeepONet::for_problem(problem, config);
    let orders = problem.jet_orders();
    if orders.iter().any(|&o| o >= 2) {
        model.trunk.activation.require_order(2)?;
    }
    let sampler = GrfSampler::new(field, &crate::fields::sensor_grid(config.sensors))?;
    let mut rng = seeded(derive_seed(cfg.seed, stream_id("pideeponet-inputs")));
    let inputs: Vec<InputFunction> =
        (0..cfg.n_functions).map(|_| InputFunction::new(problem.prepare_input(&sampler.draw(&mut rng)))).collect::<Result<_>>()?;
    let mut batch = PhysicsBatch::sample(problem, &inputs, cfg.n_collocation, cfg.n_boundary, cfg.seed);
    batch.w_f = cfg.w_f;
    batch.w_b = cfg.w_b;
    let mut params = model.to_flat();
    let all: Vec<usize> = (0..params.len()).collect();
    let mut probe = model.clone();
    let mut history = TrainHistory::default();
    adam_on_subset(
        &mut params,
        &all,
        cfg.lr,
        cfg.iters,
        |_, p| {
            probe.load_flat(p)?;
            let (loss, g) = probe.physics_loss_grad(&batch)?;
            Ok((loss.total, g))
        },
        |it, loss, _| {
            if it % 1000 == 0 || it == cfg.iters {
                history.records.push(HistoryRecord { iteration: it, train_loss: loss, test_errors: Vec::new() });
            }
        },
    )?;
    model.load_flat(&params)?;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> DeepONet {
        let cfg = DeepONetConfig {
            sensors: 3,
            query_dim: 1,
            branch: NetConfig::new(3, 4, ActivationKind::Tanh),
            trunk: NetConfig::new(3, 4, ActivationKind::Tanh),
            latent: 2,
            trunk_activate_output: true,
            seed: 1,
        };
        DeepONet::new(cfg)
    }

    #[test]
    fn zero_branch_gives_bias() {
        let mut m = tiny();
        let last = m.branch.num_layers() - 1;
        m.branch.params.weights[last].fill(0.0);
        m.branch.params.biases[last].fill(0.0);
        m.bias = 0.7;
        assert_eq!(m.predict(&[0.1, 0.2, 0.3], &[0.4]).unwrap(), 0.7);
    }

    #[test]
    fn inner_product_by_hand() {
        let cfg = DeepONetConfig {
            sensors: 1,
            query_dim: 1,
            branch: NetConfig::new(2, 1, ActivationKind::Identity),
            trunk: NetConfig::new(2, 1, ActivationKind::Identity),
            latent: 1,
            trunk_activate_output: false,
            seed: 0,
        };
        let mut m = DeepONet::new(cfg);
        m.branch.params.weights[0] = array![[2.0]];
        m.trunk.params.weights[0] = array![[3.0]];
        m.bias = 1.0;
        assert_eq!(m.predict(&[1.0], &[1.0]).unwrap(), 7.0);
    }

    #[test]
    fn flat_roundtrip_and_subsets() {
        let m = tiny();
        let flat = m.to_flat();
        let mut other = tiny();
        other.load_flat(&flat).unwrap();
        assert_eq!(other, m);
        let branch = m.subset_indices(ParamSubset::Branch);
        let trunk = m.subset_indices(ParamSubset::Trunk);
        assert_eq!(branch.len() + trunk.len() + 1, m.num_params());
        let last = m.subset_indices(ParamSubset::TrunkLast);
        assert_eq!(last.len(), 4 * 2 + 2);
        assert!(last.iter().all(|i| trunk.contains(i)));
    }

    #[test]
    fn relative_error_cases() {
        let t = [1.0, -2.0, 3.0];
        assert_eq!(l2_relative_error(&t, &t).unwrap(), 0.0);
        let scaled: Vec<f64> = t.iter().map(|x| 1.1 * x).collect();
        assert!((l2_relative_error(&scaled, &t).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(l2_relative_error(&[0.0; 3], &t).unwrap(), 1.0);
        assert_eq!(l2_relative_error(&[1.0], &[0.0]), Err(Error::ZeroReference));
    }

    #[test]
    fn sensor_mismatch_rejected() {
        let m = tiny();
        assert!(matches!(m.predict(&[0.0; 4], &[0.1]), Err(Error::DimensionMismatch(_))));
    }
}
