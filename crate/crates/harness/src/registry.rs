//! Repair methods behind one trait, registered by name and built at runtime.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use ndarray::{Array2, ArrayView2, Axis};
use opex_core::dataset::OperatorDataset;
use opex_core::deeponet::{train_pideeponet, DeepONet, DeepONetConfig, ParamSubset, PhysicsTrainConfig};
use opex_core::extrapolation::{ft_obs_alone, ft_obs_together, ft_phys, train_pinn, FineTuneSpec, Observations};
use opex_core::fields::{FunctionSample, GaussianFieldSpec};
use opex_core::multifidelity::{gpr_fit, mfgpr_fit, mfnn_fit, GprOptions, MfgprOptions, MfnnConfig};
use opex_core::nd::rng::{derive_seed, seeded, stream_id};
use opex_core::problem::{InputFunction, ProblemDef};
use rand::seq::index::sample;

use crate::config::Scale;
use crate::error::{HarnessError, HarnessResult};

/// Everything a method may use to predict the output for one test input.
pub struct RepairContext<'a> {
    pub problem: &'a ProblemDef,
    /// Field the pre-trained model was trained on.
    pub train_field: &'a GaussianFieldSpec,
    pub pretrained: &'a DeepONet,
    pub train: &'a OperatorDataset,
    pub input: &'a FunctionSample,
    pub queries: ArrayView2<'a, f64>,
    pub observations: Option<&'a Observations>,
    pub seed: u64,
}

impl RepairContext<'_> {
    fn observations(&self, method: &str) -> HarnessResult<&Observations> {
        self.observations.ok_or_else(|| HarnessError::Config(format!("method {method} needs observations")))
    }
}

pub trait RepairMethod: Send + Sync {
    fn name(&self) -> &str;

    fn uses_observations(&self) -> bool {
        false
    }

    /// Predicted output at `ctx.queries`.
    fn predict(&self, ctx: &RepairContext) -> HarnessResult<Vec<f64>>;
}

/// Knobs shared by the method factories.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSettings {
    pub scale: Scale,
    /// Overrides the fine-tuning iteration count of every fine-tune method.
    pub fine_tune_iters: Option<usize>,
    pub n_observations: usize,
    pub network: DeepONetConfig,
    pub n_train: usize,
    pub train_iters: usize,
}

type Factory = fn(Option<&str>, &MethodSettings) -> HarnessResult<Box<dyn RepairMethod>>;

pub struct Registry {
    factories: BTreeMap<&'static str, Factory>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Registry::empty();
        r.register("deeponet", |_, _| Ok(Box::new(Frozen)));
        r.register("ft-phys", |arg, s| {
            let subset = match arg {
                None => ParamSubset::Trunk,
                Some(a) => ParamSubset::parse(a).ok_or_else(|| HarnessError::UnknownMethod(format!("ft-phys:{a}")))?,
            };
            Ok(Box::new(FtPhys { name: format!("ft-phys:{}", subset.name()), subset, iters: s.fine_tune_iters }))
        });
        r.register("ft-obs-a", |_, s| Ok(Box::new(FtObsAlone { iters: s.fine_tune_iters })));
        r.register("ft-obs-t", |arg, s| {
            let adaptive = match arg {
                None => false,
                Some("adaptive") => true,
                Some(a) => return Err(HarnessError::UnknownMethod(format!("ft-obs-t:{a}"))),
            };
            let name = if adaptive { "ft-obs-t:adaptive" } else { "ft-obs-t" };
            Ok(Box::new(FtObsTogether { name: name.into(), adaptive, iters: s.fine_tune_iters }))
        });
        r.register("gpr", |_, _| Ok(Box::new(Gpr)));
        r.register("mfgpr", |_, _| Ok(Box::new(Mfgpr)));
        r.register("mfnn", |_, s| Ok(Box::new(Mfnn { scale: s.scale })));
        r.register("pinn", |_, s| Ok(Box::new(Pinn { network: s.network, iters: s.fine_tune_iters })));
        r.register("pideeponet", |_, s| Ok(Box::new(PiDeepONet { network: s.network, n_train: s.n_train, iters: s.train_iters, scale: s.scale, model: OnceLock::new() })));
        r
    }
}

impl Registry {
    pub fn empty() -> Self {
        Registry { factories: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    /// Builds a method from `name` or `name:argument`.
    pub fn create(&self, spec: &str, settings: &MethodSettings) -> HarnessResult<Box<dyn RepairMethod>> {
        let (name, arg) = match spec.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (spec, None),
        };
        let factory = self.factories.get(name).ok_or_else(|| HarnessError::UnknownMethod(spec.into()))?;
        factory(arg, settings)
    }
}

struct Frozen;

impl RepairMethod for Frozen {
    fn name(&self) -> &str {
        "deeponet"
    }

    fn predict(&self, ctx: &RepairContext) -> HarnessResult<Vec<f64>> {
        Ok(ctx.pretrained.predict_field(&ctx.input.values, ctx.queries)?)
    }
}

fn with_iters(mut spec: FineTuneSpec, iters: Option<usize>, seed: u64) -> FineTuneSpec {
    if let Some(n) = iters {
        spec.iters = n;
    }
    spec.seed = seed;
    spec
}

struct FtPhys {
    name: String,
    subset: ParamSubset,
    iters: Option<usize>,
}

impl RepairMethod for FtPhys {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, ctx: &RepairContext) -> HarnessResult<Vec<f64>> {
        let spec = with_iters(FineTuneSpec::physics(ctx.problem, self.subset), self.iters, ctx.seed);
        let (model, _) = ft_phys(ctx.pretrained, &InputFunction::new(ctx.input.clone())?, ctx.problem, &spec)?;
        Ok(model.predict_field(&ctx.input.values, ctx.queries)?)
    }
}

struct FtObsAlone {
    iters: Option<usize>,
}

impl RepairMethod for FtObsAlone {
    fn name(&self) -> &str {
        "ft-obs-a"
    }

    fn uses_observations(&self) -> bool {
        true
    }

    fn predict(&self, ctx: &RepairContext) -> HarnessResult<Vec<f64>> {
        let spec = with_iters(FineTuneSpec::observations_alone(ctx.problem), self.iters, ctx.seed);
        let (model, _) = ft_obs_alone(ctx.pretrained, ctx.input, ctx.observations(self.name())?, &spec)?;
        Ok(model.predict_field(&ctx.input.values, ctx.queries)?)
    }
}

struct FtObsTogether {
    name: String,
    adaptive: bool,
    iters: Option<usize>,
}

impl RepairMethod for FtObsTogether {
    fn name(&self) -> &str {
        &self.name
    }

    fn uses_observations(&self) -> bool {
        true
    }

    fn predict(&self, ctx: &RepairContext) -> HarnessResult<Vec<f64>> {
        let mut spec = with_iters(FineTuneSpec::observations_together(ctx.problem), self.iters, ctx.seed);
        if self.adaptive {
            spec.adaptive_lambda = Some(0.3);
        }
        if ctx.problem.query_dim() > 1 && ctx.train.num_queries() * ctx.train.len() > 200_000 {
            spec.train_queries_per_step = Some(200);
        }
        let (model, _) = ft_obs_together(ctx.pretrained, ctx.input, ctx.observations(&self.name)?, ctx.train, &spec)?;
        Ok(model.predict_field(&ctx.input.values, ctx.queries)?)
    }
}

struct Gpr;

impl RepairMethod for Gpr {
    fn name(&self) -> &str {
        "gpr"
    }

    fn uses_observations(&self) -> bool {
        true
    }

    fn predict(&self, ctx: &RepairContext) -> HarnessResult<Vec<f64>> {
        let obs = ctx.observations(self.name())?;
        let opts = GprOptions { seed: ctx.seed, ..Default::default() };
        Ok(gpr_fit(obs.points.view(), &obs.values, &opts)?.predict_mean(ctx.queries)?)
    }
}

/// Dense low-fidelity set: the whole query grid in 1D, 2000 uniformly drawn grid points otherwise.
fn low_fidelity_set(ctx: &RepairContext) -> HarnessResult<(Array2<f64>, Vec<f64>)> {
    let q = if ctx.queries.ncols() == 1 || ctx.queries.nrows() <= 2000 {
        ctx.queries.to_owned()
    } else {
        let mut rng = seeded(derive_seed(ctx.seed, stream_id("low-fidelity-set")));
        let mut idx = sample(&mut rng, ctx.queries.nrows(), 2000).into_vec();
        idx.sort_unstable();
        ctx.queries.select(Axis(0), &idx)
    };
    let y = ctx.pretrained.predict_field(&ctx.input.values, q.view())?;
    Ok((q, y))
}

struct Mfgpr;

impl RepairMethod for Mfgpr {
    fn name(&self) -> &str {
        "mfgpr"
    }

    fn uses_observations(&self) -> bool {
        true
    }

    fn predict(&self, ctx: &RepairContext) -> HarnessResult<Vec<f64>> {
        let obs = ctx.observations(self.name())?;
        let (lx, ly) = low_fidelity_set(ctx)?;
        let mut opts = MfgprOptions::default();
        opts.gpr.seed = ctx.seed;
        Ok(mfgpr_fit(lx.view(), &ly, obs.points.view(), &obs.values, &opts)?.predict(ctx.queries)?)
    }
}

struct Mfnn {
    scale: Scale,
}

impl RepairMethod for Mfnn {
    fn name(&self) -> &str {
        "mfnn"
    }

    fn uses_observations(&self) -> bool {
        true
    }

    fn predict(&self, ctx: &RepairContext) -> HarnessResult<Vec<f64>> {
        let obs = ctx.observations(self.name())?;
        let (lx, ly) = low_fidelity_set(ctx)?;
        let mut cfg = MfnnConfig::for_problem(ctx.problem, obs.len());
        cfg.seed = ctx.seed;
        if self.scale == Scale::Desk {
            if ctx.problem.query_dim() == 1 {
                cfg.low_iters = 5000;
                cfg.high_iters = 5000;
            } else {
                cfg.low_iters = 2000;
                cfg.high_iters = 5000;
                cfg.low_batch = Some(256);
            }
        }
        Ok(mfnn_fit(lx.view(), &ly, obs.points.view(), &obs.values, &cfg)?.predict(ctx.queries)?)
    }
}

struct Pinn {
    network: DeepONetConfig,
    iters: Option<usize>,
}

impl RepairMethod for Pinn {
    fn name(&self) -> &str {
        "pinn"
    }

    fn predict(&self, ctx: &RepairContext) -> HarnessResult<Vec<f64>> {
        let spec = with_iters(FineTuneSpec::physics(ctx.problem, ParamSubset::BranchAndTrunk), self.iters, ctx.seed);
        let mut network = self.network;
        network.seed = derive_seed(ctx.seed, stream_id("pinn-init"));
        let (model, _) = train_pinn(network, &InputFunction::new(ctx.input.clone())?, ctx.problem, &spec)?;
        Ok(model.predict_field(&ctx.input.values, ctx.queries)?)
    }
}

/// A physics-trained operator network, trained once on first use.
struct PiDeepONet {
    network: DeepONetConfig,
    n_train: usize,
    iters: usize,
    scale: Scale,
    model: OnceLock<HarnessResult<DeepONet>>,
}

impl RepairMethod for PiDeepONet {
    fn name(&self) -> &str {
        "pideeponet"
    }

    fn predict(&self, ctx: &RepairContext) -> HarnessResult<Vec<f64>> {
        let model = self.model.get_or_init(|| {
            let one_d = ctx.problem.query_dim() == 1;
            let cfg = PhysicsTrainConfig {
                n_functions: if self.scale == Scale::Desk { self.n_train.min(100) } else { self.n_train },
                n_collocation: if one_d { 50 } else { 200 },
                n_boundary: if one_d { 1 } else { 50 },
                lr: 0.001,
                iters: self.iters,
                w_f: 1.0,
                w_b: 1.0,
                seed: ctx.seed,
            };
            Ok(train_pideeponet(self.network, ctx.problem, ctx.train_field, &cfg)?.0)
        });
        match model {
            Ok(m) => Ok(m.predict_field(&ctx.input.values, ctx.queries)?),
            Err(e) => Err(HarnessError::Config(format!("PIDeepONet training failed: {e}"))),
        }
    }
}
