//! Experiment configuration with desk and full-scale presets.

use std::path::Path;

use opex_core::deeponet::{DeepONetConfig, TrainConfig};
use opex_core::fields::GaussianFieldSpec;
use opex_core::nd::activation::ActivationKind;
use opex_core::problem::ProblemDef;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, HarnessResult};

/// Environment variable that replaces the configured seed list with a single seed.
pub const SEED_ENV: &str = "OPEX_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Placement {
    /// Distinct query-grid points drawn uniformly per test function.
    UniformRandom,
    /// `count` query-grid points spread evenly through the grid ordering.
    Even,
    /// Explicit locations, snapped to the nearest query-grid point.
    FixedList { points: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSpec {
    pub count: usize,
    pub placement: Placement,
    /// Relative noise levels; one repair pass per level.
    #[serde(default = "zero_noise")]
    pub noise_levels: Vec<f64>,
}

fn zero_noise() -> Vec<f64> {
    vec![0.0]
}

impl Default for ObservationSpec {
    fn default() -> Self {
        ObservationSpec { count: 7, placement: Placement::UniformRandom, noise_levels: zero_noise() }
    }
}

/// Network settings shared by branch and trunk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub width: usize,
    #[serde(default)]
    pub trunk_activation: Option<ActivationKind>,
    #[serde(default)]
    pub branch_activation: Option<ActivationKind>,
    #[serde(default)]
    pub laaf_scale: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum CapacitySweep {
    Widths(Vec<usize>),
    /// Evaluation checkpoints of a single long run.
    Iterations(Vec<usize>),
    DatasetSizes(Vec<usize>),
    /// Trunk activation with an optional adaptive-activation scale.
    Activations(Vec<(ActivationKind, Option<f64>)>),
}

impl CapacitySweep {
    pub fn len(&self) -> usize {
        match self {
            CapacitySweep::Widths(v) => v.len(),
            CapacitySweep::Iterations(v) => v.len(),
            CapacitySweep::DatasetSizes(v) => v.len(),
            CapacitySweep::Activations(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub problem: ProblemDef,
    pub l_train: Vec<f64>,
    pub l_test: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub model: ModelSpec,
    pub training: TrainConfig,
    #[serde(default)]
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default)]
    pub observations: ObservationSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Calibration functions for the detection threshold.
    #[serde(default = "default_calibration")]
    pub n_calibration: usize,
    #[serde(default)]
    pub capacity: Option<CapacitySweep>,
    /// Overrides for the fine-tuning iteration counts (desk runs).
    #[serde(default)]
    pub fine_tune_iters: Option<usize>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_alpha() -> f64 {
    1.5
}

fn default_calibration() -> usize {
    100
}

impl ExperimentConfig {
    /// Preset for `problem` at the given scale.
    pub fn preset(problem: ProblemDef, scale: Scale) -> Self {
        let one_d = problem.query_dim() == 1;
        let (width, lr, iters, n_train, n_test, seeds) = match (scale, one_d) {
            (Scale::Desk, true) => (40, 0.005, 20_000, 300, 100, vec![0, 1, 2]),
            (Scale::Desk, false) => (40, 0.001, 5_000, 200, 20, vec![0, 1, 2]),
            (Scale::Full, true) => (40, 0.005, 50_000, 1000, 100, (0..10).collect()),
            (Scale::Full, false) => (100, 0.001, 500_000, 1000, 100, (0..10).collect()),
        };
        let mut training = TrainConfig::new(lr, iters);
        if !one_d && scale == Scale::Desk {
            training.queries_per_step = Some(200);
        }
        ExperimentConfig {
            name: format!("{}-{:?}", problem.name(), scale).to_lowercase(),
            problem,
            l_train: vec![problem.default_train_length()],
            l_test: vec![problem.default_test_length()],
            n_train,
            n_test,
            model: ModelSpec { width, trunk_activation: None, branch_activation: None, laaf_scale: None },
            training,
            methods: vec!["deeponet".into()],
            seeds,
            scale,
            observations: ObservationSpec::default(),
            alpha: 1.5,
            n_calibration: 100,
            capacity: None,
            fine_tune_iters: None,
        }
    }

    pub fn from_json(text: &str) -> HarnessResult<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and applies the seed override from the environment.
    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> HarnessResult<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v.trim().parse().map_err(|_| HarnessError::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
            self.seeds = vec![seed];
        }
        Ok(())
    }

    pub fn validate(&self) -> HarnessResult<()> {
        self.problem.validate()?;
        if self.l_train.is_empty() || self.l_test.is_empty() {
            return Err(HarnessError::Config("l_train and l_test must be non-empty".into()));
        }
        if self.l_train.iter().chain(&self.l_test).any(|l| !(*l > 0.0)) {
            return Err(HarnessError::Config("correlation lengths must be positive".into()));
        }
        if self.seeds.is_empty() || self.n_train == 0 || self.n_test == 0 {
            return Err(HarnessError::Config("need at least one seed, training and test function".into()));
        }
        if !(self.alpha >= 1.0) {
            return Err(HarnessError::Config(format!("alpha must be >= 1, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn field(&self, l: f64) -> GaussianFieldSpec {
        self.problem.field(l)
    }

    /// DeepONet architecture for this config, seeded.
    pub fn network(&self, seed: u64) -> DeepONetConfig {
        let mut c = DeepONetConfig::for_problem(&self.problem, self.model.width, seed);
        if let Some(a) = self.model.trunk_activation {
            c.trunk.activation = a;
        }
        if let Some(a) = self.model.branch_activation {
            c.branch.activation = a;
        }
        c.trunk.laaf_scale = self.model.laaf_scale;
        c
    }

    /// Canonical JSON used for hashing and re-runs.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
