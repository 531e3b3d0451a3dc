//! Operator-learning datasets: sensorized inputs, shared query grid, reference outputs.

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{sensor_grid, FunctionSample, GaussianFieldSpec, GrfSampler};
use crate::nd::rng::seeded;
use crate::problem::ProblemDef;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub problem: Option<ProblemDef>,
    pub field: Option<GaussianFieldSpec>,
    pub seed: Option<u64>,
    /// Free-form origin label for imported data.
    #[serde(default)]
    pub source: String,
}

/// `n` input functions at `m` sensors, evaluated on one shared set of `Q` query points.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorDataset {
    /// `n × m`
    pub branch: Array2<f64>,
    pub sensors: Vec<f64>,
    /// `Q × d`
    pub queries: Array2<f64>,
    /// `n × Q`
    pub targets: Array2<f64>,
    pub meta: DatasetMeta,
}

impl OperatorDataset {
    pub fn new(branch: Array2<f64>, sensors: Vec<f64>, queries: Array2<f64>, targets: Array2<f64>, meta: DatasetMeta) -> Result<Self> {
        let ds = OperatorDataset { branch, sensors, queries, targets, meta };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.branch.dim();
        if self.sensors.len() != m {
            return Err(Error::DimensionMismatch(format!("{} sensors but branch width {m}", self.sensors.len())));
        }
        if self.targets.dim() != (n, self.queries.nrows()) {
            return Err(Error::DimensionMismatch(format!(
                "targets {:?} but {n} functions and {} queries",
                self.targets.dim(),
                self.queries.nrows()
            )));
        }
        let finite = |a: &Array2<f64>| a.iter().all(|v| v.is_finite());
        if !finite(&self.branch) || !finite(&self.targets) || !finite(&self.queries) {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.branch.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_queries(&self) -> usize {
        self.queries.nrows()
    }

    pub fn query_dim(&self) -> usize {
        self.queries.ncols()
    }

    pub fn input(&self, i: usize) -> FunctionSample {
        FunctionSample { grid: self.sensors.clone(), values: self.branch.row(i).to_vec() }
    }

    pub fn target(&self, i: usize) -> Vec<f64> {
        self.targets.row(i).to_vec()
    }

    /// Functions `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> OperatorDataset {
        OperatorDataset {
            branch: self.branch.select(Axis(0), indices),
            sensors: self.sensors.clone(),
            queries: self.queries.clone(),
            targets: self.targets.select(Axis(0), indices),
            meta: self.meta.clone(),
        }
    }

    /// Keeps `k` query points chosen uniformly without replacement (all if `k ≥ Q`).
    pub fn subsample_queries<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> OperatorDataset {
        let q = self.num_queries();
        if k >= q {
            return self.clone();
        }
        let mut idx = sample(rng, q, k).into_vec();
        idx.sort_unstable();
        OperatorDataset {
            branch: self.branch.clone(),
            sensors: self.sensors.clone(),
            queries: self.queries.select(Axis(0), &idx),
            targets: self.targets.select(Axis(1), &idx),
            meta: self.meta.clone(),
        }
    }
}

/// Solves `problem` for each given input and assembles a dataset.
pub fn dataset_from_inputs(problem: &ProblemDef, inputs: &[FunctionSample]) -> Result<OperatorDataset> {
    let first = inputs.first().ok_or_else(|| Error::InvalidArgument("no input functions".into()))?;
    let sensors = first.grid.clone();
    let queries = problem.query_grid();
    let mut branch = Array2::zeros((inputs.len(), sensors.len()));
    let mut targets = Array2::zeros((inputs.len(), queries.nrows()));
    for (i, v) in inputs.iter().enumerate() {
        if v.grid != sensors {
            return Err(Error::DimensionMismatch("input functions use different sensor grids".into()));
        }
        let sol = problem.solve(v)?;
        if sol.values.len() != queries.nrows() {
            return Err(Error::DimensionMismatch(format!("solver returned {} values for {} queries", sol.values.len(), queries.nrows())));
        }
        branch.row_mut(i).assign(&ndarray::ArrayView1::from(&v.values));
        targets.row_mut(i).assign(&ndarray::ArrayView1::from(&sol.values));
    }
    OperatorDataset::new(
        branch,
        sensors,
        queries,
        targets,
        DatasetMeta { problem: Some(*problem), field: None, seed: None, source: "generated".into() },
    )
}

/// Draws `n` inputs from `field` on `m` sensors and solves each.
pub fn generate_dataset_with_sensors(problem: &ProblemDef, field: &GaussianFieldSpec, n: usize, m: usize, seed: u64) -> Result<OperatorDataset> {
    problem.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one function".into()));
    }
    let sampler = GrfSampler::new(field, &sensor_grid(m))?;
    let mut rng = seeded(seed);
    let inputs: Vec<FunctionSample> = (0..n).map(|_| problem.prepare_input(&sampler.draw(&mut rng))).collect();
    let mut ds = dataset_from_inputs(problem, &inputs)?;
    ds.meta.field = Some(*field);
    ds.meta.seed = Some(seed);
    Ok(ds)
}

/// Dataset with the default 100 sensors.
pub fn generate_dataset(problem: &ProblemDef, field: &GaussianFieldSpec, n: usize, seed: u64) -> Result<OperatorDataset> {
    generate_dataset_with_sensors(problem, field, n, 100, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_zero_outputs() {
        let v = FunctionSample::from_fn(&sensor_grid(100), |_| 0.0);
        let ds = dataset_from_inputs(&ProblemDef::antiderivative(), &[v]).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(ds.targets.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn generation_is_deterministic() {
        let p = ProblemDef::antiderivative();
        let f = GaussianFieldSpec::rbf(0.5);
        let a = generate_dataset(&p, &f, 3, 8).unwrap();
        let b = generate_dataset(&p, &f, 3, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.targets.dim(), (3, 100));
    }

    #[test]
    fn query_subsampling_keeps_alignment() {
        let p = ProblemDef::advection();
        let ds = generate_dataset(&p, &GaussianFieldSpec::rbf(0.5), 2, 1).unwrap();
        let mut rng = seeded(3);
        let sub = ds.subsample_queries(50, &mut rng);
        assert_eq!(sub.targets.dim(), (2, 50));
        for q in 0..50 {
            let row = sub.queries.row(q);
            let orig = (0..ds.num_queries()).find(|&r| ds.queries.row(r) == row).unwrap();
            assert_eq!(sub.targets[[1, q]], ds.targets[[1, orig]]);
        }
    }
}
