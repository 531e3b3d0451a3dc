//! End-to-end experiments: heatmap sweeps, capacity sweeps, detection and repair comparisons.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::ArrayView2;
use opex_core::dataset::{generate_dataset_with_sensors, OperatorDataset};
use opex_core::deeponet::{evaluate, l2_relative_error, train, DeepONet, TestSet, TrainConfig, TrainHistory};
use opex_core::fields::linspace;
use opex_core::extrapolation::{calibrate_threshold, decide, mismatch_on_dataset, MeasureSpec, Observations, Regime};
use opex_core::nd::rng::{derive_seed, seeded, stream_id};
use opex_core::wasserstein::{fit_power_law, spearman, w2_distance, PowerLawFit};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CapacitySweep, ExperimentConfig, Placement};
use crate::error::{HarnessError, HarnessResult};
use crate::registry::{MethodSettings, Registry, RepairContext};
use crate::table::{ResultTable, Row};

pub const ERROR_METRIC: &str = "l2_rel_error";

fn key(l: f64) -> u64 {
    l.to_bits()
}

fn stream(label: &str, l: f64) -> u64 {
    stream_id(&format!("{label}:{l}"))
}

pub fn train_dataset(cfg: &ExperimentConfig, l: f64, n: usize, seed: u64) -> HarnessResult<OperatorDataset> {
    Ok(generate_dataset_with_sensors(&cfg.problem, &cfg.field(l), n, 100, derive_seed(seed, stream("train-data", l)))?)
}

pub fn test_dataset(cfg: &ExperimentConfig, l: f64, seed: u64) -> HarnessResult<OperatorDataset> {
    Ok(generate_dataset_with_sensors(&cfg.problem, &cfg.field(l), cfg.n_test, 100, derive_seed(seed, stream("test-data", l)))?)
}

/// Trains one model on `data`, recording test errors on `tests`.
pub fn train_on(cfg: &ExperimentConfig, data: &OperatorDataset, seed: u64, training: &TrainConfig, tests: &[TestSet]) -> HarnessResult<(DeepONet, TrainHistory)> {
    let mut model = DeepONet::for_problem(&cfg.problem, cfg.network(derive_seed(seed, stream_id("model-init"))));
    let mut tc = training.clone();
    tc.seed = derive_seed(seed, stream_id("train-batches"));
    let history = train(&mut model, data, &tc, tests).map_err(|f| HarnessError::Core(f.error))?;
    Ok((model, history))
}

pub fn train_model(cfg: &ExperimentConfig, l_train: f64, seed: u64) -> HarnessResult<(DeepONet, OperatorDataset)> {
    let data = train_dataset(cfg, l_train, cfg.n_train, seed)?;
    let (model, _) = train_on(cfg, &data, seed, &cfg.training, &[])?;
    Ok((model, data))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cell(l_train: f64, l_test: f64) -> String {
    format!("l_train={l_train},l_test={l_test}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapOutcome {
    pub table: ResultTable,
    /// Power law fitted on the harmful-extrapolation cells.
    pub fit: Option<PowerLawFit>,
    pub spearman: Option<f64>,
}

/// Trains one model per `(l_train, seed)` and evaluates it on every `l_test`.
pub fn run_heatmap(cfg: &ExperimentConfig) -> HarnessResult<HeatmapOutcome> {
    cfg.validate()?;
    let mut table = ResultTable::new("heatmap", cfg);
    let mut tests: BTreeMap<(u64, u64), OperatorDataset> = BTreeMap::new();
    for &seed in &cfg.seeds {
        for &l in &cfg.l_test {
            tests.insert((seed, key(l)), test_dataset(cfg, l, seed)?);
        }
    }
    let mut ex_points = Vec::new();
    for &lt in &cfg.l_train {
        let start = Instant::now();
        let mut errors: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for &seed in &cfg.seeds {
            let (model, _) = train_model(cfg, lt, seed)?;
            for &ls in &cfg.l_test {
                errors.entry(key(ls)).or_default().extend(evaluate(&model, &tests[&(seed, key(ls))])?);
            }
        }
        let wall = start.elapsed().as_secs_f64() / cfg.l_test.len() as f64;
        for &ls in &cfg.l_test {
            let e = &errors[&key(ls)];
            let w2 = w2_distance(&cfg.field(lt), &cfg.field(ls), &linspace(0.0, 1.0, 101))?;
            table.push(Row::new(cell(lt, ls), ERROR_METRIC, e, wall));
            table.push(Row::new(cell(lt, ls), "w2", &[w2], 0.0));
            if ls < lt {
                ex_points.push((w2, mean(e)));
            }
        }
    }
    let fit = fit_power_law(&ex_points).ok();
    let spearman = (ex_points.len() >= 2).then(|| {
        let (w, e): (Vec<f64>, Vec<f64>) = ex_points.iter().map(|&(w, e)| (w.ln(), e.ln())).unzip();
        spearman(&w, &e)
    });
    if let Some(f) = &fit {
        table.push(Row::new("ex_plus_fit", "exponent", &[f.exponent], 0.0));
        table.push(Row::new("ex_plus_fit", "exponent_stderr", &[f.exponent_stderr], 0.0));
    }
    if let Some(s) = spearman {
        table.push(Row::new("ex_plus_fit", "spearman", &[s], 0.0));
    }
    Ok(HeatmapOutcome { table, fit, spearman })
}

/// In. and Ex.+ errors per capacity setting, at `l_train[0]` and `l_test[0]`.
pub fn run_capacity_sweep(cfg: &ExperimentConfig) -> HarnessResult<ResultTable> {
    cfg.validate()?;
    let sweep = cfg.capacity.as_ref().ok_or_else(|| HarnessError::Config("capacity sweep needs a `capacity` section".into()))?;
    if sweep.len() < 2 {
        return Err(HarnessError::Config("capacity sweep needs at least two settings".into()));
    }
    let mut table = ResultTable::new("capacity", cfg);
    let (lt, ls) = (cfg.l_train[0], cfg.l_test[0]);
    // (label, in errors, ex errors, final losses, wall time)
    let mut per_setting: Vec<SettingErrors> = Vec::new();
    let mut push = |label: String, i: Vec<f64>, e: Vec<f64>, loss: f64, wall: f64| {
        if let Some(s) = per_setting.iter_mut().find(|s| s.0 == label) {
            s.1.extend(i);
            s.2.extend(e);
            s.3.push(loss);
            s.4 += wall;
        } else {
            per_setting.push((label, i, e, vec![loss], wall));
        }
    };
    for &seed in &cfg.seeds {
        let test_in = test_dataset(cfg, lt, seed)?;
        let test_ex = test_dataset(cfg, ls, seed)?;
        match sweep {
            CapacitySweep::Iterations(checkpoints) => {
                let start = Instant::now();
                let mut tc = cfg.training.clone();
                tc.iters = *checkpoints.iter().max().expect("non-empty");
                tc.log_every = checkpoints.iter().fold(0, |g, &c| gcd(g, c)).max(1);
                let data = train_dataset(cfg, lt, cfg.n_train, seed)?;
                let tests = [TestSet { label: "in".into(), data: &test_in }, TestSet { label: "ex".into(), data: &test_ex }];
                let (_, history) = train_on(cfg, &data, seed, &tc, &tests)?;
                let wall = start.elapsed().as_secs_f64() / checkpoints.len() as f64;
                for &c in checkpoints {
                    let rec = history.records.iter().find(|r| r.iteration == c).ok_or_else(|| HarnessError::Config(format!("no record at iteration {c}")))?;
                    push(format!("iterations={c}"), vec![rec.test_errors[0].1], vec![rec.test_errors[1].1], rec.train_loss, wall);
                }
            }
            _ => {
                for idx in 0..sweep.len() {
                    let start = Instant::now();
                    let mut c = cfg.clone();
                    let mut n = cfg.n_train;
                    let label = match sweep {
                        CapacitySweep::Widths(w) => {
                            c.model.width = w[idx];
                            format!("width={}", w[idx])
                        }
                        CapacitySweep::DatasetSizes(s) => {
                            n = s[idx];
                            format!("n_train={n}")
                        }
                        CapacitySweep::Activations(a) => {
                            c.model.trunk_activation = Some(a[idx].0);
                            c.model.laaf_scale = a[idx].1;
                            match a[idx].1 {
                                Some(scale) => format!("activation={},laaf={scale}", a[idx].0.name()),
                                None => format!("activation={}", a[idx].0.name()),
                            }
                        }
                        CapacitySweep::Iterations(_) => unreachable!(),
                    };
                    let data = train_dataset(&c, lt, n, seed)?;
                    let (model, history) = train_on(&c, &data, seed, &c.training, &[])?;
                    let loss = history.final_loss().unwrap_or(f64::NAN);
                    push(label, evaluate(&model, &test_in)?, evaluate(&model, &test_ex)?, loss, start.elapsed().as_secs_f64());
                }
            }
        }
    }
    for (label, i, e, loss, wall) in per_setting {
        table.push(Row::new(&label, "in_error", &i, wall));
        table.push(Row::new(&label, "ex_error", &e, wall));
        table.push(Row::new(&label, "train_loss", &loss, wall));
    }
    Ok(table)
}

type SettingErrors = (String, Vec<f64>, Vec<f64>, Vec<f64>, f64);

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn measures(cfg: &ExperimentConfig, physics: bool) -> MeasureSpec {
    let mut m = MeasureSpec::new(physics, (cfg.observations.count > 0).then_some(cfg.observations.count));
    if cfg.problem.query_dim() > 1 && cfg.scale == crate::config::Scale::Desk {
        m.quadrature_per_axis = 51;
    }
    m
}

/// Calibrates `ε0` at `l_train[0]` and reports flag rates on fresh in-distribution functions and every `l_test`.
pub fn run_detection(cfg: &ExperimentConfig) -> HarnessResult<ResultTable> {
    cfg.validate()?;
    let mut table = ResultTable::new("detect", cfg);
    let lt = cfg.l_train[0];
    let physics = cfg.problem.query_dim() == 1 || cfg.problem.jet_orders().iter().all(|&o| o <= 1) || cfg.network(0).trunk.activation.is_smooth();
    let m = measures(cfg, physics);
    let mut lengths = vec![lt];
    lengths.extend(cfg.l_test.iter().copied().filter(|&l| l != lt));
    let mut rates: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut values: BTreeMap<(u64, &str), Vec<f64>> = BTreeMap::new();
    let start = Instant::now();
    for &seed in &cfg.seeds {
        let (model, _) = train_model(cfg, lt, seed)?;
        let threshold = calibrate_threshold(&model, &cfg.problem, &cfg.field(lt), cfg.alpha, cfg.n_calibration, &m, derive_seed(seed, stream_id("calibration")))?;
        if let Some(e) = threshold.eps0_phys {
            values.entry((0, "eps0_phys")).or_default().push(e);
        }
        if let Some(e) = threshold.eps0_obs {
            values.entry((0, "eps0_obs")).or_default().push(e);
        }
        for &l in &lengths {
            let data = generate_dataset_with_sensors(&cfg.problem, &cfg.field(l), cfg.n_test, 100, derive_seed(seed, stream("detect-data", l)))?;
            let mm = mismatch_on_dataset(&model, &cfg.problem, &data, &m, derive_seed(seed, stream("detect-obs", l)))?;
            let flagged = mm.iter().filter(|(p, o)| decide(*p, *o, &threshold).decision == Regime::HarmfulExtrapolation).count();
            rates.entry(key(l)).or_default().push(flagged as f64 / mm.len() as f64);
            values.entry((key(l), "e_phys")).or_default().extend(mm.iter().filter_map(|r| r.0));
            values.entry((key(l), "e_obs")).or_default().extend(mm.iter().filter_map(|r| r.1));
        }
    }
    let wall = start.elapsed().as_secs_f64();
    for ((_, name), v) in values.iter().filter(|((k, _), _)| *k == 0) {
        table.push(Row::new("calibration", *name, v, wall));
    }
    for &l in &lengths {
        let setting = format!("l={l}");
        table.push(Row::new(&setting, "flag_rate", &rates[&key(l)], wall));
        for name in ["e_phys", "e_obs"] {
            if let Some(v) = values.get(&(key(l), name)).filter(|v| !v.is_empty()) {
                table.push(Row::new(&setting, name, v, wall));
            }
        }
    }
    Ok(table)
}

/// Observation locations (query-grid indices) for one test function.
pub fn observation_indices(placement: &Placement, count: usize, queries: ArrayView2<f64>, seed: u64) -> HarnessResult<Vec<usize>> {
    let n = queries.nrows();
    let mut idx = match placement {
        Placement::UniformRandom => {
            if count == 0 || count > n {
                return Err(HarnessError::Config(format!("cannot place {count} observations on {n} grid points")));
            }
            rand::seq::index::sample(&mut seeded(seed), n, count).into_vec()
        }
        Placement::Even => (0..count).map(|k| (((k + 1) as f64 * (n - 1) as f64) / count as f64).round() as usize).collect(),
        Placement::FixedList { points } => points
            .iter()
            .map(|p| {
                if p.len() != queries.ncols() {
                    return Err(HarnessError::Config(format!("observation point {p:?} has the wrong dimension")));
                }
                let d = |i: usize| queries.row(i).iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                Ok((0..n).min_by(|&a, &b| d(a).total_cmp(&d(b))).expect("non-empty grid"))
            })
            .collect::<HarnessResult<Vec<_>>>()?,
    };
    idx.sort_unstable();
    idx.dedup();
    Ok(idx)
}

pub fn method_settings(cfg: &ExperimentConfig, seed: u64) -> MethodSettings {
    MethodSettings {
        scale: cfg.scale,
        fine_tune_iters: cfg.fine_tune_iters,
        n_observations: cfg.observations.count,
        network: cfg.network(derive_seed(seed, stream_id("aux-network"))),
        n_train: cfg.n_train,
        train_iters: cfg.training.iters,
    }
}

/// Per-function errors of every configured method at every noise level.
pub struct RepairErrors {
    /// `(method, noise)` → errors over functions and seeds.
    pub errors: BTreeMap<(String, u64), Vec<f64>>,
    pub flagged: Vec<f64>,
}

pub fn repair_errors(cfg: &ExperimentConfig, registry: &Registry) -> HarnessResult<RepairErrors> {
    cfg.validate()?;
    if cfg.methods.is_empty() {
        return Err(HarnessError::Config("no repair methods configured".into()));
    }
    let (lt, ls) = (cfg.l_train[0], cfg.l_test[0]);
    let mut out = RepairErrors { errors: BTreeMap::new(), flagged: Vec::new() };
    for &seed in &cfg.seeds {
        let (model, train_data) = train_model(cfg, lt, seed)?;
        let test = test_dataset(cfg, ls, seed)?;
        let settings = method_settings(cfg, seed);
        let methods = cfg.methods.iter().map(|m| registry.create(m, &settings)).collect::<HarnessResult<Vec<_>>>()?;
        let physics = cfg.network(0).trunk.activation.is_smooth() || cfg.problem.query_dim() == 1;
        let m = measures(cfg, physics);
        let threshold = calibrate_threshold(&model, &cfg.problem, &cfg.field(lt), cfg.alpha, cfg.n_calibration.min(cfg.n_test.max(20)), &m, derive_seed(seed, stream_id("calibration")))?;
        let detections = mismatch_on_dataset(&model, &cfg.problem, &test, &m, derive_seed(seed, stream_id("detect-obs")))?;
        out.flagged.push(detections.iter().filter(|(p, o)| decide(*p, *o, &threshold).decision == Regime::HarmfulExtrapolation).count() as f64 / test.len() as f64);
        let field = cfg.field(lt);
        for &noise in &cfg.observations.noise_levels {
            let per_function: Vec<HarnessResult<Vec<f64>>> = (0..test.len())
                .into_par_iter()
                .map(|i| {
                    let input = test.input(i);
                    let target = test.target(i).to_vec();
                    let idx = observation_indices(&cfg.observations.placement, cfg.observations.count, test.queries.view(), derive_seed(seed, stream_id("obs-placement")) ^ i as u64)?;
                    let obs = Observations::at_indices(test.queries.view(), &target, &idx)?.with_noise(noise, &mut seeded(derive_seed(seed, stream_id("obs-noise")) ^ i as u64));
                    let ctx = RepairContext {
                        problem: &cfg.problem,
                        train_field: &field,
                        pretrained: &model,
                        train: &train_data,
                        input: &input,
                        queries: test.queries.view(),
                        observations: Some(&obs),
                        seed: derive_seed(seed, i as u64),
                    };
                    methods.iter().map(|m| Ok(l2_relative_error(&m.predict(&ctx)?, &target)?)).collect()
                })
                .collect();
            for errs in per_function {
                for (m, e) in methods.iter().zip(errs?) {
                    out.errors.entry((m.name().to_string(), noise.to_bits())).or_default().push(e);
                }
            }
        }
    }
    Ok(out)
}

/// Detection followed by every configured repair method, aggregated per method and noise level.
pub fn run_repair_comparison(cfg: &ExperimentConfig, registry: &Registry) -> HarnessResult<ResultTable> {
    let start = Instant::now();
    let r = repair_errors(cfg, registry)?;
    let wall = start.elapsed().as_secs_f64();
    let mut table = ResultTable::new("repair", cfg);
    table.push(Row::new("detection", "flag_rate", &r.flagged, wall));
    for spec in &cfg.methods {
        let name = registry.create(spec, &method_settings(cfg, 0))?.name().to_string();
        for &noise in &cfg.observations.noise_levels {
            if let Some(e) = r.errors.get(&(name.clone(), noise.to_bits())) {
                table.push(Row::new(format!("method={name},noise={noise}"), ERROR_METRIC, e, wall));
            }
        }
    }
    Ok(table)
}

/// Re-runs the experiment a table was produced by, from its embedded config.
pub fn rerun(table: &ResultTable, registry: &Registry) -> HarnessResult<ResultTable> {
    match table.experiment.as_str() {
        "heatmap" => Ok(run_heatmap(&table.config)?.table),
        "capacity" => run_capacity_sweep(&table.config),
        "detect" => run_detection(&table.config),
        "repair" => run_repair_comparison(&table.config, registry),
        other => Err(HarnessError::Config(format!("unknown experiment kind {other}"))),
    }
}
