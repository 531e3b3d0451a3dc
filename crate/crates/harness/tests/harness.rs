use ndarray::Array2;
use opex_core::dataset::generate_dataset;
use opex_core::deeponet::evaluate;
use opex_core::fields::GaussianFieldSpec;
use opex_core::problem::ProblemDef;
use opex_harness::config::{CapacitySweep, ExperimentConfig, Placement, Scale};
use opex_harness::container::{container_paths, export_dataset, import_dataset, load_model, read_container, save_model, write_container};
use opex_harness::experiments::{observation_indices, run_capacity_sweep, run_heatmap, run_repair_comparison, test_dataset, train_model, ERROR_METRIC};
use opex_harness::registry::{MethodSettings, Registry, RepairContext, RepairMethod};
use opex_harness::table::{mean_std, ResultTable, Row};
use opex_harness::{HarnessError, HarnessResult};

fn tiny(problem: ProblemDef) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(problem, Scale::Desk);
    cfg.n_train = 20;
    cfg.n_test = 3;
    cfg.training.iters = 200;
    cfg.training.log_every = 100;
    cfg.seeds = vec![0];
    cfg.model.width = 10;
    cfg.n_calibration = 8;
    cfg.fine_tune_iters = Some(20);
    cfg
}

#[test]
fn dataset_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(&ProblemDef::antiderivative(), &GaussianFieldSpec::rbf(0.3), 4, 3).unwrap();
    let first = dir.path().join("a");
    export_dataset(&data, &first).unwrap();
    let back = import_dataset(&first).unwrap();
    assert_eq!(back.branch, data.branch);
    assert_eq!(back.queries, data.queries);
    assert_eq!(back.targets, data.targets);
    assert_eq!(back.sensors, data.sensors);
    let second = dir.path().join("b");
    export_dataset(&back, &second).unwrap();
    let (_, bin_a) = container_paths(&first);
    let (_, bin_b) = container_paths(&second);
    assert_eq!(std::fs::read(bin_a).unwrap(), std::fs::read(bin_b).unwrap());
}

#[test]
fn truncated_blob_is_a_checksum_failure() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_dataset(&ProblemDef::antiderivative(), &GaussianFieldSpec::rbf(0.3), 2, 1).unwrap();
    let path = dir.path().join("d");
    export_dataset(&data, &path).unwrap();
    let (_, bin) = container_paths(&path);
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() - 16]).unwrap();
    assert!(matches!(import_dataset(&path), Err(HarnessError::ChecksumFailure(_))));

    let mut flipped = bytes.clone();
    flipped[3] ^= 0x40;
    std::fs::write(&bin, &flipped).unwrap();
    assert!(matches!(read_container(&path), Err(HarnessError::ChecksumFailure(_))));
}

fn foreign(dir: &std::path::Path, declared: usize) -> std::path::PathBuf {
    let (n, m, q) = (3, 5, 4);
    let branch: Vec<f64> = (0..n * m).map(|i| i as f64 * 0.1).collect();
    let sensors: Vec<f64> = (0..m).map(|i| i as f64 / (m - 1) as f64).collect();
    let queries = [0.0, 0.0, 0.5, 0.0, 0.0, 0.5, 1.0, 1.0];
    let targets: Vec<f64> = (0..n * q).map(|i| (i as f64).sin()).collect();
    let path = dir.join(format!("foreign{declared}"));
    write_container(
        &path,
        "dataset",
        Some(declared),
        serde_json::Value::Null,
        &[("branch", vec![n, m], &branch), ("sensors", vec![m], &sensors), ("queries", vec![q, 2], &queries), ("targets", vec![n, q], &targets)],
    )
    .unwrap();
    path
}

#[test]
fn foreign_two_dimensional_dataset_is_accepted_when_declared() {
    let dir = tempfile::tempdir().unwrap();
    let data = import_dataset(&foreign(dir.path(), 2)).unwrap();
    assert_eq!(data.query_dim(), 2);
    assert_eq!(data.len(), 3);
    assert_eq!(data.meta.source, "imported");
    assert!(matches!(import_dataset(&foreign(dir.path(), 1)), Err(HarnessError::ManifestMismatch(_))));
}

#[test]
fn model_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(ProblemDef::antiderivative());
    let (model, _) = train_model(&cfg, 0.5, 0).unwrap();
    let path = dir.path().join("model");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    let test = test_dataset(&cfg, 0.2, 0).unwrap();
    assert_eq!(evaluate(&model, &test).unwrap(), evaluate(&back, &test).unwrap());
}

struct Constant;

impl RepairMethod for Constant {
    fn name(&self) -> &str {
        "constant"
    }

    fn predict(&self, ctx: &RepairContext) -> HarnessResult<Vec<f64>> {
        Ok(vec![1.0; ctx.queries.nrows()])
    }
}

fn settings(cfg: &ExperimentConfig) -> MethodSettings {
    opex_harness::experiments::method_settings(cfg, 0)
}

#[test]
fn registry_resolves_names_and_arguments() {
    let r = Registry::default();
    let s = settings(&tiny(ProblemDef::antiderivative()));
    for name in ["deeponet", "ft-phys", "ft-obs-a", "ft-obs-t", "gpr", "mfgpr", "mfnn", "pinn", "pideeponet"] {
        assert!(r.names().contains(&name), "{name}");
    }
    assert_eq!(r.create("ft-phys:branch", &s).unwrap().name(), "ft-phys:branch");
    assert_eq!(r.create("ft-obs-t:adaptive", &s).unwrap().name(), "ft-obs-t:adaptive");
    assert!(r.create("ft-obs-t", &s).unwrap().uses_observations());
    assert!(!r.create("ft-phys", &s).unwrap().uses_observations());
    assert!(matches!(r.create("ft-phys:everything", &s), Err(HarnessError::UnknownMethod(_))));
    assert!(matches!(r.create("kriging", &s), Err(HarnessError::UnknownMethod(_))));
}

#[test]
fn custom_method_is_selected_at_runtime() {
    let mut r = Registry::empty();
    r.register("constant", |_, _| Ok(Box::new(Constant)));
    let mut cfg = tiny(ProblemDef::antiderivative());
    cfg.methods = vec!["constant".into()];
    let table = run_repair_comparison(&cfg, &r).unwrap();
    let row = table.find("method=constant,noise=0", ERROR_METRIC).unwrap();
    assert_eq!(row.n, 3);
    assert!(row.mean > 0.0);
}

#[test]
fn frozen_only_repair_equals_plain_evaluation() {
    let mut cfg = tiny(ProblemDef::antiderivative());
    cfg.methods = vec!["deeponet".into()];
    let table = run_repair_comparison(&cfg, &Registry::default()).unwrap();
    let (model, _) = train_model(&cfg, cfg.l_train[0], 0).unwrap();
    let plain = evaluate(&model, &test_dataset(&cfg, cfg.l_test[0], 0).unwrap()).unwrap();
    let row = table.find("method=deeponet,noise=0", ERROR_METRIC).unwrap();
    let (mean, std) = mean_std(&plain);
    assert!((row.mean - mean).abs() <= 1e-15 && (row.std - std).abs() <= 1e-15);
}

#[test]
fn single_cell_heatmap_has_one_error_row() {
    let mut cfg = tiny(ProblemDef::antiderivative());
    cfg.l_train = vec![0.5];
    cfg.l_test = vec![0.5];
    let out = run_heatmap(&cfg).unwrap();
    assert_eq!(out.table.rows_for_metric(ERROR_METRIC).count(), 1);
    assert!(out.fit.is_none());
}

#[test]
fn capacity_sweep_needs_two_settings_and_reports_both_regimes() {
    let mut cfg = tiny(ProblemDef::antiderivative());
    cfg.capacity = Some(CapacitySweep::Widths(vec![4]));
    assert!(matches!(run_capacity_sweep(&cfg), Err(HarnessError::Config(_))));
    cfg.capacity = Some(CapacitySweep::Iterations(vec![100, 200]));
    let table = run_capacity_sweep(&cfg).unwrap();
    for setting in ["iterations=100", "iterations=200"] {
        for metric in ["in_error", "ex_error", "train_loss"] {
            assert!(table.find(setting, metric).is_some(), "{setting} {metric}");
        }
    }
}

#[test]
fn observation_placements() {
    let queries = Array2::from_shape_fn((100, 1), |(i, _)| i as f64 / 99.0);
    let even = observation_indices(&Placement::Even, 7, queries.view(), 0).unwrap();
    assert_eq!(even, vec![14, 28, 42, 57, 71, 85, 99]);
    let random = observation_indices(&Placement::UniformRandom, 7, queries.view(), 3).unwrap();
    assert_eq!(random.len(), 7);
    assert_eq!(random, observation_indices(&Placement::UniformRandom, 7, queries.view(), 3).unwrap());
    let fixed = Placement::FixedList { points: vec![vec![0.5], vec![0.501], vec![0.49], vec![0.0]] };
    assert_eq!(observation_indices(&fixed, 0, queries.view(), 0).unwrap(), vec![0, 49, 50]);
    let wrong = Placement::FixedList { points: vec![vec![0.5, 0.5]] };
    assert!(observation_indices(&wrong, 0, queries.view(), 0).is_err());
    assert!(observation_indices(&Placement::UniformRandom, 101, queries.view(), 0).is_err());
}

#[test]
fn result_table_csv_and_sorting() {
    let cfg = tiny(ProblemDef::antiderivative());
    let mut t = ResultTable::new("repair", &cfg);
    t.push(Row::new("method=b,noise=0", ERROR_METRIC, &[0.4, 0.2], 1.0));
    t.push(Row::new("method=a,noise=0", ERROR_METRIC, &[0.2], 1.0));
    t.push(Row::new("method=c,noise=0", ERROR_METRIC, &[0.2], 1.0));
    let sorted: Vec<&str> = t.sorted().iter().map(|r| r.setting.as_str()).collect();
    assert_eq!(sorted, vec!["method=a,noise=0", "method=c,noise=0", "method=b,noise=0"]);
    let csv = t.to_csv().unwrap();
    assert!(csv.contains("\"method=b,noise=0\""));
    assert!(t.rows.iter().all(|r| r.std >= 0.0));
    let back = ResultTable::from_json(&t.to_json().unwrap()).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.max_mean_difference(&t), Some(0.0));
}

#[test]
fn config_hash_tracks_the_config() {
    let a = tiny(ProblemDef::antiderivative());
    let mut b = a.clone();
    assert_eq!(ResultTable::new("x", &a).config_hash, ResultTable::new("x", &b).config_hash);
    b.n_test += 1;
    assert_ne!(ResultTable::new("x", &a).config_hash, ResultTable::new("x", &b).config_hash);
}

#[test]
fn config_validation_and_presets() {
    let full = ExperimentConfig::preset(ProblemDef::diffusion_reaction(), Scale::Full);
    assert_eq!((full.model.width, full.training.iters, full.seeds.len()), (100, 500_000, 10));
    let mut bad = tiny(ProblemDef::antiderivative());
    bad.seeds.clear();
    assert!(bad.validate().is_err());
    let mut bad = tiny(ProblemDef::antiderivative());
    bad.l_test = vec![-0.1];
    assert!(ExperimentConfig::from_json(&serde_json::to_string(&bad).unwrap()).is_err());
    let good = tiny(ProblemDef::burgers());
    assert_eq!(ExperimentConfig::from_json(&good.canonical_json()).unwrap(), good);
}
