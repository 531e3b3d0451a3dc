use ndarray::Array2;
use opex_core::dataset::generate_dataset;
use opex_core::deeponet::{evaluate, mean, train, DeepONet, DeepONetConfig, ParamSubset, TrainConfig};
use opex_core::extrapolation::*;
use opex_core::fields::GaussianFieldSpec;
use opex_core::nd::rng::seeded;
use opex_core::problem::{InputFunction, ProblemDef};
use opex_core::nd::activation::ActivationKind;

fn small_model(problem: &ProblemDef, seed: u64) -> DeepONet {
    DeepONet::for_problem(problem, DeepONetConfig::for_problem(problem, 12, seed))
}

#[test]
fn excluded_parameters_stay_bit_identical() {
    let problem = ProblemDef::antiderivative();
    let model = small_model(&problem, 1);
    let data = generate_dataset(&problem, &GaussianFieldSpec::rbf(0.2), 1, 9).unwrap();
    let v = InputFunction::new(data.input(0)).unwrap();
    let before = model.to_flat();
    for subset in [ParamSubset::BranchAndTrunk, ParamSubset::Branch, ParamSubset::Trunk, ParamSubset::TrunkLast] {
        let mut spec = FineTuneSpec::physics(&problem, subset);
        spec.iters = 20;
        spec.n_collocation = 30;
        let (tuned, _) = ft_phys(&model, &v, &problem, &spec).unwrap();
        let after = tuned.to_flat();
        let selected = model.subset_indices(subset);
        let mut mask = vec![false; before.len()];
        selected.iter().for_each(|&i| mask[i] = true);
        for i in 0..before.len() {
            if !mask[i] {
                assert_eq!(before[i].to_bits(), after[i].to_bits(), "{subset:?} changed excluded index {i}");
            }
        }
        assert!(selected.iter().any(|&i| before[i] != after[i]), "{subset:?} left every selected parameter unchanged");
    }
}

#[test]
fn lbfgs_fine_tune_respects_the_mask() {
    let problem = ProblemDef::antiderivative();
    let model = small_model(&problem, 2);
    let data = generate_dataset(&problem, &GaussianFieldSpec::rbf(0.3), 1, 4).unwrap();
    let obs = Observations::at_indices(data.queries.view(), data.target(0).as_slice(), &[10, 40, 70, 95]).unwrap();
    let mut spec = FineTuneSpec::observations_alone(&problem);
    spec.optimizer = OptimizerKind::Lbfgs;
    spec.subset = ParamSubset::Trunk;
    spec.iters = 15;
    let (tuned, _) = ft_obs_alone(&model, &data.input(0), &obs, &spec).unwrap();
    let before = model.to_flat();
    let after = tuned.to_flat();
    for i in model.branch_range().chain([model.bias_index()]) {
        assert_eq!(before[i].to_bits(), after[i].to_bits());
    }
    let bound = |m: &DeepONet| mismatch_obs(&BoundModel { model: m, v: &data.input(0).values }, &obs).unwrap();
    assert!(bound(&tuned) < bound(&model));
}

#[test]
fn noise_has_the_requested_relative_scale() {
    let n = 20_000;
    let points = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64);
    let values: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 2.0 } else { -2.0 }).collect();
    let clean = Observations::new(points, values.clone()).unwrap();
    let noisy = clean.with_noise(0.1, &mut seeded(3));
    let diffs: Vec<f64> = noisy.values.iter().zip(&values).map(|(a, b)| a - b).collect();
    let m = mean(&diffs);
    let sd = (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    assert!(m.abs() < 0.01, "{m}");
    assert!((sd - 0.2).abs() < 0.01, "{sd}");
    assert_eq!(noisy.noise, Some(0.1));
}

#[test]
fn fine_tuning_repairs_a_briefly_trained_model() {
    let problem = ProblemDef::antiderivative();
    let train_set = generate_dataset(&problem, &GaussianFieldSpec::rbf(0.5), 60, 21).unwrap();
    let test_set = generate_dataset(&problem, &GaussianFieldSpec::rbf(0.2), 4, 22).unwrap();
    let mut model = DeepONet::for_problem(&problem, DeepONetConfig::antiderivative(5));
    train(&mut model, &train_set, &TrainConfig::new(0.002, 2000), &[]).unwrap();
    let frozen = mean(&evaluate(&model, &test_set).unwrap());

    let mut phys = Vec::new();
    let mut joint = Vec::new();
    let mut spec_t = FineTuneSpec::observations_together(&problem);
    spec_t.iters = 300;
    spec_t.adaptive_lambda = Some(0.3);
    for i in 0..test_set.len() {
        let v = test_set.input(i);
        let single = test_set.select(&[i]);
        let (tuned, _) = ft_phys(&model, &InputFunction::new(v.clone()).unwrap(), &problem, &FineTuneSpec::physics(&problem, ParamSubset::Trunk)).unwrap();
        phys.push(evaluate(&tuned, &single).unwrap()[0]);
        let obs = Observations::random_on_grid(test_set.queries.view(), test_set.target(i).as_slice(), 7, &mut seeded(i as u64)).unwrap();
        let (tuned, log) = ft_obs_together(&model, &v, &obs, &train_set, &spec_t).unwrap();
        joint.push(evaluate(&tuned, &single).unwrap()[0]);
        assert_eq!(log.lambda_trajectory[0], 0.1);
        assert!(log.lambda_trajectory.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(log.lambda_trajectory.len(), 3);
    }
    assert!(mean(&phys) < frozen / 2.0, "{} vs {frozen}", mean(&phys));
    assert!(mean(&joint) < frozen, "{} vs {frozen}", mean(&joint));
}

#[test]
fn detection_flags_rough_inputs() {
    let problem = ProblemDef::antiderivative();
    let train_set = generate_dataset(&problem, &GaussianFieldSpec::rbf(0.5), 60, 31).unwrap();
    let mut model = small_model(&problem, 6);
    train(&mut model, &train_set, &TrainConfig::new(0.002, 2000), &[]).unwrap();
    let measures = MeasureSpec::new(true, Some(10));
    let t = calibrate_threshold(&model, &problem, &GaussianFieldSpec::rbf(0.5), 1.5, 20, &measures, 32).unwrap();
    assert!(t.eps0_phys.unwrap() > 0.0 && t.eps0_obs.unwrap() > 0.0);
    let rough = generate_dataset(&problem, &GaussianFieldSpec::rbf(0.1), 10, 33).unwrap();
    let m = mismatch_on_dataset(&model, &problem, &rough, &measures, 34).unwrap();
    let flagged = m.iter().filter(|(p, o)| decide(*p, *o, &t).decision == Regime::HarmfulExtrapolation).count();
    assert!(flagged >= 8, "{flagged}");
}

#[test]
fn pinn_rejects_piecewise_linear_second_order() {
    let problem = ProblemDef::diffusion_reaction();
    let mut config = DeepONetConfig::space_time(8, 0);
    config.trunk.activation = ActivationKind::Relu;
    let data = generate_dataset(&problem, &GaussianFieldSpec::rbf(0.5), 1, 1);
    let v = InputFunction::new(data.unwrap().input(0)).unwrap();
    let mut spec = FineTuneSpec::physics(&problem, ParamSubset::BranchAndTrunk);
    spec.iters = 1;
    spec.n_collocation = 10;
    spec.n_boundary = 4;
    assert!(train_pinn(config, &v, &problem, &spec).is_err());
}
