use opex_core::fields::{sensor_grid, GaussianFieldSpec};
use opex_core::wasserstein::{compare_slopes, fit_power_law, w2_distance};
use rand::Rng;

fn w2(a: f64, b: f64, n: usize) -> f64 {
    w2_distance(&GaussianFieldSpec::rbf(a), &GaussianFieldSpec::rbf(b), &sensor_grid(n)).unwrap()
}

#[test]
fn rbf_table_values_and_ordering() {
    let reference = [(0.2, 0.4578), (0.15, 0.5945), (0.1, 0.7606), (0.05, 0.9721)];
    let mut prev = 0.0;
    for (l, expect) in reference {
        let d = w2(0.5, l, 101);
        assert!((d - expect).abs() / expect < 0.05, "l={l}: {d} vs {expect}");
        assert!(d > prev);
        prev = d;
    }
}

#[test]
fn symmetric_and_triangle() {
    let ls = [0.1, 0.3, 0.5, 0.9];
    for &a in &ls {
        for &b in &ls {
            let (ab, ba) = (w2(a, b, 60), w2(b, a, 60));
            assert!((ab - ba).abs() < 1e-6, "{a} {b}: {ab} vs {ba}");
            assert!(ab >= 0.0);
            for &c in &ls {
                assert!(ab <= w2(a, c, 60) + w2(c, b, 60) + 1e-8);
            }
        }
    }
}

#[test]
fn grid_refinement_is_stable() {
    let coarse = w2(0.5, 0.2, 101);
    let fine = w2(0.5, 0.2, 201);
    assert!((coarse - fine).abs() / fine < 0.01, "{coarse} vs {fine}");
}

#[test]
fn noisy_power_law_exponent() {
    let mut rng = opex_core::nd::rng::seeded(17);
    let pts: Vec<(f64, f64)> = (0..20)
        .map(|i| {
            let w = 0.1 + 0.05 * i as f64;
            let noise = 1.0 + 0.01 * (2.0 * rng.random::<f64>() - 1.0);
            (w, 0.8 * w.powf(1.7) * noise)
        })
        .collect();
    let fit = fit_power_law(&pts).unwrap();
    assert!((1.6..=1.8).contains(&fit.exponent), "{}", fit.exponent);
    assert!(fit.ci95.0 <= fit.exponent && fit.exponent <= fit.ci95.1);
    let steeper: Vec<(f64, f64)> = pts.iter().map(|&(w, e)| (w, e * w)).collect();
    let p = compare_slopes(&fit, &fit_power_law(&steeper).unwrap());
    assert!(p < 1e-3, "p = {p}");
}
