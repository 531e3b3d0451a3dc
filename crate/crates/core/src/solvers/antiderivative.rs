use crate::error::{Error, Result};
use crate::fields::{sensor_grid, FunctionSample};

use super::SolutionField;

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// Adaptive Dormand–Prince integration of a scalar ODE `y' = f(t, y)`, reporting
/// the solution at each of the increasing `outputs` (the first may equal `t0`).
pub fn dopri5_scalar(f: impl Fn(f64, f64) -> f64, t0: f64, y0: f64, outputs: &[f64], rtol: f64, atol: f64) -> Result<Vec<f64>> {
    let mut t = t0;
    let mut y = y0;
    let mut h: f64 = 1e-3;
    let mut out = Vec::with_capacity(outputs.len());
    for &target in outputs {
        while target - t > 1e-14 * target.abs().max(1.0) {
            let step = h.min(target - t);
            if step < 1e-14 {
                return Err(Error::StepFailure(t));
            }
            let mut k = [0.0; 7];
            for s in 0..7 {
                let ys = y + step * (0..s).map(|j| A[s][j] * k[j]).sum::<f64>();
                k[s] = f(t + C[s] * step, ys);
            }
            let y5 = y + step * (0..7).map(|j| B5[j] * k[j]).sum::<f64>();
            let y4 = y + step * (0..7).map(|j| B4[j] * k[j]).sum::<f64>();
            let scale = atol + rtol * y.abs().max(y5.abs());
            let err = ((y5 - y4) / scale).abs();
            if !err.is_finite() {
                return Err(Error::StepFailure(t));
            }
            if err <= 1.0 {
                t += step;
                y = y5;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = step * factor;
        }
        t = target;
        out.push(y);
    }
    Ok(out)
}

/// `u(x) = ∫₀ˣ v(s) ds` on `queries`, with `v` interpolated by a cubic spline.
pub fn solve_antiderivative_on(v: &FunctionSample, queries: &[f64]) -> Result<SolutionField> {
    let spline = v.interpolant()?;
    let values = dopri5_scalar(|x, _| spline.eval(x), 0.0, 0.0, queries, 1e-8, 1e-12)?;
    Ok(SolutionField { x: queries.to_vec(), t: None, values })
}

/// Antiderivative on the 100-point query grid over `[0, 1]`.
pub fn solve_antiderivative(v: &FunctionSample) -> Result<SolutionField> {
    solve_antiderivative_on(v, &sensor_grid(100))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_and_constant_inputs() {
        let grid = sensor_grid(100);
        let z = solve_antiderivative(&FunctionSample::from_fn(&grid, |_| 0.0)).unwrap();
        assert!(z.values.iter().all(|&u| u == 0.0));
        let one = solve_antiderivative(&FunctionSample::from_fn(&grid, |_| 1.0)).unwrap();
        for (u, x) in one.values.iter().zip(&grid) {
            assert!((u - x).abs() < 1e-12);
        }
    }

    #[test]
    fn exponential_growth() {
        let out = dopri5_scalar(|_, y| y, 0.0, 1.0, &[0.5, 1.0], 1e-10, 1e-12).unwrap();
        assert!((out[1] - std::f64::consts::E).abs() < 1e-8);
    }
}
