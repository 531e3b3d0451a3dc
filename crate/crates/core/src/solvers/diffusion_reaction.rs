use crate::error::{Error, Result};
use crate::fields::{linspace, FunctionSample};

use super::{SolutionField, Tridiagonal};

/// Output resolution per axis (101 points on `[0, 1]`).
pub const OUTPUT_POINTS: usize = 101;
const BLOWUP: f64 = 1e6;

/// `u_t = D u_xx + k u² + v(x)` on `[0,1]²` with zero initial and boundary values,
/// using `nx` spatial intervals and `nt` time steps (both multiples of 100).
///
/// Crank–Nicolson for diffusion and second-order Adams–Bashforth for the
/// reaction and source, restricted to the 101×101 output grid.
pub fn solve_diffusion_reaction_on(v: &FunctionSample, k: f64, d: f64, nx: usize, nt: usize) -> Result<SolutionField> {
    if !(d > 0.0) || k < 0.0 {
        return Err(Error::InvalidArgument(format!("need D > 0 and k >= 0, got D={d}, k={k}")));
    }
    let out = OUTPUT_POINTS - 1;
    if !nx.is_multiple_of(out) || !nt.is_multiple_of(out) || nx == 0 || nt == 0 {
        return Err(Error::InvalidArgument(format!("grid {nx}x{nt} must be a multiple of {out}")));
    }
    let spline = v.interpolant()?;
    let dx = 1.0 / nx as f64;
    let dt = 1.0 / nt as f64;
    let xs: Vec<f64> = (0..=nx).map(|i| i as f64 * dx).collect();
    let source: Vec<f64> = xs[1..nx].iter().map(|&x| spline.eval(x)).collect();
    let m = nx - 1;
    let r = d * dt / (dx * dx);
    let solver = Tridiagonal::new(&vec![-0.5 * r; m], &vec![1.0 + r; m], &vec![-0.5 * r; m]);

    let (sx, st) = (nx / out, nt / out);
    let mut values = vec![0.0; OUTPUT_POINTS * OUTPUT_POINTS];
    let mut u = vec![0.0; m];
    let forcing = |u: &[f64]| -> Vec<f64> { u.iter().zip(&source).map(|(ui, s)| k * ui * ui + s).collect() };
    let mut f_prev = forcing(&u);
    let mut rhs = vec![0.0; m];
    for n in 1..=nt {
        let f_now = forcing(&u);
        let w = if n == 1 { (1.0, 0.0) } else { (1.5, -0.5) };
        for i in 0..m {
            let left = if i > 0 { u[i - 1] } else { 0.0 };
            let right = if i + 1 < m { u[i + 1] } else { 0.0 };
            rhs[i] = u[i] + 0.5 * r * (left - 2.0 * u[i] + right) + dt * (w.0 * f_now[i] + w.1 * f_prev[i]);
        }
        solver.solve(&mut rhs);
        std::mem::swap(&mut u, &mut rhs);
        f_prev = f_now;
        let peak = u.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        if !(peak <= BLOWUP) {
            return Err(Error::Instability(peak));
        }
        if n % st == 0 {
            let j = n / st;
            for i in 1..out {
                values[i * OUTPUT_POINTS + j] = u[i * sx - 1];
            }
        }
    }
    let grid = linspace(0.0, 1.0, OUTPUT_POINTS);
    Ok(SolutionField { x: grid.clone(), t: Some(grid), values })
}

/// Reference solve on a 201×201 internal grid.
pub fn solve_diffusion_reaction(v: &FunctionSample, k: f64, d: f64) -> Result<SolutionField> {
    solve_diffusion_reaction_on(v, k, d, 200, 200)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::sensor_grid;

    #[test]
    fn zero_source_stays_zero() {
        let v = FunctionSample::from_fn(&sensor_grid(100), |_| 0.0);
        let u = solve_diffusion_reaction(&v, 0.01, 0.01).unwrap();
        assert!(u.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_case_matches_modal_solution() {
        // k = 0, v = sin(πx): u = sin(πx)(1 − exp(−Dπ²t)) / (Dπ²).
        let pi = std::f64::consts::PI;
        let d = 0.01;
        let v = FunctionSample::from_fn(&sensor_grid(100), |x| (pi * x).sin());
        let u = solve_diffusion_reaction(&v, 0.0, d).unwrap();
        let lam = d * pi * pi;
        let mut worst = 0.0_f64;
        for i in 5..96 {
            let x = i as f64 / 100.0;
            let exact = (pi * x).sin() * (1.0 - (-lam).exp()) / lam;
            worst = worst.max(((u.at(i, 100) - exact) / exact).abs());
        }
        assert!(worst < 0.02, "relative error {worst}");
    }

    #[test]
    fn rejects_bad_grids() {
        let v = FunctionSample::from_fn(&sensor_grid(100), |_| 1.0);
        assert!(solve_diffusion_reaction_on(&v, 0.01, 0.01, 150, 200).is_err());
        assert!(solve_diffusion_reaction_on(&v, 0.01, 0.0, 200, 200).is_err());
    }
}
