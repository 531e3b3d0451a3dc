use crate::error::{Error, Result};
use crate::fields::{linspace, FunctionSample};

use super::{CyclicTridiagonal, SolutionField};

pub const OUTPUT_POINTS: usize = 101;
const BLOWUP: f64 = 1e6;
const CFL: f64 = 0.25;

/// Periodic viscous Burgers `u_t + (u²/2)_x = ν u_xx` on `[0,1) × [0,1]` with
/// `nx` cells and at least `min_steps` time steps (more if the CFL bound demands).
///
/// Crank–Nicolson diffusion, Adams–Bashforth convection with a central
/// conservative flux; the discrete mass `Σ u_i dx` is preserved exactly.
pub fn solve_burgers_on(v0: &FunctionSample, nu: f64, nx: usize, min_steps: usize) -> Result<SolutionField> {
    if !(nu > 0.0) {
        return Err(Error::InvalidArgument(format!("viscosity must be positive, got {nu}")));
    }
    let out = OUTPUT_POINTS - 1;
    if !nx.is_multiple_of(out) || nx == 0 || min_steps == 0 {
        return Err(Error::InvalidArgument(format!("{nx} cells must be a multiple of {out}")));
    }
    let ends = (v0.values[0], *v0.values.last().unwrap_or(&0.0));
    if (ends.0 - ends.1).abs() > 1e-8 {
        return Err(Error::InvalidArgument(format!("initial condition is not periodic: {} vs {}", ends.0, ends.1)));
    }
    let spline = v0.interpolant()?;
    let dx = 1.0 / nx as f64;
    let mut u: Vec<f64> = (0..nx).map(|i| spline.eval(i as f64 * dx)).collect();
    let umax = u.iter().fold(0.0_f64, |a, b| a.max(b.abs())).max(1e-12);
    // Steps are a multiple of 100 so every output time lands on a step.
    let cfl_steps = (umax / (CFL * dx)).ceil() as usize;
    let nt = min_steps.max(cfl_steps).div_ceil(out) * out;
    let dt = 1.0 / nt as f64;
    let r = nu * dt / (dx * dx);
    let solver = CyclicTridiagonal::new(nx, -0.5 * r, 1.0 + r, -0.5 * r);

    let convection = |u: &[f64]| -> Vec<f64> {
        (0..nx)
            .map(|i| {
                let up = u[(i + 1) % nx];
                let um = u[(i + nx - 1) % nx];
                -(up * up - um * um) / (4.0 * dx)
            })
            .collect()
    };
    let (sx, st) = (nx / out, nt / out);
    let mut values = vec![0.0; OUTPUT_POINTS * OUTPUT_POINTS];
    let record = |values: &mut [f64], u: &[f64], j: usize| {
        for i in 0..OUTPUT_POINTS {
            values[i * OUTPUT_POINTS + j] = u[(i * sx) % nx];
        }
    };
    record(&mut values, &u, 0);
    let mut c_prev = convection(&u);
    let mut rhs = vec![0.0; nx];
    for n in 1..=nt {
        let c_now = convection(&u);
        let w = if n == 1 { (1.0, 0.0) } else { (1.5, -0.5) };
        for i in 0..nx {
            let lap = u[(i + nx - 1) % nx] - 2.0 * u[i] + u[(i + 1) % nx];
            rhs[i] = u[i] + 0.5 * r * lap + dt * (w.0 * c_now[i] + w.1 * c_prev[i]);
        }
        solver.solve(&mut rhs);
        std::mem::swap(&mut u, &mut rhs);
        c_prev = c_now;
        let peak = u.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        if !(peak <= BLOWUP) {
            return Err(Error::Instability(peak));
        }
        if n % st == 0 {
            record(&mut values, &u, n / st);
        }
    }
    let grid = linspace(0.0, 1.0, OUTPUT_POINTS);
    Ok(SolutionField { x: grid.clone(), t: Some(grid), values })
}

/// Reference solve with 600 cells.
pub fn solve_burgers(v0: &FunctionSample, nu: f64) -> Result<SolutionField> {
    solve_burgers_on(v0, nu, 600, 600)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::sensor_grid;

    #[test]
    fn constants_are_steady() {
        let v = FunctionSample::from_fn(&sensor_grid(100), |_| 0.7);
        let u = solve_burgers_on(&v, 0.1, 200, 200).unwrap();
        assert!(u.values.iter().all(|&x| (x - 0.7).abs() < 1e-12));
    }

    #[test]
    fn rejects_non_periodic_input() {
        let v = FunctionSample::from_fn(&sensor_grid(100), |x| x);
        assert!(solve_burgers(&v, 0.1).is_err());
    }
}
