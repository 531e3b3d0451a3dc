use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fields::{linspace, FunctionSample};
use crate::interp::CubicSpline;

use super::SolutionField;

pub const OUTPUT_POINTS: usize = 101;
const SUBSTEPS: usize = 1000;
const CROSSING_TOL: f64 = 1e-10;

pub fn initial_value(x: f64) -> f64 {
    (PI * x).sin()
}

pub fn inflow_value(t: f64) -> f64 {
    (PI * t / 2.0).sin()
}

fn rk4_back(speed: &CubicSpline, x: f64, h: f64) -> f64 {
    let f = |y: f64| -speed.eval(y);
    let k1 = f(x);
    let k2 = f(x + 0.5 * h * k1);
    let k3 = f(x + 0.5 * h * k2);
    let k4 = f(x + h * k3);
    x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
}

/// `u_t + v(x) u_x = 0` on `[0,1]²` with `u(x,0) = sin(πx)`, `u(0,t) = sin(πt/2)`,
/// solved along characteristics.
///
/// From each output abscissa the characteristic is traced backward in time with
/// RK4. If its foot stays inside the domain until `t = 0` the initial value is
/// used; otherwise the inflow value at the crossing time of `x = 0`, located by
/// bisection on the substep length.
pub fn solve_advection(v: &FunctionSample) -> Result<SolutionField> {
    let speed = v.interpolant()?;
    let vmin = v.values.iter().copied().fold(f64::INFINITY, f64::min);
    if !(vmin > 0.0) {
        return Err(Error::InvalidArgument(format!("advection speed must be positive, min is {vmin}")));
    }
    let grid = linspace(0.0, 1.0, OUTPUT_POINTS);
    let out = OUTPUT_POINTS - 1;
    let per_output = SUBSTEPS / out;
    let h = 1.0 / SUBSTEPS as f64;
    let mut values = vec![0.0; OUTPUT_POINTS * OUTPUT_POINTS];
    for (i, &x0) in grid.iter().enumerate() {
        let row = &mut values[i * OUTPUT_POINTS..(i + 1) * OUTPUT_POINTS];
        row[0] = initial_value(x0);
        // Backward time elapsed at which the characteristic leaves through x = 0.
        let mut exit: Option<f64> = if x0 == 0.0 { Some(0.0) } else { None };
        let mut x = x0;
        for step in 0..SUBSTEPS {
            if exit.is_none() {
                let next = rk4_back(&speed, x, h);
                if next <= 0.0 {
                    let (mut lo, mut hi) = (0.0, h);
                    while hi - lo > CROSSING_TOL {
                        let mid = 0.5 * (lo + hi);
                        if rk4_back(&speed, x, mid) > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    exit = Some(step as f64 * h + 0.5 * (lo + hi));
                } else {
                    x = next;
                }
            }
            if (step + 1) % per_output == 0 {
                let j = (step + 1) / per_output;
                let t = grid[j];
                row[j] = match exit {
                    Some(s) => inflow_value(t - s),
                    None => initial_value(x),
                };
            }
        }
        if !x.is_finite() || x > 1.0 + 1e-12 {
            return Err(Error::CharacteristicEscape(x));
        }
    }
    Ok(SolutionField { x: grid.clone(), t: Some(grid), values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::sensor_grid;

    #[test]
    fn unit_speed_closed_form() {
        let v = FunctionSample::from_fn(&sensor_grid(100), |_| 1.0);
        let u = solve_advection(&v).unwrap();
        let mut worst = 0.0_f64;
        for i in 0..OUTPUT_POINTS {
            for j in 0..OUTPUT_POINTS {
                let (x, t) = (i as f64 / 100.0, j as f64 / 100.0);
                let exact = if x >= t { (PI * (x - t)).sin() } else { (PI * (t - x) / 2.0).sin() };
                worst = worst.max((u.at(i, j) - exact).abs());
            }
        }
        assert!(worst < 1e-8, "max error {worst}");
    }

    #[test]
    fn slices_reproduce_data() {
        let v = FunctionSample::from_fn(&sensor_grid(100), |x| 1.0 + 0.5 * (3.0 * x).sin().abs());
        let u = solve_advection(&v).unwrap();
        for k in 0..OUTPUT_POINTS {
            let s = k as f64 / 100.0;
            assert_eq!(u.at(k, 0), initial_value(s));
            assert_eq!(u.at(0, k), inflow_value(s));
        }
    }
}
