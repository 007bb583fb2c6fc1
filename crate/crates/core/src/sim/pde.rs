//! One-step updates for the plant ODE and the transport PDE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{grid_cells, ActuatorState, PlantModel};

/// Fixed time/space steps and the run horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    pub dt: f64,
    pub dx: f64,
    pub horizon: f64,
}

impl SimGrid {
    pub fn new(dt: f64, dx: f64, horizon: f64) -> Result<Self> {
        for (name, v) in [("dt", dt), ("dx", dx), ("horizon", horizon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Grid(format!("{name} = {v} must be positive")));
            }
        }
        Ok(Self { dt, dx, horizon })
    }

    pub fn cfl(&self) -> f64 {
        self.dt / self.dx
    }

    pub fn check_cfl(&self) -> Result<()> {
        if self.cfl() > 1.0 + 1e-12 {
            return Err(Error::Cfl { ratio: self.cfl() });
        }
        Ok(())
    }

    /// Number of time steps; the trajectory has one more sample.
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn cells(&self, delay: f64) -> Result<usize> {
        grid_cells(delay, self.dx)
    }

    /// `dx / dt`, required to be an integer by the delay-line backend.
    pub fn shift_ratio(&self) -> Result<usize> {
        let r = self.dx / self.dt;
        let rounded = r.round();
        if rounded < 1.0 || (r - rounded).abs() > 1e-9 * r {
            return Err(Error::Grid(format!(
                "dx / dt = {r} must be a positive integer for the exact backend"
            )));
        }
        Ok(rounded as usize)
    }
}

/// Classic RK4 for `Ẋ = AX + B u0` with `u0` frozen over the step.
pub fn step_ode(x: &[f64], u_at_zero: f64, plant: &PlantModel, dt: f64) -> Vec<f64> {
    let f = |y: &[f64]| -> Vec<f64> {
        let mut d = plant.a.apply(y);
        for (i, di) in d.iter_mut().enumerate() {
            *di += plant.b[(i, 0)] * u_at_zero;
        }
        d
    };
    let axpy = |y: &[f64], k: &[f64], h: f64| -> Vec<f64> {
        y.iter().zip(k).map(|(a, b)| a + h * b).collect()
    };
    let k1 = f(x);
    let k2 = f(&axpy(x, &k1, dt / 2.0));
    let k3 = f(&axpy(x, &k2, dt / 2.0));
    let k4 = f(&axpy(x, &k3, dt));
    (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Lax-Friedrichs for `u_t = u_x` in place. `scratch` must have the same
/// length as `u`.
pub(crate) fn lax_friedrichs_in_place(
    u: &mut [f64],
    scratch: &mut [f64],
    boundary: f64,
    ratio: f64,
) {
    let j_max = u.len() - 1;
    for j in 1..j_max {
        scratch[j] = 0.5 * (u[j + 1] + u[j - 1]) + 0.5 * ratio * (u[j + 1] - u[j - 1]);
    }
    // one-sided upwind at the outflow end
    scratch[0] = u[0] + ratio * (u[1] - u[0]);
    scratch[j_max] = boundary;
    u.copy_from_slice(scratch);
}

pub fn step_pde_laxfriedrichs(
    u: &ActuatorState,
    boundary_u_cmd: f64,
    grid: &SimGrid,
) -> Result<ActuatorState> {
    grid.check_cfl()?;
    if (u.grid_dx - grid.dx).abs() > 1e-12 * grid.dx {
        return Err(Error::Grid(format!(
            "state dx {} vs grid dx {}",
            u.grid_dx, grid.dx
        )));
    }
    if u.values.len() < 2 {
        return Err(Error::Grid("need at least two nodes".into()));
    }
    let mut values = u.values.clone();
    let mut scratch = vec![0.0; values.len()];
    lax_friedrichs_in_place(&mut values, &mut scratch, boundary_u_cmd, grid.cfl());
    Ok(ActuatorState {
        values,
        grid_dx: u.grid_dx,
    })
}

/// Exact transport `u(x, t) = U(t + x − D)` from the control history, with
/// `u0(x + t)` before the first input reaches `x`.
///
/// The input is a zero-order hold: `U_k` (computed at `t_k`) is applied on
/// `(t_k, t_{k+1}]`, which is what the Lax-Friedrichs boundary update does.
#[derive(Debug, Clone)]
pub struct DelayLine {
    u0: Vec<f64>,
    ratio: usize,
    history: Vec<f64>,
}

impl DelayLine {
    pub fn new(u0: &ActuatorState, grid: &SimGrid) -> Result<Self> {
        if (u0.grid_dx - grid.dx).abs() > 1e-12 * grid.dx {
            return Err(Error::Grid(format!(
                "state dx {} vs grid dx {}",
                u0.grid_dx, grid.dx
            )));
        }
        Ok(Self {
            u0: u0.values.clone(),
            ratio: grid.shift_ratio()?,
            history: Vec::new(),
        })
    }

    pub fn push(&mut self, control: f64) {
        self.history.push(control);
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Profile at `t_n = n dt` into `out`.
    pub fn profile_into(&self, n: usize, out: &mut [f64]) -> Result<()> {
        let cells = self.u0.len() - 1;
        let r = self.ratio as i64;
        for (j, slot) in out.iter_mut().enumerate().take(cells + 1) {
            let m = n as i64 - r * (cells - j) as i64;
            *slot = if m <= 0 {
                // x + t ≤ D: read the initial profile at grid position j + n/r
                let pos_num = j as i64 * r + n as i64;
                let lo = (pos_num / r) as usize;
                let frac = (pos_num % r) as f64 / r as f64;
                if frac == 0.0 {
                    self.u0[lo]
                } else {
                    (1.0 - frac) * self.u0[lo] + frac * self.u0[lo + 1]
                }
            } else {
                let k = (m - 1) as usize;
                *self
                    .history
                    .get(k)
                    .ok_or(Error::InsufficientHistory { needed: k as f64 })?
            };
        }
        Ok(())
    }

    pub fn profile(&self, n: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.u0.len()];
        self.profile_into(n, &mut out)?;
        Ok(out)
    }
}

/// `u(·, t_n)` from the delay line.
pub fn step_pde_exact(line: &DelayLine, n: usize, grid: &SimGrid) -> Result<ActuatorState> {
    Ok(ActuatorState {
        values: line.profile(n)?,
        grid_dx: grid.dx,
    })
}
