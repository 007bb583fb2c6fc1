//! Backstepping transformation pair and predictor feedback laws for
//! `Ẋ = AX + B u(0,t)`, `u_t = u_x`, `u(D,t) = U(t)`.
//!
//! Spatial integrals are trapezoid sums on the actuator grid. The kernels
//! `K e^{A m dx} B` and friends only depend on the node offset, so
//! [`Predictor`] tabulates them once per grid.

mod constants;

pub use constants::{
    check_theorem1, check_theorem2, compute_constants, small_gain_lhs, strengthened_small_gain,
    theoretical_rate, ConditionCheck, ConstantOverrides, DesignConstants, Provenance,
    DELTA_FRACTION, MAX_HALVINGS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_hurwitz, mat_exp, spectral_abscissa, DecayEnvelope, Matrix};
use crate::quantization::QuantizedSnapshot;

/// `Ẋ = AX + BU(t - D)` with scalar input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub a: Matrix,
    pub b: Matrix,
    pub delay_d: f64,
}

impl PlantModel {
    pub fn new(a: Matrix, b: Matrix, delay_d: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::NotSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        if b.rows() != a.rows() || b.cols() != 1 {
            return Err(Error::Dimension(format!(
                "B must be {}x1, got {}x{}",
                a.rows(),
                b.rows(),
                b.cols()
            )));
        }
        if !(delay_d > 0.0 && delay_d.is_finite()) {
            return Err(Error::Scenario(format!(
                "delay D = {delay_d} must be positive"
            )));
        }
        Ok(Self { a, b, delay_d })
    }

    pub fn dim_n(&self) -> usize {
        self.a.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub k: Matrix,
    pub envelope: DecayEnvelope,
}

impl ControllerGains {
    /// Checks that `K` is `1×n` and `A + BK` is Hurwitz. The envelope is taken
    /// as given; use [`crate::linalg::estimate_decay_envelope`] to build one.
    pub fn new(plant: &PlantModel, k: Matrix, envelope: DecayEnvelope) -> Result<Self> {
        if k.rows() != 1 || k.cols() != plant.dim_n() {
            return Err(Error::Dimension(format!(
                "K must be 1x{}, got {}x{}",
                plant.dim_n(),
                k.rows(),
                k.cols()
            )));
        }
        let acl = closed_loop_matrix(plant, &k);
        if !is_hurwitz(&acl) {
            return Err(Error::NotHurwitz {
                abscissa: spectral_abscissa(&acl)?,
            });
        }
        Ok(Self { k, envelope })
    }

    pub fn closed_loop(&self, plant: &PlantModel) -> Matrix {
        closed_loop_matrix(plant, &self.k)
    }
}

fn closed_loop_matrix(plant: &PlantModel, k: &Matrix) -> Matrix {
    &plant.a + &(&plant.b * k)
}

/// Uniform grid on `[0, D]`, both endpoints included.
pub fn grid_cells(delay: f64, dx: f64) -> Result<usize> {
    if !(dx > 0.0) {
        return Err(Error::Grid(format!("dx = {dx} must be positive")));
    }
    let cells = delay / dx;
    let rounded = cells.round();
    if rounded < 1.0 || (cells - rounded).abs() > 1e-9 * cells.max(1.0) {
        return Err(Error::Grid(format!(
            "D / dx = {cells} is not a positive integer"
        )));
    }
    Ok(rounded as usize)
}

/// Transport-PDE state `u(·, t)` on the actuator grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState {
    pub values: Vec<f64>,
    pub grid_dx: f64,
}

impl ActuatorState {
    pub fn new(values: Vec<f64>, grid_dx: f64, delay: f64) -> Result<Self> {
        let cells = grid_cells(delay, grid_dx)?;
        if values.len() != cells + 1 {
            return Err(Error::Grid(format!(
                "expected {} nodes, got {}",
                cells + 1,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("actuator state"));
        }
        Ok(Self { values, grid_dx })
    }

    pub fn from_fn(delay: f64, dx: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let cells = grid_cells(delay, dx)?;
        Self::new((0..=cells).map(|j| f(j as f64 * dx)).collect(), dx, delay)
    }

    pub fn constant(value: f64, delay: f64, dx: f64) -> Result<Self> {
        Self::from_fn(delay, dx, |_| value)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Backstepping-transformed actuator state `w(·, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformedState {
    pub w: Vec<f64>,
    pub grid_dx: f64,
}

impl TransformedState {
    pub fn sup_norm(&self) -> f64 {
        self.w.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tabulated kernels for one plant, gain and grid.
#[derive(Debug, Clone)]
pub struct Predictor {
    cells: usize,
    dx: f64,
    // K e^{A m dx} and K e^{A m dx} B, m = 0..=cells
    k_exp: Vec<Vec<f64>>,
    k_exp_b: Vec<f64>,
    // same with A + BK
    k_exp_cl: Vec<Vec<f64>>,
    k_exp_cl_b: Vec<f64>,
}

impl Predictor {
    pub fn new(plant: &PlantModel, gains: &ControllerGains, dx: f64) -> Result<Self> {
        let cells = grid_cells(plant.delay_d, dx)?;
        let acl = gains.closed_loop(plant);
        let mut k_exp = Vec::with_capacity(cells + 1);
        let mut k_exp_b = Vec::with_capacity(cells + 1);
        let mut k_exp_cl = Vec::with_capacity(cells + 1);
        let mut k_exp_cl_b = Vec::with_capacity(cells + 1);
        for m in 0..=cells {
            let s = m as f64 * dx;
            let ke = &gains.k * &mat_exp(&plant.a, s)?;
            k_exp_b.push((&ke * &plant.b)[(0, 0)]);
            k_exp.push(ke.as_slice().to_vec());
            let kc = &gains.k * &mat_exp(&acl, s)?;
            k_exp_cl_b.push((&kc * &plant.b)[(0, 0)]);
            k_exp_cl.push(kc.as_slice().to_vec());
        }
        Ok(Self {
            cells,
            dx,
            k_exp,
            k_exp_b,
            k_exp_cl,
            k_exp_cl_b,
        })
    }

    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    fn check(&self, x_len: usize, u: &[f64]) -> Result<()> {
        if u.len() != self.nodes() {
            return Err(Error::Grid(format!(
                "expected {} nodes, got {}",
                self.nodes(),
                u.len()
            )));
        }
        if x_len != self.k_exp[0].len() {
            return Err(Error::Dimension(format!("state has {x_len} components")));
        }
        Ok(())
    }

    /// `∫₀^{x_i} kernel[i - j] f(y_j) dy` by the trapezoid rule.
    fn volterra(&self, kernel: &[f64], f: &[f64], i: usize) -> f64 {
        if i == 0 {
            return 0.0;
        }
        let inner: f64 = (1..i).map(|j| kernel[i - j] * f[j]).sum();
        self.dx * (inner + 0.5 * (kernel[i] * f[0] + kernel[0] * f[i]))
    }

    /// `U_nom = K ∫₀ᴰ e^{A(D-y)} B u(y) dy + K e^{AD} X`.
    pub fn nominal(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        self.check(x.len(), u)?;
        let j = self.cells;
        Ok(self.volterra(&self.k_exp_b, u, j) + dot(&self.k_exp[j], x))
    }

    /// `K P_μ` evaluated on quantized measurements.
    pub fn quantized(&self, snapshot: &QuantizedSnapshot) -> Result<f64> {
        self.nominal(&snapshot.qx, &snapshot.qu)
    }

    /// Quantization-induced disturbance `d = K P_μ − U_nom`.
    pub fn disturbance(&self, x: &[f64], u: &[f64], snapshot: &QuantizedSnapshot) -> Result<f64> {
        Ok(self.quantized(snapshot)? - self.nominal(x, u)?)
    }

    /// `w(x) = u(x) − K∫₀ˣ e^{A(x−y)} B u(y) dy − K e^{Ax} X`.
    pub fn forward(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len(), u)?;
        Ok((0..self.nodes())
            .map(|i| u[i] - self.volterra(&self.k_exp_b, u, i) - dot(&self.k_exp[i], x))
            .collect())
    }

    /// `u(x) = w(x) + K∫₀ˣ e^{(A+BK)(x−y)} B w(y) dy + K e^{(A+BK)x} X`.
    pub fn inverse(&self, x: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        self.check(x.len(), w)?;
        Ok((0..self.nodes())
            .map(|i| w[i] + self.volterra(&self.k_exp_cl_b, w, i) + dot(&self.k_exp_cl[i], x))
            .collect())
    }
}

pub fn backstep_forward(
    x: &[f64],
    u: &ActuatorState,
    plant: &PlantModel,
    gains: &ControllerGains,
) -> Result<TransformedState> {
    let p = Predictor::new(plant, gains, u.grid_dx)?;
    Ok(TransformedState {
        w: p.forward(x, &u.values)?,
        grid_dx: u.grid_dx,
    })
}

pub fn backstep_inverse(
    x: &[f64],
    w: &TransformedState,
    plant: &PlantModel,
    gains: &ControllerGains,
) -> Result<ActuatorState> {
    let p = Predictor::new(plant, gains, w.grid_dx)?;
    Ok(ActuatorState {
        values: p.inverse(x, &w.w)?,
        grid_dx: w.grid_dx,
    })
}

pub fn nominal_predictor(
    x: &[f64],
    u: &ActuatorState,
    plant: &PlantModel,
    gains: &ControllerGains,
) -> Result<f64> {
    Predictor::new(plant, gains, u.grid_dx)?.nominal(x, &u.values)
}

pub fn quantized_predictor(
    snapshot: &QuantizedSnapshot,
    grid_dx: f64,
    plant: &PlantModel,
    gains: &ControllerGains,
) -> Result<f64> {
    Predictor::new(plant, gains, grid_dx)?.quantized(snapshot)
}
