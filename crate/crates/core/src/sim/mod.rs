//! Closed-loop integration of the ODE–transport-PDE cascade.
//!
//! Each step: zoom → quantize → event test → control → record → PDE → ODE,
//! with `u(0, t_n)` held over the ODE substep.

mod output;
mod pde;

pub use output::{manifest, write_csv, write_csv_file, CSV_HEADER_PREFIX};
pub use pde::{step_ode, step_pde_exact, step_pde_laxfriedrichs, DelayLine, SimGrid};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{vec_norm, NormKind};
use crate::predictor::{ActuatorState, ControllerGains, DesignConstants, PlantModel, Predictor};
use crate::quantization::{zoom_quantize_state, QuantizerSpec, ZoomState};
use crate::switching::{
    control_output, detect_event_input, detect_event_state, mu_at, step_switch, Mode, Phase,
    SwitchState, SwitchingParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Delay-line reconstruction `u(x, t) = U(t + x − D)`.
    Exact,
    #[default]
    #[serde(alias = "lax_friedrichs", alias = "lf")]
    LaxFriedrichs,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(Backend::Exact),
            "laxfriedrichs" | "lax_friedrichs" | "lf" => Ok(Backend::LaxFriedrichs),
            other => Err(Error::Scenario(format!("unknown backend '{other}'"))),
        }
    }
}

/// What drives the boundary input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    /// The switched law with the zoom schedule.
    Switched,
    /// The quantized predictor law at a constant `μ`, active from `t = 0`.
    FixedMu(f64),
    /// `U ≡ 0`.
    OpenLoop,
}

/// Everything a run needs, already validated.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub plant: PlantModel,
    pub gains: ControllerGains,
    pub quant: QuantizerSpec,
    pub consts: DesignConstants,
    pub switching: SwitchingParams,
    pub grid: SimGrid,
    pub x0: Vec<f64>,
    pub u0: ActuatorState,
    pub backend: Backend,
    pub norm: NormKind,
    /// Keep `u(·, t)` in every sample.
    pub store_profiles: bool,
    /// Stop once the composite norm exceeds this multiple of its initial value.
    pub stop_factor: f64,
}

pub const DEFAULT_STOP_FACTOR: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
    pub u_sup: f64,
    pub control: f64,
    pub mu: f64,
    pub phase: Phase,
    /// `|X| + ‖u‖∞`.
    pub norm: f64,
    /// `μ M M̄`.
    pub envelope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub dt: f64,
    pub dx: f64,
    pub norm: NormKind,
    pub mode: Mode,
    pub controller: Controller,
    pub t0: Option<f64>,
    /// Set when the state overflowed or passed the stop factor.
    pub stopped_early: bool,
}

impl Trajectory {
    pub fn initial_norm(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.norm)
    }

    pub fn final_norm(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.norm)
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.norm).collect()
    }

    pub fn max_norm(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| {
            if s.norm.is_nan() {
                f64::INFINITY
            } else {
                m.max(s.norm)
            }
        })
    }

    /// Every second sample, for stability checks under subsampling.
    pub fn subsample(&self, every: usize) -> Trajectory {
        let mut t = self.clone();
        t.samples = self.samples.iter().step_by(every.max(1)).cloned().collect();
        t.dt *= every.max(1) as f64;
        t
    }
}

fn composite(x: &[f64], u: &[f64], norm: NormKind) -> (f64, f64) {
    let sup = vec_norm(u, NormKind::Inf);
    (vec_norm(x, norm) + sup, sup)
}

pub fn run_closed_loop(cfg: &SimConfig) -> Result<Trajectory> {
    run(cfg, Controller::Switched)
}

pub fn run_nominal_fixed_mu(cfg: &SimConfig, mu_fixed: f64) -> Result<Trajectory> {
    run(cfg, Controller::FixedMu(mu_fixed))
}

pub fn run_open_loop(cfg: &SimConfig) -> Result<Trajectory> {
    run(cfg, Controller::OpenLoop)
}

pub fn run(cfg: &SimConfig, controller: Controller) -> Result<Trajectory> {
    let grid = cfg.grid;
    if cfg.backend == Backend::LaxFriedrichs {
        grid.check_cfl()?;
    }
    let cells = grid.cells(cfg.plant.delay_d)?;
    if cfg.u0.values.len() != cells + 1 || (cfg.u0.grid_dx - grid.dx).abs() > 1e-12 * grid.dx {
        return Err(Error::Grid(format!(
            "initial profile does not match the {}-cell grid",
            cells
        )));
    }
    if cfg.x0.len() != cfg.plant.dim_n() {
        return Err(Error::Dimension(format!(
            "x0 has {} components, plant has {}",
            cfg.x0.len(),
            cfg.plant.dim_n()
        )));
    }
    if let Controller::FixedMu(mu) = controller {
        ZoomState::new(mu)?;
    }
    if controller == Controller::Switched && !(cfg.consts.t_dwell > 0.0 && cfg.consts.omega > 0.0) {
        return Err(Error::Constant(format!(
            "switched law needs T > 0 and Omega > 0 (T = {}, Omega = {})",
            cfg.consts.t_dwell, cfg.consts.omega
        )));
    }
    let predictor = Predictor::new(&cfg.plant, &cfg.gains, grid.dx)?;
    let params = cfg.switching;
    let consts = &cfg.consts;
    let quant = &cfg.quant;
    let steps = grid.steps();

    let mut x = cfg.x0.clone();
    let mut u = cfg.u0.values.clone();
    let mut scratch = vec![0.0; u.len()];
    let mut line = match cfg.backend {
        Backend::Exact => Some(DelayLine::new(&cfg.u0, &grid)?),
        Backend::LaxFriedrichs => None,
    };
    let mut state = SwitchState::initial(&params, consts);
    let mut samples = Vec::with_capacity(steps + 1);
    let mut stopped_early = false;
    let initial = composite(&x, &u, cfg.norm).0;
    let stop_at = cfg.stop_factor * initial.max(f64::MIN_POSITIVE);

    for n in 0..=steps {
        let t = n as f64 * grid.dt;
        let (control, mu, phase) = match controller {
            Controller::Switched => {
                let mu = mu_at(t, &state, &params, consts);
                let event = state.t0.is_none()
                    && match params.mode {
                        Mode::State => {
                            let snap = zoom_quantize_state(&x, &u, ZoomState::new(mu)?, quant);
                            detect_event_state(&snap, mu, quant, consts)
                        }
                        Mode::Input => detect_event_input(&x, &u, mu, quant, consts),
                    };
                state = step_switch(&state, t, event, &params, consts)?;
                let c = control_output(t, &x, &u, &state, params.mode, quant, &predictor)?;
                (c, state.mu, state.phase)
            }
            Controller::FixedMu(mu) => {
                let zoom = ZoomState::new(mu)?;
                let c = match params.mode {
                    Mode::State => {
                        predictor.quantized(&zoom_quantize_state(&x, &u, zoom, quant))?
                    }
                    Mode::Input => crate::quantization::zoom_quantize_input(
                        predictor.nominal(&x, &u)?,
                        zoom,
                        quant,
                    ),
                };
                (c, mu, Phase::Hold)
            }
            Controller::OpenLoop => (0.0, mu_at(t, &state, &params, consts), Phase::ZoomOut),
        };

        let (norm, u_sup) = composite(&x, &u, cfg.norm);
        samples.push(Sample {
            t,
            x: x.clone(),
            u: cfg.store_profiles.then(|| u.clone()),
            u_sup,
            control,
            mu,
            phase,
            norm,
            envelope: mu * quant.range_m * consts.mbar,
        });
        if !norm.is_finite() || norm > stop_at || !control.is_finite() {
            stopped_early = n < steps;
            break;
        }
        if n == steps {
            break;
        }

        let u_left = u[0];
        match line.as_mut() {
            Some(line) => {
                line.push(control);
                line.profile_into(n + 1, &mut u)?;
            }
            None => pde::lax_friedrichs_in_place(&mut u, &mut scratch, control, grid.cfl()),
        }
        x = step_ode(&x, u_left, &cfg.plant, grid.dt);
    }

    Ok(Trajectory {
        samples,
        dt: grid.dt,
        dx: grid.dx,
        norm: cfg.norm,
        mode: params.mode,
        controller,
        t0: if controller == Controller::Switched {
            state.t0
        } else {
            None
        },
        stopped_early,
    })
}
