//! Zoom-out / hold / zoom-in controller for the dynamic quantizer.
//!
//! ```text
//! μ(t) = M̄1 e^{2|A| j τ} μ0     (j−1)τ ≤ t < jτ, until the event at t0
//!      = μ(t0)                   t ∈ (t0, t0 + T]
//!      = Ω^{i−1} μ(t0)           t ∈ (t0 + (i−1)T, t0 + iT], i ≥ 2
//! ```
//!
//! The schedule is the same in both quantization modes; only the event test
//! and the output rule differ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{vec_norm, NormKind};
use crate::predictor::{DesignConstants, Predictor};
use crate::quantization::{
    zoom_quantize_input, zoom_quantize_state, QuantizedSnapshot, QuantizerSpec, ZoomState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `X` and `u` are measured through `q_μ`; the input is exact.
    #[default]
    State,
    /// `X` and `u` are measured exactly; the input goes through `q̄_μ`.
    Input,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    ZoomOut,
    Hold,
    ZoomIn,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::ZoomOut => "zoom_out",
            Phase::Hold => "hold",
            Phase::ZoomIn => "zoom_in",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchingParams {
    pub tau: f64,
    pub mu0: f64,
    pub mode: Mode,
}

impl SwitchingParams {
    pub fn new(tau: f64, mu0: f64, mode: Mode) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Scenario(format!("tau = {tau} must be positive")));
        }
        if !(mu0 > 0.0 && mu0.is_finite()) {
            return Err(Error::Scenario(format!("mu0 = {mu0} must be positive")));
        }
        Ok(Self { tau, mu0, mode })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchState {
    pub phase: Phase,
    pub mu: f64,
    pub t0: Option<f64>,
    /// `μ(t0)`, set together with `t0`.
    pub mu_t0: Option<f64>,
    /// Zoom-in window `i`; 0 before the event, 1 during hold.
    pub window_index: u32,
    pub last_t: Option<f64>,
}

impl SwitchState {
    pub fn initial(params: &SwitchingParams, consts: &DesignConstants) -> Self {
        Self {
            phase: Phase::ZoomOut,
            mu: zoom_out_mu(0.0, params, consts),
            t0: None,
            mu_t0: None,
            window_index: 0,
            last_t: None,
        }
    }

    /// True once the event has fired and `t` lies strictly after it.
    pub fn is_active(&self, t: f64) -> bool {
        matches!(self.t0, Some(t0) if t > t0)
    }
}

/// `M̄1 e^{2|A| j τ} μ0` with `j = ⌊t/τ⌋ + 1`.
pub fn zoom_out_mu(t: f64, params: &SwitchingParams, consts: &DesignConstants) -> f64 {
    let j = (t / params.tau).floor() + 1.0;
    consts.mbar1 * (2.0 * consts.norm_a * j * params.tau).exp() * params.mu0
}

/// Window `i` containing `t ∈ (t0 + (i−1)T, t0 + iT]`; the small slack keeps
/// grid times that land on a window edge in the window they close.
pub fn window_of(t: f64, t0: f64, t_dwell: f64) -> u32 {
    let i = ((t - t0) / t_dwell - 1e-9).ceil();
    i.max(1.0) as u32
}

pub fn mu_at(
    t: f64,
    state: &SwitchState,
    params: &SwitchingParams,
    consts: &DesignConstants,
) -> f64 {
    match (state.t0, state.mu_t0) {
        (Some(t0), Some(mu_t0)) if t > t0 => {
            let i = window_of(t, t0, consts.t_dwell);
            mu_t0 * consts.omega.powi(i as i32 - 1)
        }
        _ => zoom_out_mu(t, params, consts),
    }
}

/// `|q1μ(X)| + ‖q2μ(u)‖∞ ≤ (M M̄ − Δ) μ`. Only quantized data is available here.
pub fn detect_event_state(
    snapshot: &QuantizedSnapshot,
    mu: f64,
    quant: &QuantizerSpec,
    consts: &DesignConstants,
) -> bool {
    snapshot.composite_norm(consts.norm) <= (quant.range_m * consts.mbar - quant.error_delta) * mu
}

/// `|X| + ‖u‖∞ ≤ M M̄ μ / M3` on the exact state.
pub fn detect_event_input(
    x: &[f64],
    u: &[f64],
    mu: f64,
    quant: &QuantizerSpec,
    consts: &DesignConstants,
) -> bool {
    composite(x, u, consts.norm) <= quant.range_m * consts.mbar * mu / consts.m3
}

fn composite(x: &[f64], u: &[f64], norm: NormKind) -> f64 {
    vec_norm(x, norm) + vec_norm(u, NormKind::Inf)
}

/// Zero up to and including `t0`; then `K P_μ(X, u)` on quantized data
/// (state mode) or `q̄_μ(U_nom)` (input mode).
pub fn control_output(
    t: f64,
    x: &[f64],
    u: &[f64],
    state: &SwitchState,
    mode: Mode,
    quant: &QuantizerSpec,
    predictor: &Predictor,
) -> Result<f64> {
    if !state.is_active(t) {
        return Ok(0.0);
    }
    let zoom = ZoomState::new(state.mu)?;
    match mode {
        Mode::State => predictor.quantized(&zoom_quantize_state(x, u, zoom, quant)),
        Mode::Input => Ok(zoom_quantize_input(predictor.nominal(x, u)?, zoom, quant)),
    }
}

/// Advances the state machine to time `t`. `event` is the event test
/// evaluated at `t` with `μ = mu_at(t, state, ..)`; it only matters during
/// zoom-out.
pub fn step_switch(
    state: &SwitchState,
    t: f64,
    event: bool,
    params: &SwitchingParams,
    consts: &DesignConstants,
) -> Result<SwitchState> {
    if let Some(prev) = state.last_t {
        if t < prev {
            return Err(Error::TimeRegression { from: prev, to: t });
        }
    }
    let mut next = *state;
    next.last_t = Some(t);
    match state.t0 {
        None => {
            next.mu = zoom_out_mu(t, params, consts);
            if event {
                next.t0 = Some(t);
                next.mu_t0 = Some(next.mu);
                next.phase = Phase::Hold;
                next.window_index = 1;
            }
        }
        Some(t0) if t > t0 => {
            let i = window_of(t, t0, consts.t_dwell);
            next.window_index = i;
            next.phase = if i <= 1 { Phase::Hold } else { Phase::ZoomIn };
            next.mu = mu_at(t, state, params, consts);
        }
        Some(_) => {}
    }
    Ok(next)
}

/// Geometric ladder used by [`default_tau`]; the chosen `τ` overshoots the
/// smallest admissible one by less than this factor.
pub const TAU_LADDER: f64 = 1.02;
const TAU_RUNGS: usize = 2000;

fn event_at_zero(
    x0: &[f64],
    u0: &[f64],
    mu: f64,
    mode: Mode,
    consts: &DesignConstants,
    quant: &QuantizerSpec,
) -> bool {
    match mode {
        Mode::State => match ZoomState::new(mu) {
            Ok(z) => detect_event_state(&zoom_quantize_state(x0, u0, z, quant), mu, quant, consts),
            Err(_) => false,
        },
        Mode::Input => detect_event_input(x0, u0, mu, quant, consts),
    }
}

/// Smallest `τ` (to within [`TAU_LADDER`]) for which the event already holds
/// on the first zoom-out stage, so `t0 = 0`. Falls back to `τ = 1` when the
/// initial data is zero or no rung works.
pub fn default_tau(
    x0: &[f64],
    u0: &[f64],
    mu0: f64,
    mode: Mode,
    consts: &DesignConstants,
    quant: &QuantizerSpec,
) -> f64 {
    let n0 = composite(x0, u0, consts.norm);
    let scale = match mode {
        Mode::State => quant.range_m * consts.mbar,
        Mode::Input => quant.range_m * consts.mbar / consts.m3,
    };
    if n0 == 0.0 || !(scale > 0.0) || !(consts.norm_a > 0.0) || !(mu0 * consts.mbar1 > 0.0) {
        return 1.0;
    }
    let mu_of = |tau: f64| consts.mbar1 * (2.0 * consts.norm_a * tau).exp() * mu0;
    // the true state needs at least N0 / scale; quantization only adds to it
    let ratio = n0 / (scale * consts.mbar1 * mu0);
    let mut tau = if ratio > 1.0 {
        ratio.ln() / (2.0 * consts.norm_a)
    } else {
        1e-3
    };
    for _ in 0..TAU_RUNGS {
        if event_at_zero(x0, u0, mu_of(tau), mode, consts, quant) {
            return tau;
        }
        tau *= TAU_LADDER;
    }
    1.0
}
