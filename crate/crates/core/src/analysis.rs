//! Post-hoc checks on trajectories. Everything here is a pure function of a
//! trajectory and the constants that produced it.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{vec_norm, NormKind};
use crate::predictor::{theoretical_rate, DesignConstants, Predictor};
use crate::quantization::{zoom_quantize_input, zoom_quantize_state, QuantizerSpec, ZoomState};
use crate::sim::{Controller, Trajectory};
use crate::switching::{window_of, Mode, SwitchingParams};

/// Added before taking logs; trajectories can reach numerical zero.
pub const LOG_FLOOR: f64 = 1e-300;

/// Multiples of the initial norm used by [`classify_baseline`].
pub const DIVERGENCE_FACTOR: f64 = 10.0;
pub const CONVERGENCE_FACTOR: f64 = 1e-3;
/// The tail maximum must stay inside this band for an oscillation to count.
pub const CYCLE_BAND: (f64, f64) = (1e-2, 1e3);
/// Smallest tail max/min ratio that counts as oscillating rather than flat.
pub const CYCLE_MIN_SWING: f64 = 1.05;
/// The late half of the tail must reach this fraction of the early half's
/// peak, which rules out slow decays.
pub const CYCLE_PERSISTENCE: f64 = 0.9;
pub const TAIL_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: f64,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub gamma: f64,
    pub rate: f64,
    pub exponent: f64,
    pub violations: Vec<Violation>,
    pub max_ratio: f64,
    pub skipped: bool,
    pub warnings: Vec<String>,
}

impl EnvelopeReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `γ` (state mode) or `γ̄` (input mode) of the convergence estimate.
pub fn theorem_gamma(
    mode: Mode,
    consts: &DesignConstants,
    quant: &QuantizerSpec,
    params: &SwitchingParams,
) -> f64 {
    let c = consts;
    let m = quant.range_m;
    let rate = theoretical_rate(c);
    let power = 1.0 - rate / c.norm_a;
    let growth = (2.0 * c.norm_a * params.tau).exp() * params.mu0;
    match mode {
        Mode::State => {
            let m3bar = 1.0 / (params.mu0 * (m * c.mbar - 2.0 * quant.error_delta));
            c.mbar1 / c.m2
                * (c.m2 * m / c.omega * growth).max(c.m1)
                * m3bar.max(1.0)
                * m3bar.powf(power)
        }
        Mode::Input => {
            let r = c.m3 / (params.mu0 * m * c.mbar);
            c.mbar1 / c.m2
                * (c.m2 * m / (c.omega * c.m3) * growth).max(c.m1)
                * r.max(1.0)
                * r.powf(power)
        }
    }
}

/// `|X(t)| + ‖u(t)‖∞ ≤ γ N0^{2 − (lnΩ/T)/|A|} e^{(lnΩ/T) t}` at every sample.
pub fn check_theorem1_envelope(
    traj: &Trajectory,
    consts: &DesignConstants,
    quant: &QuantizerSpec,
    params: &SwitchingParams,
) -> EnvelopeReport {
    let rate = theoretical_rate(consts);
    let exponent = 2.0 - rate / consts.norm_a;
    let gamma = theorem_gamma(traj.mode, consts, quant, params);
    let mut report = EnvelopeReport {
        gamma,
        rate,
        exponent,
        violations: vec![],
        max_ratio: 0.0,
        skipped: false,
        warnings: vec![],
    };
    if !(consts.omega < 1.0) {
        report.skipped = true;
        report.warnings.push(format!(
            "Omega = {} >= 1: no decaying envelope to check",
            consts.omega
        ));
        return report;
    }
    if traj.mode == Mode::State && !(quant.range_m * consts.mbar > 2.0 * quant.error_delta) {
        report.skipped = true;
        report
            .warnings
            .push("M Mbar <= 2 Delta: the envelope prefactor is undefined".into());
        return report;
    }
    if !gamma.is_finite() {
        report.skipped = true;
        report
            .warnings
            .push(format!("gamma = {gamma} is not finite"));
        return report;
    }
    let n0 = traj.initial_norm();
    let scale = gamma * n0.powf(exponent);
    for s in &traj.samples {
        let bound = scale * (rate * s.t).exp();
        let ratio = if bound > 0.0 {
            s.norm / bound
        } else if s.norm == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        report.max_ratio = report.max_ratio.max(ratio);
        if !(s.norm <= bound) {
            report.violations.push(Violation {
                t: s.t,
                observed: s.norm,
                bound,
            });
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowCheck {
    pub index: u32,
    pub samples: usize,
    /// Largest `|X| + ‖w‖∞` seen in the window.
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub t0: f64,
    pub windows: Vec<WindowCheck>,
    pub violations: Vec<Violation>,
}

impl WindowReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    /// Smallest `1 − observed/bound` over all windows.
    pub fn min_margin(&self) -> f64 {
        self.windows
            .iter()
            .map(|w| 1.0 - w.observed / w.bound)
            .fold(f64::INFINITY, f64::min)
    }
}

/// `|X| + ‖w‖∞ ≤ Ω^{i−1} M2 M μ(t0)` on each window `(t0+(i−1)T, t0+iT]`
/// (`M2 M μ(t0)/M3` in input mode). Needs stored profiles.
pub fn check_window_decay(
    traj: &Trajectory,
    consts: &DesignConstants,
    quant: &QuantizerSpec,
    predictor: &Predictor,
) -> Result<WindowReport> {
    let t0 = traj
        .t0
        .ok_or_else(|| Error::Scenario("trajectory has no event time".into()))?;
    let mu_t0 = traj
        .samples
        .iter()
        .find(|s| s.t >= t0)
        .map(|s| s.mu)
        .ok_or_else(|| Error::Scenario("no sample at the event time".into()))?;
    let base = match traj.mode {
        Mode::State => consts.m2 * quant.range_m * mu_t0,
        Mode::Input => consts.m2 * quant.range_m * mu_t0 / consts.m3,
    };
    let mut windows: Vec<WindowCheck> = Vec::new();
    let mut violations = Vec::new();
    for s in traj.samples.iter().filter(|s| s.t > t0) {
        let u =
            s.u.as_ref()
                .ok_or_else(|| Error::Scenario("window check needs stored profiles".into()))?;
        let w = predictor.forward(&s.x, u)?;
        let observed = vec_norm(&s.x, traj.norm) + vec_norm(&w, NormKind::Inf);
        let i = window_of(s.t, t0, consts.t_dwell);
        let bound = consts.omega.powi(i as i32 - 1) * base;
        match windows.last_mut() {
            Some(last) if last.index == i => {
                last.samples += 1;
                last.observed = last.observed.max(observed);
            }
            _ => windows.push(WindowCheck {
                index: i,
                samples: 1,
                observed,
                bound,
            }),
        }
        if !(observed <= bound) {
            violations.push(Violation {
                t: s.t,
                observed,
                bound,
            });
        }
    }
    Ok(WindowReport {
        t0,
        windows,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T0Check {
    pub t0: Option<f64>,
    pub bound: Option<f64>,
    pub holds: bool,
    pub note: Option<String>,
}

/// Event-time bound `t0 ≤ (1/|A|) ln[N0 / (μ0 (M M̄ − 2Δ))]`, or
/// `(1/|A|) ln[M3 N0 / (μ0 M M̄)]` in input mode.
///
/// The event is only tested on the time grid, so one step of slack is
/// allowed. When the logarithm is negative the bound is vacuous and the
/// check is skipped.
pub fn check_t0_bound(
    traj: &Trajectory,
    consts: &DesignConstants,
    quant: &QuantizerSpec,
    params: &SwitchingParams,
) -> T0Check {
    let n0 = traj.initial_norm();
    let m = quant.range_m;
    let arg = match traj.mode {
        Mode::State => n0 / (params.mu0 * (m * consts.mbar - 2.0 * quant.error_delta)),
        Mode::Input => consts.m3 * n0 / (params.mu0 * m * consts.mbar),
    };
    if !(arg >= 1.0) || !arg.is_finite() {
        return T0Check {
            t0: traj.t0,
            bound: None,
            holds: true,
            note: Some(format!("bound argument {arg:.4e} < 1: check skipped")),
        };
    }
    let bound = arg.ln() / consts.norm_a;
    match traj.t0 {
        Some(t0) => T0Check {
            t0: Some(t0),
            bound: Some(bound),
            holds: t0 <= bound + traj.dt,
            note: None,
        },
        None => T0Check {
            t0: None,
            bound: Some(bound),
            holds: false,
            note: Some("event never fired".into()),
        },
    }
}

/// Least-squares slope of `ln(norm + floor)` against `t` for `t ≥ from_t`.
pub fn fit_decay_rate(traj: &Trajectory, from_t: f64) -> f64 {
    let pts: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .filter(|s| s.t >= from_t)
        .map(|s| (s.t, (s.norm + LOG_FLOOR).ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Diverged,
    LimitCycleLike,
    Converged,
    /// Bounded but matches neither pattern (e.g. a slow monotone decay).
    Indeterminate,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::Diverged => "diverged",
            Classification::LimitCycleLike => "limit-cycle-like",
            Classification::Converged => "converged",
            Classification::Indeterminate => "indeterminate",
        }
    }
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn classify_baseline(traj: &Trajectory) -> Classification {
    let n0 = traj.initial_norm();
    if traj
        .samples
        .iter()
        .any(|s| !s.norm.is_finite() || s.norm > DIVERGENCE_FACTOR * n0)
    {
        return Classification::Diverged;
    }
    let last = traj.final_norm();
    if last < CONVERGENCE_FACTOR * n0 {
        return Classification::Converged;
    }
    let horizon = traj.samples.last().map_or(0.0, |s| s.t);
    let tail_from = horizon * (1.0 - TAIL_FRACTION);
    let mid = horizon * (1.0 - TAIL_FRACTION / 2.0);
    let (mut lo, mut hi, mut early, mut late) = (f64::INFINITY, 0.0_f64, 0.0_f64, 0.0_f64);
    for s in traj.samples.iter().filter(|s| s.t >= tail_from) {
        lo = lo.min(s.norm);
        hi = hi.max(s.norm);
        if s.t < mid {
            early = early.max(s.norm);
        } else {
            late = late.max(s.norm);
        }
    }
    let bounded =
        traj.samples.iter().all(|s| s.norm <= CYCLE_BAND.1 * n0) && hi >= CYCLE_BAND.0 * n0;
    let swing = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if bounded && swing >= CYCLE_MIN_SWING && late >= CYCLE_PERSISTENCE * early {
        Classification::LimitCycleLike
    } else {
        Classification::Indeterminate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbancePoint {
    pub t: f64,
    pub d: f64,
    pub bound: f64,
    /// Some measurement left the quantizer range, so the bound does not apply.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceReport {
    pub points: Vec<DisturbancePoint>,
    pub violations: Vec<Violation>,
}

impl DisturbanceReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Quantization disturbance along the trajectory while the control is
/// active: `d = K P_μ − U_nom` with `|d| ≤ M3 Δ μ` (state mode), or
/// `d̄ = q̄_μ(U_nom) − U_nom` with `|d̄| ≤ Δ μ` (input mode). The bound is
/// only asserted at unsaturated samples.
pub fn reconstruct_disturbance(
    traj: &Trajectory,
    consts: &DesignConstants,
    quant: &QuantizerSpec,
    predictor: &Predictor,
) -> Result<DisturbanceReport> {
    let active_from = match traj.controller {
        Controller::Switched => traj.t0.unwrap_or(f64::INFINITY),
        Controller::FixedMu(_) => f64::NEG_INFINITY,
        Controller::OpenLoop => f64::INFINITY,
    };
    let mut points = Vec::new();
    let mut violations = Vec::new();
    for s in traj.samples.iter().filter(|s| s.t > active_from) {
        let u =
            s.u.as_ref()
                .ok_or_else(|| Error::Scenario("disturbance needs stored profiles".into()))?;
        let zoom = ZoomState::new(s.mu)?;
        let nominal = predictor.nominal(&s.x, u)?;
        let limit = quant.range_m * s.mu;
        let (d, bound, saturated) = match traj.mode {
            Mode::State => {
                let snap = zoom_quantize_state(&s.x, u, zoom, quant);
                let sat = s.x.iter().chain(u).any(|v| v.abs() > limit);
                (
                    predictor.quantized(&snap)? - nominal,
                    consts.m3 * quant.error_delta * s.mu,
                    sat,
                )
            }
            Mode::Input => {
                let q = zoom_quantize_input(nominal, zoom, quant);
                (q - nominal, quant.error_delta * s.mu, nominal.abs() > limit)
            }
        };
        // quadrature roundoff when Δ = 0
        let slack = 1e-12 * nominal.abs().max(1.0);
        if !saturated && d.abs() > bound + slack {
            violations.push(Violation {
                t: s.t,
                observed: d.abs(),
                bound,
            });
        }
        points.push(DisturbancePoint {
            t: s.t,
            d,
            bound,
            saturated,
        });
    }
    Ok(DisturbanceReport { points, violations })
}

/// Plot columns `t, norm, mu_envelope, theorem_bound`.
pub fn write_plot_data(
    traj: &Trajectory,
    envelope: &EnvelopeReport,
    mut out: impl Write,
) -> Result<()> {
    writeln!(out, "t,norm,mu_envelope,theorem_bound")?;
    let scale = envelope.gamma * traj.initial_norm().powf(envelope.exponent);
    for s in &traj.samples {
        let bound = if envelope.skipped {
            f64::NAN
        } else {
            scale * (envelope.rate * s.t).exp()
        };
        writeln!(out, "{},{:e},{:e},{:e}", s.t, s.norm, s.envelope, bound)?;
    }
    Ok(())
}

/// Fraction of samples after `t0` with the norm at or below `μ M M̄`.
pub fn envelope_respect_fraction(traj: &Trajectory) -> f64 {
    let t0 = traj.t0.unwrap_or(0.0);
    let after: Vec<_> = traj.samples.iter().filter(|s| s.t > t0).collect();
    if after.is_empty() {
        return 1.0;
    }
    after.iter().filter(|s| s.norm <= s.envelope).count() as f64 / after.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Sample;
    use crate::switching::Phase;
    use approx::assert_relative_eq;

    fn synthetic(f: impl Fn(f64) -> f64, horizon: f64, dt: f64) -> Trajectory {
        let steps = (horizon / dt).round() as usize;
        Trajectory {
            samples: (0..=steps)
                .map(|n| {
                    let t = n as f64 * dt;
                    Sample {
                        t,
                        x: vec![f(t)],
                        u: None,
                        u_sup: 0.0,
                        control: 0.0,
                        mu: 1.0,
                        phase: Phase::Hold,
                        norm: f(t),
                        envelope: 1.0,
                    }
                })
                .collect(),
            dt,
            dx: 0.02,
            norm: NormKind::Two,
            mode: Mode::State,
            controller: Controller::FixedMu(1.0),
            t0: None,
            stopped_early: false,
        }
    }

    #[test]
    fn rate_fit_on_exponential_and_constant() {
        let t = synthetic(|t| (-0.5 * t).exp(), 10.0, 0.01);
        assert!((fit_decay_rate(&t, 0.0) + 0.5).abs() < 1e-6);
        let t = synthetic(|_| 3.0, 10.0, 0.01);
        assert!(fit_decay_rate(&t, 2.0).abs() < 1e-12);
    }

    #[test]
    fn classification_patterns() {
        assert_eq!(
            classify_baseline(&synthetic(|t| t.exp(), 10.0, 0.01)),
            Classification::Diverged
        );
        assert_eq!(
            classify_baseline(&synthetic(|t| (-t).exp(), 10.0, 0.01)),
            Classification::Converged
        );
        let osc = synthetic(|t| 1.0 + 0.5 * (3.0 * t).sin(), 20.0, 0.01);
        assert_eq!(classify_baseline(&osc), Classification::LimitCycleLike);
        assert_eq!(
            classify_baseline(&osc.subsample(2)),
            Classification::LimitCycleLike
        );
        let dipping = synthetic(|t| 1.01 + (2.0 * t).sin(), 20.0, 0.01);
        assert_eq!(classify_baseline(&dipping), Classification::LimitCycleLike);
        let slow = synthetic(|t| (-0.1 * t).exp() * (1.5 + t.sin()), 20.0, 0.01);
        assert_eq!(classify_baseline(&slow), Classification::Indeterminate);
        let flat = synthetic(|_| 1.0, 20.0, 0.01);
        assert_eq!(classify_baseline(&flat), Classification::Indeterminate);
        let nan = synthetic(|t| if t > 5.0 { f64::NAN } else { 1.0 }, 10.0, 0.01);
        assert_eq!(classify_baseline(&nan), Classification::Diverged);
    }

    #[test]
    fn classification_survives_subsampling() {
        for f in [
            |t: f64| (0.3 * t).exp(),
            |t: f64| (-0.9 * t).exp(),
            |t: f64| 2.0 + (t * 1.7).cos(),
        ] {
            let tr = synthetic(f, 30.0, 0.01);
            assert_eq!(classify_baseline(&tr), classify_baseline(&tr.subsample(2)));
        }
    }

    #[test]
    fn zero_trajectory_satisfies_envelope() {
        use crate::linalg::{DecayEnvelope, Matrix};
        use crate::predictor::{compute_constants, ConstantOverrides, ControllerGains, PlantModel};
        let a = Matrix::from_rows(&[vec![-1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let plant = PlantModel::new(a, Matrix::column(&[0.0, 1.0]), 1.0).unwrap();
        let gains = ControllerGains::new(
            &plant,
            Matrix::row(&[0.0, -3.0]),
            DecayEnvelope::pinned(0.5, 1.0).unwrap(),
        )
        .unwrap();
        let q = QuantizerSpec::uniform(2.0, 0.02).unwrap();
        let o = ConstantOverrides {
            mbar: Some(0.6),
            omega: Some(0.63),
            t_dwell: Some(2.0),
            ..Default::default()
        };
        let c = compute_constants(&plant, &gains, &q, Some(12.0), &o, NormKind::Two).unwrap();
        let p = SwitchingParams::new(1.0, 1.0, Mode::State).unwrap();
        let zero = synthetic(|_| 0.0, 5.0, 0.01);
        let r = check_theorem1_envelope(&zero, &c, &q, &p);
        assert!(r.holds() && r.max_ratio == 0.0);

        let mut big = c.clone();
        big.omega = 1.5;
        let r = check_theorem1_envelope(&zero, &big, &q, &p);
        assert!(r.skipped && !r.warnings.is_empty());

        let g = theorem_gamma(Mode::State, &c, &q, &p);
        let m3bar: f64 = 1.0 / (1.2 - 0.04);
        let rate = 0.63f64.ln() / 2.0;
        let expected = 2.0 / c.m2
            * (c.m2 * 2.0 / 0.63 * (2.0 * c.norm_a).exp()).max(c.m1)
            * m3bar.max(1.0)
            * m3bar.powf(1.0 - rate / c.norm_a);
        assert_relative_eq!(g, expected, max_relative = 1e-14);
    }
}
