//! Uniform quantizer, its zoomed form `q_mu(v) = mu q(v / mu)`, and
//! property checks for range (P1), saturation (P2) and deadzone (P3).

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{vec_norm, NormKind};

/// Range `M`, error bound `Δ`, deadzone `M̂` and the lattice step actually
/// used by the per-component rounding.
///
/// `error_delta` is the composite bound the theorems talk about; `step` is the
/// spacing of the output lattice. For a scalar channel they coincide; for a
/// state channel the step is shrunk so the componentwise errors sum to at
/// most `Δ` (see [`QuantizerSpec::state_channel`]). `error_delta = 0` is the
/// unquantized limit: values pass through and only saturation remains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerSpec {
    pub range_m: f64,
    pub error_delta: f64,
    pub deadzone_mhat: f64,
    pub step: f64,
}

impl QuantizerSpec {
    /// Scalar uniform quantizer with step `Δ` and deadzone `Δ/2`.
    pub fn uniform(range_m: f64, error_delta: f64) -> Result<Self> {
        Self::new(range_m, error_delta, error_delta / 2.0, error_delta)
    }

    /// Shared spec for an `n`-dimensional plant state plus the actuator grid.
    /// The lattice step is `Δ/(1+√n)`, so `|q1(X)-X|₂ + ‖q2(u)-u‖∞ ≤ Δ/2`.
    pub fn state_channel(range_m: f64, error_delta: f64, n: usize) -> Result<Self> {
        let step = error_delta / (1.0 + (n as f64).sqrt());
        Self::new(range_m, error_delta, step / 2.0, step)
    }

    pub fn new(range_m: f64, error_delta: f64, deadzone_mhat: f64, step: f64) -> Result<Self> {
        let spec = Self {
            range_m,
            error_delta,
            deadzone_mhat,
            step,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            range_m,
            error_delta,
            deadzone_mhat,
            step,
        } = *self;
        if ![range_m, error_delta, deadzone_mhat, step]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("quantizer spec"));
        }
        if range_m <= 0.0 {
            return Err(Error::Quantizer(format!(
                "range M = {range_m} must be positive"
            )));
        }
        if error_delta < 0.0 || error_delta >= range_m {
            return Err(Error::Quantizer(format!(
                "error Δ = {error_delta} must lie in [0, M)"
            )));
        }
        if deadzone_mhat < 0.0 || deadzone_mhat >= range_m {
            return Err(Error::Quantizer(format!(
                "deadzone M̂ = {deadzone_mhat} must lie in [0, M)"
            )));
        }
        if step < 0.0 || step >= range_m {
            return Err(Error::Quantizer(format!("step {step} must lie in [0, M)")));
        }
        if step > 0.0 && error_delta == 0.0 {
            return Err(Error::Quantizer("nonzero step with Δ = 0".into()));
        }
        Ok(())
    }

    pub fn with_step(mut self, step: f64) -> Result<Self> {
        self.step = step;
        self.validate()?;
        Ok(self)
    }

    pub fn with_error(mut self, error_delta: f64) -> Result<Self> {
        let ratio = if self.error_delta > 0.0 {
            error_delta / self.error_delta
        } else {
            0.0
        };
        self.error_delta = error_delta;
        self.step *= ratio;
        self.deadzone_mhat *= ratio;
        self.validate()?;
        Ok(self)
    }

    pub fn is_exact(&self) -> bool {
        self.step == 0.0
    }
}

/// Integer part with the strict convention `⌊h⌋ = max{k ∈ ℤ : k < h}`:
/// integers round down by one, making the quantizer left-continuous.
pub fn strict_floor(h: f64) -> f64 {
    h.ceil() - 1.0
}

/// Static quantizer: saturates at `±M`, otherwise `step·⌊v/step + 1/2⌋`.
/// With `Δ = 0` and no lattice the channel is ideal and does not saturate
/// either, which is the only way `|v| > M ⇒ |q(v)| > M − Δ` can hold.
pub fn uniform_quantize(v: f64, spec: &QuantizerSpec) -> f64 {
    if spec.step == 0.0 && spec.error_delta == 0.0 {
        v
    } else if v > spec.range_m {
        spec.range_m
    } else if v < -spec.range_m {
        -spec.range_m
    } else if spec.step == 0.0 {
        v
    } else {
        spec.step * strict_floor(v / spec.step + 0.5)
    }
}

/// Locally Lipschitz approximation of [`uniform_quantize`]: across each
/// lattice jump the output ramps linearly over a layer of width `eps`
/// placed just after the jump point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothedQuantizer {
    pub spec: QuantizerSpec,
    pub eps: f64,
}

impl SmoothedQuantizer {
    pub fn new(spec: QuantizerSpec, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < spec.step) {
            return Err(Error::Quantizer(format!(
                "layer width {eps} must lie in (0, step)"
            )));
        }
        Ok(Self { spec, eps })
    }

    pub fn quantize(&self, v: f64) -> f64 {
        let s = self.spec.step;
        let exact = uniform_quantize(v, &self.spec);
        if v.abs() >= self.spec.range_m {
            return exact;
        }
        // jumps sit at (k - 1/2) s; the exact value is left-continuous there
        let k = (v / s + 0.5).ceil();
        let jump = (k - 1.0 - 0.5) * s;
        let d = v - jump;
        if d > 0.0 && d < self.eps {
            (k - 2.0) * s + s * d / self.eps
        } else {
            exact
        }
    }
}

/// Zoom variable `μ > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoomState {
    mu: f64,
}

impl ZoomState {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::Quantizer(format!(
                "zoom μ = {mu} must be positive and finite"
            )));
        }
        Ok(Self { mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

/// `μ q(v/μ)` for one component.
pub fn zoom_quantize(v: f64, zoom: ZoomState, spec: &QuantizerSpec) -> f64 {
    zoom.mu * uniform_quantize(v / zoom.mu, spec)
}

/// Quantized plant and actuator measurements at a common zoom.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedSnapshot {
    pub qx: Vec<f64>,
    pub qu: Vec<f64>,
    pub mu: f64,
}

impl QuantizedSnapshot {
    /// Unquantized pass-through, used where exact measurements are fed to
    /// code that expects a snapshot.
    pub fn exact(x: &[f64], u: &[f64], mu: f64) -> Self {
        Self {
            qx: x.to_vec(),
            qu: u.to_vec(),
            mu,
        }
    }

    pub fn composite_norm(&self, norm: NormKind) -> f64 {
        vec_norm(&self.qx, norm) + vec_norm(&self.qu, NormKind::Inf)
    }
}

pub fn zoom_quantize_state(
    x: &[f64],
    u: &[f64],
    zoom: ZoomState,
    spec: &QuantizerSpec,
) -> QuantizedSnapshot {
    QuantizedSnapshot {
        qx: x.iter().map(|v| zoom_quantize(*v, zoom, spec)).collect(),
        qu: u.iter().map(|v| zoom_quantize(*v, zoom, spec)).collect(),
        mu: zoom.mu,
    }
}

pub fn zoom_quantize_input(u_cmd: f64, zoom: ZoomState, spec: &QuantizerSpec) -> f64 {
    zoom_quantize(u_cmd, zoom, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Property {
    P1,
    P2,
    P3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub property: Property,
    /// Scalar input, or the composite norm of the sampled state.
    pub input_norm: f64,
    /// `|q(v) - v|` for P1, `|q(v)|` for P2 and P3.
    pub observed: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub samples: usize,
    pub violations: Vec<Counterexample>,
}

impl PropertyReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, p: Property) -> usize {
        self.violations.iter().filter(|c| c.property == p).count()
    }

    fn merge(&mut self, other: PropertyReport) {
        self.samples += other.samples;
        self.violations.extend(other.violations);
    }
}

// floating-point slack on P1 comparisons, relative to the range
const P1_SLACK: f64 = 1e-12;

fn record(report: &mut PropertyReport, property: Property, input_norm: f64, observed: f64) {
    // keep the report bounded on badly broken specs
    if report.violations.len() < 1000 {
        report.violations.push(Counterexample {
            property,
            input_norm,
            observed,
        });
    }
}

/// Scalar P1–P3 on explicit sample points.
pub fn validate_properties_on(
    spec: &QuantizerSpec,
    values: impl IntoIterator<Item = f64>,
) -> PropertyReport {
    let mut report = PropertyReport::default();
    let slack = P1_SLACK * spec.range_m;
    for v in values {
        report.samples += 1;
        let q = uniform_quantize(v, spec);
        let a = v.abs();
        if a <= spec.range_m && (q - v).abs() > spec.error_delta + slack {
            record(&mut report, Property::P1, a, (q - v).abs());
        }
        if a > spec.range_m && q.abs() <= spec.range_m - spec.error_delta {
            record(&mut report, Property::P2, a, q.abs());
        }
        if a <= spec.deadzone_mhat && q != 0.0 {
            record(&mut report, Property::P3, a, q.abs());
        }
    }
    report
}

/// Randomized scalar check; samples concentrate near the deadzone, the range
/// boundary and across the interior.
pub fn validate_properties(
    spec: &QuantizerSpec,
    sample_count: usize,
    rng_seed: u64,
) -> PropertyReport {
    let mut rng = StdRng::seed_from_u64(rng_seed);
    let m = spec.range_m;
    let mhat = spec.deadzone_mhat.max(spec.step);
    let values: Vec<f64> = (0..sample_count)
        .map(|i| match i % 4 {
            0 => rng.random_range(-1.5 * m..=1.5 * m),
            1 => rng.random_range(-2.0 * mhat..=2.0 * mhat),
            2 => m * rng.random_range(0.95..1.05) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            _ => rng.random_range(-m..=m),
        })
        .collect();
    validate_properties_on(spec, values)
}

/// Scalar check on `points` evenly spaced values covering `[-1.5M, 1.5M]`.
pub fn validate_properties_grid(spec: &QuantizerSpec, points: usize) -> PropertyReport {
    let lo = -1.5 * spec.range_m;
    let span = 3.0 * spec.range_m;
    let n = points.max(2);
    validate_properties_on(spec, (0..n).map(|k| lo + span * k as f64 / (n - 1) as f64))
}

/// Composite P1–P3 for the pair `(X, u)` with `X ∈ ℝⁿ` and `u` sampled on
/// `grid_len` nodes, under `|X| + ‖u‖∞`.
pub fn validate_state_channel(
    spec: &QuantizerSpec,
    n: usize,
    grid_len: usize,
    sample_count: usize,
    rng_seed: u64,
    norm: NormKind,
) -> PropertyReport {
    let mut rng = StdRng::seed_from_u64(rng_seed);
    let mut report = PropertyReport::default();
    let m = spec.range_m;
    let slack = P1_SLACK * m;
    let unit = ZoomState { mu: 1.0 };
    for i in 0..sample_count {
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let mut u: Vec<f64> = (0..grid_len)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let raw = vec_norm(&x, norm) + vec_norm(&u, NormKind::Inf);
        if raw == 0.0 {
            continue;
        }
        let target = match i % 4 {
            0 => rng.random_range(0.0..=1.5 * m),
            1 => rng.random_range(0.0..=spec.deadzone_mhat.max(spec.step) * 2.0),
            2 => m * rng.random_range(0.97..1.03),
            _ => rng.random_range(0.0..=m),
        };
        let s = target / raw;
        x.iter_mut().for_each(|v| *v *= s);
        u.iter_mut().for_each(|v| *v *= s);
        let size = vec_norm(&x, norm) + vec_norm(&u, NormKind::Inf);
        let snap = zoom_quantize_state(&x, &u, unit, spec);
        let ex: Vec<f64> = snap.qx.iter().zip(&x).map(|(q, v)| q - v).collect();
        let eu: Vec<f64> = snap.qu.iter().zip(&u).map(|(q, v)| q - v).collect();
        let err = vec_norm(&ex, norm) + vec_norm(&eu, NormKind::Inf);
        let qsize = snap.composite_norm(norm);
        let mut sub = PropertyReport {
            samples: 1,
            violations: Vec::new(),
        };
        if size <= m && err > spec.error_delta + slack {
            record(&mut sub, Property::P1, size, err);
        }
        if size > m && qsize <= m - spec.error_delta {
            record(&mut sub, Property::P2, size, qsize);
        }
        if size <= spec.deadzone_mhat && qsize != 0.0 {
            record(&mut sub, Property::P3, size, qsize);
        }
        report.merge(sub);
    }
    report
}
