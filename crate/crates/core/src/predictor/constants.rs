use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ControllerGains, PlantModel};
use crate::error::{Error, Result};
use crate::linalg::{induced_norm, NormKind};
use crate::quantization::QuantizerSpec;

/// `δ = DELTA_FRACTION · min(σ, ν)`.
pub const DELTA_FRACTION: f64 = 0.9;

/// Cap on the `(ε, ν)` halving search.
pub const MAX_HALVINGS: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Computed,
    Pinned,
}

/// Values to pin instead of computing. Anything left `None` is derived.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantOverrides {
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub m3: Option<f64>,
    pub mbar: Option<f64>,
    pub mbar1: Option<f64>,
    pub omega: Option<f64>,
    pub t_dwell: Option<f64>,
    pub lambda: Option<f64>,
    pub eps: Option<f64>,
    pub nu: Option<f64>,
    pub phi: Option<f64>,
    pub phi1: Option<f64>,
    pub m0: Option<f64>,
    pub delta_rate: Option<f64>,
}

impl ConstantOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConstants {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub mbar: f64,
    pub mbar1: f64,
    pub omega: f64,
    pub t_dwell: f64,
    pub lambda: f64,
    pub eps: f64,
    pub nu: f64,
    pub phi: f64,
    pub phi1: f64,
    pub m0: f64,
    pub delta_rate: f64,

    pub sigma: f64,
    pub m_sigma: f64,
    pub delay_d: f64,
    pub norm_a: f64,
    pub norm_b: f64,
    pub norm_k: f64,
    pub norm_acl: f64,
    /// Left side of the small-gain condition at the chosen `λ`.
    pub small_gain_lhs: f64,
    /// Infimum of the `λ` values that satisfy the small-gain condition.
    pub lambda_min: f64,
    pub norm: NormKind,

    pub provenance: BTreeMap<String, Provenance>,
    pub warnings: Vec<String>,
}

impl DesignConstants {
    pub fn provenance_of(&self, name: &str) -> Provenance {
        self.provenance
            .get(name)
            .copied()
            .unwrap_or(Provenance::Computed)
    }

    pub fn is_pinned(&self, name: &str) -> bool {
        self.provenance_of(name) == Provenance::Pinned
    }

    /// `{name: {value, provenance}}` for the run manifest.
    pub fn manifest(&self) -> serde_json::Value {
        let fields = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("m3", self.m3),
            ("mbar", self.mbar),
            ("mbar1", self.mbar1),
            ("omega", self.omega),
            ("t_dwell", self.t_dwell),
            ("lambda", self.lambda),
            ("eps", self.eps),
            ("nu", self.nu),
            ("phi", self.phi),
            ("phi1", self.phi1),
            ("m0", self.m0),
            ("delta_rate", self.delta_rate),
            ("sigma", self.sigma),
            ("m_sigma", self.m_sigma),
        ];
        let mut map = serde_json::Map::new();
        for (name, value) in fields {
            map.insert(
                name.to_string(),
                serde_json::json!({ "value": value, "provenance": self.provenance_of(name) }),
            );
        }
        serde_json::json!({
            "constants": map,
            "derived": {
                "norm": self.norm,
                "norm_a": self.norm_a,
                "norm_b": self.norm_b,
                "norm_k": self.norm_k,
                "norm_acl": self.norm_acl,
                "small_gain_lhs": self.small_gain_lhs,
                "lambda_min": self.lambda_min,
                "rate": theoretical_rate(self),
            },
            "warnings": self.warnings,
        })
    }
}

/// `e^D/(1+λ) · (M_σ/σ |B| + 1)`.
pub fn small_gain_lhs(delay: f64, lambda: f64, m_sigma: f64, sigma: f64, norm_b: f64) -> f64 {
    delay.exp() / (1.0 + lambda) * (m_sigma / sigma * norm_b + 1.0)
}

/// `h(ε, ν) = (1+ε)/(1+λ) e^{D(ν+1)} (M_σ/σ |B| (1+ε) + 1)`.
pub fn strengthened_small_gain(
    eps: f64,
    nu: f64,
    delay: f64,
    lambda: f64,
    m_sigma: f64,
    sigma: f64,
    norm_b: f64,
) -> f64 {
    (1.0 + eps) / (1.0 + lambda)
        * (delay * (nu + 1.0)).exp()
        * (m_sigma / sigma * norm_b * (1.0 + eps) + 1.0)
}

struct Resolver<'a> {
    overrides: &'a ConstantOverrides,
    provenance: BTreeMap<String, Provenance>,
}

impl Resolver<'_> {
    fn take(
        &mut self,
        name: &str,
        pinned: Option<f64>,
        compute: impl FnOnce() -> Result<f64>,
    ) -> Result<f64> {
        let (value, prov) = match pinned {
            Some(v) => (v, Provenance::Pinned),
            None => (compute()?, Provenance::Computed),
        };
        if !value.is_finite() {
            return Err(Error::Constant(format!("{name} = {value}")));
        }
        self.provenance.insert(name.to_string(), prov);
        Ok(value)
    }
}

/// Design constants in dependency order. Pinned values are used verbatim
/// and feed every downstream formula.
///
/// `lambda_hint` (or a pinned `lambda`) must satisfy the small-gain
/// condition; without either, `λ` is placed so the left side equals 1/2.
pub fn compute_constants(
    plant: &PlantModel,
    gains: &ControllerGains,
    quant: &QuantizerSpec,
    lambda_hint: Option<f64>,
    overrides: &ConstantOverrides,
    norm: NormKind,
) -> Result<DesignConstants> {
    let d = plant.delay_d;
    let norm_a = induced_norm(&plant.a, norm)?;
    let norm_b = induced_norm(&plant.b, norm)?;
    let norm_k = induced_norm(&gains.k, norm)?;
    let norm_acl = induced_norm(&gains.closed_loop(plant), norm)?;
    let DecayEnvelope { m_sigma, sigma } = gains.envelope;
    let mut warnings = Vec::new();
    if m_sigma < 1.0 {
        warnings.push(format!(
            "M_sigma = {m_sigma} < 1 cannot bound |e^(A+BK)t| at t = 0; using it as pinned"
        ));
    }

    let mut r = Resolver {
        overrides,
        provenance: BTreeMap::new(),
    };
    let o = r.overrides.clone();

    let m1 = r.take("m1", o.m1, || {
        Ok(norm_k * (norm_a * d).exp() * 1f64.max(d * norm_b) + 1.0)
    })?;
    let m2 = r.take("m2", o.m2, || {
        Ok(1.0 / (norm_k * (norm_acl * d).exp() * 1f64.max(d * norm_b) + 1.0))
    })?;
    let m3 = r.take("m3", o.m3, || {
        Ok(norm_k * (norm_a * d).exp() * (1.0 + norm_b * d))
    })?;
    let mbar1 = r.take("mbar1", o.mbar1, || Ok(1.0 + d * norm_b))?;

    let lambda_min = small_gain_lhs(d, 0.0, m_sigma, sigma, norm_b) - 1.0;
    let lambda = r.take("lambda", o.lambda.or(lambda_hint), || {
        Ok(2.0 * (lambda_min + 1.0) - 1.0)
    })?;
    if o.lambda.is_none() && lambda_hint.is_some() {
        r.provenance.insert("lambda".into(), Provenance::Pinned);
    }
    let sg = small_gain_lhs(d, lambda, m_sigma, sigma, norm_b);
    if !(sg < 1.0) {
        return Err(Error::SmallGain { lambda, lhs: sg });
    }

    let h = |eps: f64, nu: f64| strengthened_small_gain(eps, nu, d, lambda, m_sigma, sigma, norm_b);
    let (mut eps, mut nu) = (o.eps.unwrap_or(1.0), o.nu.unwrap_or(1.0));
    let mut halvings = 0;
    while !(h(eps, nu) < 1.0) {
        if halvings == MAX_HALVINGS || (o.eps.is_some() && o.nu.is_some()) {
            return Err(Error::SmallGainSearch { halvings });
        }
        if o.eps.is_none() {
            eps *= 0.5;
        }
        if o.nu.is_none() {
            nu *= 0.5;
        }
        halvings += 1;
    }
    let eps = r.take("eps", o.eps, || Ok(eps))?;
    let nu = r.take("nu", o.nu, || Ok(nu))?;

    let phi = r.take("phi", o.phi, || {
        Ok((1.0 + eps) / (1.0 + lambda) * (d * (nu + 1.0)).exp())
    })?;
    if !(phi > 0.0 && phi < 1.0) {
        return Err(Error::Constant(format!("phi = {phi} must lie in (0, 1)")));
    }
    let gain_x = m_sigma / sigma * norm_b;
    let phi1 = r.take("phi1", o.phi1, || {
        Ok((1.0 + eps) / (1.0 - phi) * phi * gain_x)
    })?;
    if !(0.0..1.0).contains(&phi1) {
        return Err(Error::Constant(format!("phi1 = {phi1} must lie in [0, 1)")));
    }
    let m0 = r.take("m0", o.m0, || {
        let a = 1.0 / ((1.0 - phi) * (1.0 - phi1));
        let c0 = (a * d.exp()).max(a * phi * m_sigma);
        let c1 = (m_sigma / (1.0 - phi1)).max((1.0 + eps) * a * d.exp() * gain_x);
        Ok(c0 + c1)
    })?;
    let mbar = r.take("mbar", o.mbar, || Ok(m2 / (m1 * (1.0 + m0))))?;
    let omega = r.take("omega", o.omega, || {
        Ok((1.0 + lambda) * (1.0 + m0).powi(2) * quant.error_delta * m3 / (m2 * quant.range_m))
    })?;
    let delta_rate = r.take("delta_rate", o.delta_rate, || {
        Ok(DELTA_FRACTION * sigma.min(nu))
    })?;
    if !(delta_rate > 0.0) {
        return Err(Error::Constant(format!(
            "delta = {delta_rate} must be positive"
        )));
    }
    let t_dwell = r.take("t_dwell", o.t_dwell, || {
        if !(omega > 0.0) {
            return Err(Error::Constant(
                "Omega = 0 makes the dwell time infinite; pin omega".into(),
            ));
        }
        Ok(-(omega / (1.0 + m0)).ln() / delta_rate)
    })?;
    if !(t_dwell > 0.0) {
        // Ω ≥ 1 + M0: reportable, but the switched law cannot run with it
        warnings.push(format!(
            "dwell time T = {t_dwell} is not positive (Omega >= 1 + M0)"
        ));
    }

    if !(omega < 1.0) {
        warnings.push(format!(
            "Omega = {omega} >= 1: the zoom-in phase does not contract"
        ));
    }
    if mbar > 1.0 {
        warnings.push(format!("Mbar = {mbar} > 1"));
    }
    if !(m1 > 1.0) {
        warnings.push(format!("M1 = {m1} <= 1"));
    }
    if !(m2 > 0.0 && m2 < 1.0) {
        warnings.push(format!("M2 = {m2} outside (0, 1)"));
    }
    if !(delta_rate < sigma.min(nu)) {
        warnings.push(format!("delta = {delta_rate} is not below min(sigma, nu)"));
    }
    let provenance = r.provenance;
    let pinned: Vec<&str> = provenance
        .iter()
        .filter(|(_, p)| **p == Provenance::Pinned)
        .map(|(n, _)| n.as_str())
        .collect();
    if !pinned.is_empty() {
        warnings.push(format!("pinned rather than derived: {}", pinned.join(", ")));
    }

    Ok(DesignConstants {
        m1,
        m2,
        m3,
        mbar,
        mbar1,
        omega,
        t_dwell,
        lambda,
        eps,
        nu,
        phi,
        phi1,
        m0,
        delta_rate,
        sigma,
        m_sigma,
        delay_d: d,
        norm_a,
        norm_b,
        norm_k,
        norm_acl,
        small_gain_lhs: sg,
        lambda_min,
        norm,
        provenance,
        warnings,
    })
}

use crate::linalg::DecayEnvelope;

/// Outcome of a `Δ/M < bound` test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub holds: bool,
    pub ratio: f64,
    pub bound: f64,
    /// `bound − Δ/M`; positive iff the condition holds.
    pub margin: f64,
}

impl ConditionCheck {
    fn new(ratio: f64, bound: f64) -> Self {
        Self {
            holds: ratio < bound,
            ratio,
            bound,
            margin: bound - ratio,
        }
    }
}

/// State quantization: `Δ/M < M2 / ((1+M0) max{M3(1+λ)(1+M0), 2 M1})`.
pub fn check_theorem1(quant: &QuantizerSpec, c: &DesignConstants) -> ConditionCheck {
    let bound = c.m2 / ((1.0 + c.m0) * (c.m3 * (1.0 + c.lambda) * (1.0 + c.m0)).max(2.0 * c.m1));
    ConditionCheck::new(quant.error_delta / quant.range_m, bound)
}

/// Input quantization: `Δ/M < M2 / (M3 (1+λ) (1+M0)²)`.
pub fn check_theorem2(quant: &QuantizerSpec, c: &DesignConstants) -> ConditionCheck {
    let bound = c.m2 / (c.m3 * (1.0 + c.lambda) * (1.0 + c.m0).powi(2));
    ConditionCheck::new(quant.error_delta / quant.range_m, bound)
}

/// Exponent `ln Ω / T` of the convergence envelope.
pub fn theoretical_rate(c: &DesignConstants) -> f64 {
    c.omega.ln() / c.t_dwell
}
