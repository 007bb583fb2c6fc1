//! JSON scenario format. Field names carry their units (`_s` = seconds).

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::{estimate_decay_envelope, DecayEnvelope, Matrix, NormKind};
use crate::predictor::{
    check_theorem1, check_theorem2, compute_constants, ActuatorState, ConditionCheck,
    ConstantOverrides, ControllerGains, PlantModel,
};
use crate::quantization::QuantizerSpec;
use crate::sim::{Backend, Controller, SimConfig, SimGrid, DEFAULT_STOP_FACTOR};
use crate::switching::{default_tau, Mode, SwitchingParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub delay_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvelopeSpec {
    /// Used verbatim, even when `m_sigma < 1`.
    Pinned { m_sigma: f64, sigma: f64 },
    /// Sampled sup over `[0, horizon_s]`.
    Estimate {
        sigma: f64,
        horizon_s: f64,
        samples: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSpec {
    pub k: Vec<f64>,
    pub envelope: EnvelopeSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Constant(f64),
    /// Node values on `[0, D]`, `D/dx + 1` of them.
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub x0: Vec<f64>,
    pub u0: ProfileSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepAllocation {
    /// Lattice step `Δ`, deadzone `Δ/2`.
    #[default]
    Uniform,
    /// Lattice step `Δ/(1+√n)` so the composite error stays below `Δ`.
    StateChannel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizerConfig {
    pub range_m: f64,
    pub error_delta: f64,
    #[serde(default)]
    pub allocation: StepAllocation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadzone_mhat: Option<f64>,
}

impl QuantizerConfig {
    pub fn build(&self, n: usize) -> Result<QuantizerSpec> {
        let mut q = match self.allocation {
            StepAllocation::Uniform => QuantizerSpec::uniform(self.range_m, self.error_delta)?,
            StepAllocation::StateChannel => {
                QuantizerSpec::state_channel(self.range_m, self.error_delta, n)?
            }
        };
        if let Some(step) = self.step {
            q.step = step;
            q.deadzone_mhat = step / 2.0;
        }
        if let Some(mhat) = self.deadzone_mhat {
            q.deadzone_mhat = mhat;
        }
        q.validate()?;
        Ok(q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchingConfig {
    #[serde(default)]
    pub mode: Mode,
    /// Derived from the initial state when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<f64>,
    pub mu0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    #[default]
    Switched,
    FixedMu(f64),
    OpenLoop,
}

impl From<ControllerConfig> for Controller {
    fn from(c: ControllerConfig) -> Self {
        match c {
            ControllerConfig::Switched => Controller::Switched,
            ControllerConfig::FixedMu(mu) => Controller::FixedMu(mu),
            ControllerConfig::OpenLoop => Controller::OpenLoop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dt_s: f64,
    pub dx_s: f64,
    pub horizon_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "ConstantOverrides::is_empty")]
    pub overrides: ConstantOverrides,
}

fn default_true() -> bool {
    true
}

fn is_true(v: &bool) -> bool {
    *v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub plant: PlantSpec,
    pub gains: GainSpec,
    pub initial: InitialSpec,
    pub quantizer: QuantizerConfig,
    pub switching: SwitchingConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub store_profiles: bool,
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: SimConfig,
    pub controller: Controller,
    /// The theorem condition for the configured mode.
    pub condition: ConditionCheck,
    pub warnings: Vec<String>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        Ok(serde_json::from_value(value)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_value(&self) -> Result<Value> {
        Ok(serde_json::to_value(self)?)
    }

    pub fn plant(&self) -> Result<PlantModel> {
        let a = Matrix::from_rows(&self.plant.a)?;
        PlantModel::new(a, Matrix::column(&self.plant.b), self.plant.delay_s)
    }

    pub fn prepare(&self) -> Result<Prepared> {
        let plant = self.plant()?;
        let n = plant.dim_n();
        let k = Matrix::row(&self.gains.k);
        // validate K before touching the envelope
        let probe = ControllerGains::new(&plant, k.clone(), DecayEnvelope::pinned(1.0, 1.0)?)?;
        let mut warnings = Vec::new();
        let envelope = match self.gains.envelope {
            EnvelopeSpec::Pinned { m_sigma, sigma } => DecayEnvelope::pinned(m_sigma, sigma)?,
            EnvelopeSpec::Estimate {
                sigma,
                horizon_s,
                samples,
            } => estimate_decay_envelope(
                &probe.closed_loop(&plant),
                sigma,
                horizon_s,
                samples,
                self.norm,
            )?,
        };
        let gains = ControllerGains::new(&plant, k, envelope)?;
        let quant = self.quantizer.build(n)?;
        let consts = compute_constants(
            &plant,
            &gains,
            &quant,
            self.constants.lambda,
            &self.constants.overrides,
            self.norm,
        )?;
        warnings.extend(consts.warnings.iter().cloned());

        let grid = SimGrid::new(self.grid.dt_s, self.grid.dx_s, self.grid.horizon_s)?;
        grid.check_cfl()?;
        if self.backend == Backend::Exact {
            let r = grid.shift_ratio()?;
            if r > 1 {
                warnings.push(format!(
                    "dx/dt = {r}: each node sees only every {r}th control sample, which can \
                     alias into a growing odd/even mode; use dt = dx with the exact backend"
                ));
            }
        }
        let u0 = match &self.initial.u0 {
            ProfileSpec::Constant(c) => ActuatorState::constant(*c, plant.delay_d, grid.dx)?,
            ProfileSpec::Values(v) => ActuatorState::new(v.clone(), grid.dx, plant.delay_d)?,
        };
        if self.initial.x0.len() != n {
            return Err(Error::Dimension(format!(
                "x0 has {} components, plant has {n}",
                self.initial.x0.len()
            )));
        }
        if self.initial.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("x0"));
        }
        let tau = match self.switching.tau_s {
            Some(t) => t,
            None => default_tau(
                &self.initial.x0,
                &u0.values,
                self.switching.mu0,
                self.switching.mode,
                &consts,
                &quant,
            ),
        };
        let switching = SwitchingParams::new(tau, self.switching.mu0, self.switching.mode)?;
        let controller: Controller = self.controller.into();
        if let Controller::FixedMu(mu) = controller {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::Scenario(format!("fixed mu = {mu} must be positive")));
            }
        }

        let condition = match switching.mode {
            Mode::State => check_theorem1(&quant, &consts),
            Mode::Input => check_theorem2(&quant, &consts),
        };
        if !condition.holds {
            warnings.push(format!(
                "theorem condition fails: Delta/M = {:.4e} >= {:.4e}",
                condition.ratio, condition.bound
            ));
        }
        Ok(Prepared {
            config: SimConfig {
                plant,
                gains,
                quant,
                consts,
                switching,
                grid,
                x0: self.initial.x0.clone(),
                u0,
                backend: self.backend,
                norm: self.norm,
                store_profiles: self.store_profiles,
                stop_factor: DEFAULT_STOP_FACTOR,
            },
            controller,
            condition,
            warnings,
        })
    }
}

/// Replaces the value at a dotted path (`quantizer.error_delta`,
/// `plant.a.0.1`), creating object keys as needed.
pub fn set_path(root: &mut Value, path: &str, new: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), new);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::Scenario(format!("'{part}' is not an index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::Scenario(format!("index {idx} out of range ({len})")))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(Error::Scenario(format!(
                    "cannot descend into '{part}' of {path}"
                )))
            }
        };
    }
    Err(Error::Scenario("empty parameter path".into()))
}
