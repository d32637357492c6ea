//! Scenario documents (TOML).
//!
//! ```toml
//! duration = 10.0            # s
//! plant_step = 0.001         # s
//! controller_period = 0.004  # s, an integer multiple of plant_step
//! seed = 1
//! rng = "splitmix64"
//!
//! [initial]
//! euler312_deg = [180.0, 0.0, 50.0]   # yaw, roll, pitch
//! omega = [0.0, 0.0, 0.0]             # rad/s
//! delta_deg = 0.0
//! delta_rate = 0.0                    # rad/s
//!
//! [reference]
//! kind = "fixed-axis-sinusoid"
//! amplitude_deg = 40.0
//! frequency_hz = 1.0
//! axis = [1.0, 1.0, 1.0]
//!
//! [disturbance]
//! inertia_scale = [1.05, 1.05, 1.05]
//! gyro_sigma = 0.075                  # rad/s
//! motor_lag = true
//! ```
//!
//! The `euler312-stick` reference takes `keyframes` (each with `t`, `yaw_deg`,
//! `roll_deg`, `pitch_deg`, `transition_pitch_deg`) and an optional `filter`
//! table (`natural_freq`, `damping`). `[gains]` holds `k_r`, `k_omega`, `p`
//! (rows), `zeta` and `natural_freq`; `[vehicle]` holds the plant parameters
//! in SI units; `[controller] thrust` overrides the per-wing collective thrust,
//! which otherwise carries half the weight, and `[controller] feedforward`
//! selects `"model"` (default) or `"finite-difference"` moment derivatives.
//! Every key is optional and unknown keys are rejected.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControlGains, Feedforward, GainsConfig};
use crate::dynamics::{VehicleParams, VehicleState};
use crate::reference::{FixedAxisSinusoid, ReferenceGenerator, StickFilter, StickKeyframe, StickReference};
use crate::so3::{euler312_to_rotation, Euler312};

/// Identifier of the only supported noise generator.
pub const RNG_SPLITMIX64: &str = "splitmix64";

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {field}: {reason}")]
    Parse { field: String, line: usize, reason: String },
    #[error("unknown sweep parameter `{0}`")]
    UnknownParameter(String),
    #[error("{0}")]
    Io(String),
}

impl ScenarioError {
    fn invalid(text: Option<&str>, field: &str, reason: impl Into<String>) -> Self {
        let line = text.map(|t| locate_field(t, field)).unwrap_or(0);
        ScenarioError::Parse { field: field.to_string(), line, reason: reason.into() }
    }
}

/// 1-based line of the first assignment to the last segment of `field`, or 0.
fn locate_field(text: &str, field: &str) -> usize {
    let key = field.rsplit('.').next().unwrap_or(field);
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map_or(0, |i| i + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConditions {
    pub euler312_deg: [f64; 3],
    pub omega: [f64; 3],
    pub delta_deg: f64,
    pub delta_rate: f64,
}

impl Default for InitialConditions {
    fn default() -> Self {
        InitialConditions { euler312_deg: [0.0; 3], omega: [0.0; 3], delta_deg: 0.0, delta_rate: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ReferenceConfig {
    FixedAxisSinusoid {
        #[serde(default)]
        amplitude_deg: f64,
        #[serde(default = "one")]
        frequency_hz: f64,
        #[serde(default = "unit_diagonal")]
        axis: [f64; 3],
    },
    Euler312Stick {
        #[serde(default)]
        keyframes: Vec<StickKeyframe>,
        #[serde(default)]
        filter: StickFilter,
    },
}

fn one() -> f64 {
    1.0
}

fn unit_diagonal() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig::FixedAxisSinusoid { amplitude_deg: 0.0, frequency_hz: 1.0, axis: unit_diagonal() }
    }
}

impl ReferenceConfig {
    pub fn build(&self) -> crate::Result<Box<dyn ReferenceGenerator + Send>> {
        Ok(match self {
            ReferenceConfig::FixedAxisSinusoid { amplitude_deg, frequency_hz, axis } => Box::new(FixedAxisSinusoid {
                amplitude: amplitude_deg.to_radians(),
                freq: *frequency_hz,
                axis: Vector3::from(*axis),
            }),
            ReferenceConfig::Euler312Stick { keyframes, filter } => {
                let keys = if keyframes.is_empty() { vec![StickKeyframe::default()] } else { keyframes.clone() };
                Box::new(StickReference::new(keys, *filter)?)
            }
        })
    }
}

/// Plant-side disturbances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceConfig {
    /// Multiplies the plant's `J_xx, J_yy, J_zz`; the controller keeps nominal values.
    pub inertia_scale: [f64; 3],
    /// Standard deviation of additive noise on `ω` and `δ̇`, rad/s.
    pub gyro_sigma: f64,
    pub motor_lag: bool,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        DisturbanceConfig { inertia_scale: [1.0; 3], gyro_sigma: 0.0, motor_lag: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// Per-wing collective thrust `T₀`, N.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thrust: Option<f64>,
    pub feedforward: Feedforward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub duration: f64,
    pub plant_step: f64,
    pub controller_period: f64,
    pub seed: u64,
    pub rng: String,
    pub initial: InitialConditions,
    pub reference: ReferenceConfig,
    pub gains: GainsConfig,
    pub vehicle: VehicleParams,
    pub controller: ControllerConfig,
    pub disturbance: DisturbanceConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            duration: 10.0,
            plant_step: 1e-3,
            controller_period: 4e-3,
            seed: 0,
            rng: RNG_SPLITMIX64.to_string(),
            initial: InitialConditions::default(),
            reference: ReferenceConfig::default(),
            gains: GainsConfig::default(),
            vehicle: VehicleParams::default(),
            controller: ControllerConfig::default(),
            disturbance: DisturbanceConfig::default(),
        }
    }
}

impl Scenario {
    /// The flight-test reproduction: 40° 1 Hz sinusoid about (1,1,1) from a
    /// (180, 0, 50)° initial attitude, 5% inertia scaling, motor lag and gyro noise.
    pub fn flight_reproduction() -> Self {
        Scenario {
            initial: InitialConditions { euler312_deg: [180.0, 0.0, 50.0], ..Default::default() },
            reference: ReferenceConfig::FixedAxisSinusoid {
                amplitude_deg: 40.0,
                frequency_hz: 1.0,
                axis: unit_diagonal(),
            },
            disturbance: DisturbanceConfig { inertia_scale: [1.05; 3], gyro_sigma: 0.075, motor_lag: true },
            ..Default::default()
        }
    }

    /// Controller ticks per run and plant steps per tick.
    pub fn step_counts(&self) -> (usize, usize) {
        let ticks = (self.duration / self.controller_period).round() as usize;
        let sub = (self.controller_period / self.plant_step).round() as usize;
        (ticks, sub)
    }

    pub fn gains(&self) -> crate::Result<ControlGains> {
        ControlGains::try_from(self.gains)
    }

    pub fn thrust(&self) -> f64 {
        self.controller.thrust.unwrap_or_else(|| self.vehicle.hover_thrust())
    }

    pub fn initial_state(&self) -> VehicleState {
        let [y, r, p] = self.initial.euler312_deg;
        VehicleState {
            attitude: euler312_to_rotation(&Euler312::from_degrees(y, r, p)),
            omega: Vector3::from(self.initial.omega),
            delta: self.initial.delta_deg.to_radians(),
            delta_rate: self.initial.delta_rate,
            motor_thrust: [0.0; 4],
        }
    }

    /// Semantic checks beyond the schema; `text` is used to report line numbers.
    pub fn validate(&self, text: Option<&str>) -> Result<(), ScenarioError> {
        let bad = |field: &str, reason: String| Err(ScenarioError::invalid(text, field, reason));
        let positive = [
            ("duration", self.duration),
            ("plant_step", self.plant_step),
            ("controller_period", self.controller_period),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name, format!("must be positive, got {v}"));
            }
        }
        let ratio = self.controller_period / self.plant_step;
        if ratio < 0.5 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return bad("controller_period", "must be an integer multiple of plant_step".into());
        }
        if self.rng != RNG_SPLITMIX64 {
            return bad("rng", format!("unsupported generator `{}` (expected `{RNG_SPLITMIX64}`)", self.rng));
        }
        if let Err(e) = self.vehicle.validate() {
            return bad("vehicle", e.to_string());
        }
        if let Err(e) = self.gains() {
            return bad("gains", e.to_string());
        }
        let d = &self.disturbance;
        if let Some(s) = d.inertia_scale.iter().find(|s| !(0.9..=1.1).contains(*s)) {
            return bad("disturbance.inertia_scale", format!("factor {s} outside [0.9, 1.1]"));
        }
        if !(d.gyro_sigma >= 0.0 && d.gyro_sigma.is_finite()) {
            return bad("disturbance.gyro_sigma", format!("must be non-negative, got {}", d.gyro_sigma));
        }
        if let Some(t) = self.controller.thrust {
            if !(t > crate::controller::MIN_THRUST && t.is_finite()) {
                return bad("controller.thrust", format!("must be positive, got {t}"));
            }
        }
        let init = &self.initial;
        if init
            .euler312_deg
            .iter()
            .chain(&init.omega)
            .chain([&init.delta_deg, &init.delta_rate])
            .any(|v| !v.is_finite())
        {
            return bad("initial", "values must be finite".into());
        }
        if init.delta_deg.to_radians().abs() >= crate::dynamics::SWIVEL_GUARD {
            return bad("initial.delta_deg", format!("{} is too close to ±90°", init.delta_deg));
        }
        match &self.reference {
            ReferenceConfig::FixedAxisSinusoid { amplitude_deg, frequency_hz, axis } => {
                if !(Vector3::from(*axis).norm() > 0.0) {
                    return bad("reference.axis", "must be non-zero".into());
                }
                if !(amplitude_deg.is_finite() && frequency_hz.is_finite()) {
                    return bad("reference", "amplitude and frequency must be finite".into());
                }
            }
            ReferenceConfig::Euler312Stick { filter, .. } => {
                if !(filter.natural_freq > 0.0 && filter.damping > 0.0) {
                    return bad("reference.filter", "natural_freq and damping must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let sc: Scenario = toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let field = e.span().map_or_else(String::new, |s| field_at(text, s.start));
        ScenarioError::Parse { field, line, reason: e.message().to_string() }
    })?;
    sc.validate(Some(text))?;
    Ok(sc)
}

/// Key on the line containing byte offset `pos`, if it is an assignment.
fn field_at(text: &str, pos: usize) -> String {
    let start = text[..pos.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("");
    line.split_once('=').map_or_else(|| line.trim().to_string(), |(k, _)| k.trim().to_string())
}

pub fn read_scenario(path: &std::path::Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

/// Copy of `sc` with the numeric field at dotted `path` set to `value`.
/// Array-valued fields receive `value` in every element.
pub fn with_parameter(sc: &Scenario, path: &str, value: f64) -> Result<Scenario, ScenarioError> {
    let mut doc = toml::Value::try_from(sc).map_err(|e| ScenarioError::Io(e.to_string()))?;
    let unknown = || ScenarioError::UnknownParameter(path.to_string());
    let (parents, leaf) = match path.rsplit_once('.') {
        Some((p, l)) => (p.split('.').collect::<Vec<_>>(), l),
        None => (Vec::new(), path),
    };
    let mut node = &mut doc;
    for seg in parents {
        node = node.get_mut(seg).ok_or_else(unknown)?;
    }
    let table = node.as_table_mut().ok_or_else(unknown)?;
    let slot = table.entry(leaf.to_string()).or_insert(toml::Value::Float(f64::NAN));
    *slot = match slot {
        toml::Value::Array(a) if a.iter().all(|v| v.is_float() || v.is_integer()) => {
            toml::Value::Array(vec![toml::Value::Float(value); a.len()])
        }
        toml::Value::Integer(_) if value.fract() == 0.0 && value.abs() < 2f64.powi(53) => {
            toml::Value::Integer(value as i64)
        }
        toml::Value::Float(_) => toml::Value::Float(value),
        _ => return Err(unknown()),
    };
    let updated: Scenario = doc.try_into().map_err(|_: toml::de::Error| unknown())?;
    updated.validate(None)?;
    Ok(updated)
}
