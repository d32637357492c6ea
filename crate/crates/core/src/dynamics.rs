//! Rotational dynamics of the two-wing vehicle written in the bisector frame
//! ("Frame-0"), plus the input decompositions and motor model that drive it.
//!
//! Conventions: `delta` is half the relative swivel angle between the wings.
//! `swivel_rotation(delta)` maps Frame-0 components to Wing-1 components and
//! its transpose maps Frame-0 components to Wing-2 components, so that
//! `R1 = R * swivel_rotation(delta)ᵀ` and `R2 = R * swivel_rotation(delta)`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::ode::OdeState;
use crate::so3::{exp_so3, hat, orthonormalize, Rotation};

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

/// Simulation stops before the bisector frame becomes singular at ±π/2.
pub const SWIVEL_GUARD: f64 = FRAC_PI_2 - 0.01;

/// Physical parameters of the vehicle. Defaults are the flight vehicle values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Per-wing principal inertias about the combined centre of mass, kg·m².
    pub j_xx: f64,
    pub j_yy: f64,
    pub j_zz: f64,
    /// Moment arm from the centre of mass to each wing's thrust line, m.
    pub arm: f64,
    /// Distance between the two motors of one wing, m.
    pub motor_separation: f64,
    /// Total vehicle mass, kg.
    pub mass: f64,
    /// First-order motor time constant, s.
    pub motor_time_constant: f64,
    /// Per-motor thrust limit, N.
    pub max_motor_thrust: f64,
    /// Operational bound on the swivel half-angle, rad.
    pub max_swivel: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            j_xx: 1.111e-2,
            j_yy: 1.36e-2,
            j_zz: 2.275e-2,
            arm: 0.21,
            motor_separation: 0.61,
            mass: 0.8,
            motor_time_constant: 0.015,
            max_motor_thrust: 6.74,
            max_swivel: 30f64.to_radians(),
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("j_xx", self.j_xx),
            ("j_yy", self.j_yy),
            ("j_zz", self.j_zz),
            ("arm", self.arm),
            ("motor_separation", self.motor_separation),
            ("mass", self.mass),
            ("motor_time_constant", self.motor_time_constant),
            ("max_motor_thrust", self.max_motor_thrust),
            ("max_swivel", self.max_swivel),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        if self.max_swivel >= FRAC_PI_2 {
            return Err(Error::InvalidParameter("max_swivel must be below π/2".into()));
        }
        Ok(())
    }

    /// Copy with each principal inertia multiplied by the given factor.
    pub fn with_inertia_scale(&self, scale: [f64; 3]) -> Self {
        VehicleParams { j_xx: self.j_xx * scale[0], j_yy: self.j_yy * scale[1], j_zz: self.j_zz * scale[2], ..*self }
    }

    /// Constant inertia of the `delta = 0` configuration, `diag(2J_xx, 2J_yy, 2J_zz)`.
    pub fn nominal_inertia(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(2.0 * self.j_xx, 2.0 * self.j_yy, 2.0 * self.j_zz))
    }

    /// Per-wing mass (the wings are identical).
    pub fn wing_mass(&self) -> f64 {
        0.5 * self.mass
    }

    /// Per-wing thrust that carries half the weight.
    pub fn hover_thrust(&self) -> f64 {
        0.5 * self.mass * GRAVITY
    }
}

/// Full plant state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// Frame-0 to inertial.
    pub attitude: Rotation,
    /// Frame-0 angular velocity in Frame-0 components, rad/s.
    pub omega: Vector3<f64>,
    /// Swivel half-angle, rad.
    pub delta: f64,
    pub delta_rate: f64,
    /// Actual motor thrusts `[wing1 a, wing1 b, wing2 a, wing2 b]`, N.
    pub motor_thrust: [f64; 4],
}

impl Default for VehicleState {
    fn default() -> Self {
        VehicleState {
            attitude: Rotation::identity(),
            omega: Vector3::zeros(),
            delta: 0.0,
            delta_rate: 0.0,
            motor_thrust: [0.0; 4],
        }
    }
}

/// Time derivative of a [`VehicleState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateRate {
    pub attitude: Matrix3<f64>,
    pub omega: Vector3<f64>,
    pub delta: f64,
    pub delta_rate: f64,
    pub motor_thrust: [f64; 4],
}

impl OdeState for VehicleState {
    type Rate = StateRate;

    fn advance(&self, rate: &StateRate, h: f64) -> Self {
        let mut motor_thrust = self.motor_thrust;
        for (f, df) in motor_thrust.iter_mut().zip(rate.motor_thrust) {
            *f += h * df;
        }
        VehicleState {
            attitude: Rotation::from_matrix_unchecked(self.attitude.matrix() + rate.attitude * h),
            omega: self.omega + rate.omega * h,
            delta: self.delta + rate.delta * h,
            delta_rate: self.delta_rate + rate.delta_rate * h,
            motor_thrust,
        }
    }

    fn combine(rates: [&StateRate; 4], w: [f64; 4]) -> StateRate {
        let mut out = StateRate {
            attitude: Matrix3::zeros(),
            omega: Vector3::zeros(),
            delta: 0.0,
            delta_rate: 0.0,
            motor_thrust: [0.0; 4],
        };
        for (r, w) in rates.iter().zip(w) {
            out.attitude += r.attitude * w;
            out.omega += r.omega * w;
            out.delta += r.delta * w;
            out.delta_rate += r.delta_rate * w;
            for (o, v) in out.motor_thrust.iter_mut().zip(r.motor_thrust) {
                *o += v * w;
            }
        }
        out
    }

    fn project(self) -> Result<Self> {
        let finite = self.attitude.matrix().iter().all(|v| v.is_finite())
            && self.omega.iter().all(|v| v.is_finite())
            && self.delta.is_finite()
            && self.delta_rate.is_finite()
            && self.motor_thrust.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFiniteState(format!("{self:?}")));
        }
        Ok(VehicleState { attitude: orthonormalize(self.attitude.matrix())?, ..self })
    }
}

/// Per-wing resultant thrusts and torques about the rod axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WingInputs {
    pub thrust: [f64; 2],
    pub torque: [f64; 2],
}

/// Mean and differential decomposition of [`WingInputs`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanDiffInputs {
    pub thrust_mean: f64,
    pub thrust_diff: f64,
    pub torque_mean: f64,
    pub torque_diff: f64,
}

pub fn mean_diff_from_wing(w: &WingInputs) -> MeanDiffInputs {
    MeanDiffInputs {
        thrust_mean: 0.5 * (w.thrust[0] + w.thrust[1]),
        thrust_diff: 0.5 * (w.thrust[0] - w.thrust[1]),
        torque_mean: 0.5 * (w.torque[0] + w.torque[1]),
        torque_diff: 0.5 * (w.torque[1] - w.torque[0]),
    }
}

pub fn wing_from_mean_diff(md: &MeanDiffInputs) -> WingInputs {
    WingInputs {
        thrust: [md.thrust_mean + md.thrust_diff, md.thrust_mean - md.thrust_diff],
        torque: [md.torque_mean - md.torque_diff, md.torque_mean + md.torque_diff],
    }
}

fn check_swivel(delta: f64) -> Result<()> {
    if delta.is_finite() && delta.abs() < FRAC_PI_2 {
        Ok(())
    } else {
        Err(Error::SwivelSingularity(delta))
    }
}

/// Rotation by `delta` about the rod axis taking Frame-0 components to Wing-1 components.
pub fn swivel_rotation(delta: f64) -> Rotation {
    exp_so3(&(Vector3::x() * delta))
}

/// Equivalent inertia of the two wings in Frame-0.
pub fn inertia_of_delta(delta: f64, p: &VehicleParams) -> Result<Matrix3<f64>> {
    check_swivel(delta)?;
    let (s, c) = delta.sin_cos();
    let (c2, s2) = (c * c, s * s);
    Ok(Matrix3::from_diagonal(&Vector3::new(
        2.0 * p.j_xx,
        2.0 * c2 * p.j_yy + 2.0 * s2 * p.j_zz,
        2.0 * c2 * p.j_zz + 2.0 * s2 * p.j_yy,
    )))
}

/// Time derivative of [`inertia_of_delta`] along `delta_rate`.
pub fn inertia_rate(delta: f64, delta_rate: f64, p: &VehicleParams) -> Result<Matrix3<f64>> {
    check_swivel(delta)?;
    let k = 2.0 * delta_rate * (2.0 * delta).sin();
    Ok(Matrix3::from_diagonal(&Vector3::new(0.0, k * (p.j_zz - p.j_yy), k * (p.j_yy - p.j_zz))))
}

/// Body moment `M = (2τ_m, 2l T_Δ cos δ, −2l T_m sin δ)`.
pub fn control_moment(md: &MeanDiffInputs, delta: f64, p: &VehicleParams) -> Result<Vector3<f64>> {
    check_swivel(delta)?;
    let (s, c) = delta.sin_cos();
    Ok(Vector3::new(2.0 * md.torque_mean, 2.0 * p.arm * md.thrust_diff * c, -2.0 * p.arm * md.thrust_mean * s))
}

/// Swivel acceleration from the differential torque balance.
pub fn swivel_acceleration(delta: f64, omega: &Vector3<f64>, torque_diff: f64, p: &VehicleParams) -> f64 {
    (2.0 * torque_diff - (2.0 * delta).sin() * (p.j_yy - p.j_zz) * (omega.y * omega.y - omega.z * omega.z))
        / (2.0 * p.j_xx)
}

/// Rigid-body and swivel derivatives for given wing inputs. Motor thrust
/// rates are left at zero; see [`Plant::derivative`] for the actuator model.
pub fn dynamics_deriv(s: &VehicleState, w: &WingInputs, p: &VehicleParams) -> Result<StateRate> {
    if !(s.delta.abs() < SWIVEL_GUARD) {
        return Err(Error::SwivelSingularity(s.delta));
    }
    let md = mean_diff_from_wing(w);
    let j = inertia_of_delta(s.delta, p)?;
    let j_dot = inertia_rate(s.delta, s.delta_rate, p)?;
    let moment = control_moment(&md, s.delta, p)?;
    let h = j * s.omega;
    let rhs = moment - j_dot * s.omega - s.omega.cross(&h);
    // J is diagonal
    let omega_dot = Vector3::new(rhs.x / j[(0, 0)], rhs.y / j[(1, 1)], rhs.z / j[(2, 2)]);
    let rate = StateRate {
        attitude: s.attitude.matrix() * hat(&s.omega),
        omega: omega_dot,
        delta: s.delta_rate,
        delta_rate: swivel_acceleration(s.delta, &s.omega, md.torque_diff, p),
        motor_thrust: [0.0; 4],
    };
    let finite = rate.attitude.iter().chain(rate.omega.iter()).all(|v| v.is_finite()) && rate.delta_rate.is_finite();
    if finite {
        Ok(rate)
    } else {
        Err(Error::NonFiniteState(format!("derivative at {s:?}")))
    }
}

/// A motor command that cannot be realized within `[0, F_max]`.
#[derive(Error, Debug, Clone, Copy, PartialEq)]
#[error("motor command {raw:?} saturated to {clipped:?}")]
pub struct Saturated {
    pub raw: [f64; 2],
    pub clipped: [f64; 2],
}

/// Motor thrusts `(f_a, f_b)` of one wing with `f_a + f_b = T` and
/// `(L/2)(f_a − f_b) = τ`.
pub fn motor_allocation(thrust: f64, torque: f64, p: &VehicleParams) -> std::result::Result<[f64; 2], Saturated> {
    let diff = 2.0 * torque / p.motor_separation;
    let raw = [0.5 * (thrust + diff), 0.5 * (thrust - diff)];
    let clipped = raw.map(|f| f.clamp(0.0, p.max_motor_thrust));
    if clipped == raw {
        Ok(raw)
    } else {
        Err(Saturated { raw, clipped })
    }
}

/// Resultant per-wing inputs produced by four motor thrusts.
pub fn wing_from_motors(f: &[f64; 4], p: &VehicleParams) -> WingInputs {
    let half = 0.5 * p.motor_separation;
    WingInputs { thrust: [f[0] + f[1], f[2] + f[3]], torque: [half * (f[0] - f[1]), half * (f[2] - f[3])] }
}

/// First-order lag toward the command clipped to `[0, f_max]`.
pub fn motor_lag_deriv(actual: f64, commanded: f64, time_constant: f64, f_max: f64) -> f64 {
    (commanded.clamp(0.0, f_max) - actual) / time_constant
}

/// Spatial angular momentum `R J(δ) ω`.
pub fn total_angular_momentum(s: &VehicleState, p: &VehicleParams) -> Result<Vector3<f64>> {
    Ok(s.attitude.matrix() * inertia_of_delta(s.delta, p)? * s.omega)
}

/// Rotational kinetic energy `½ ωᵀ J(δ) ω + J_xx δ̇²` of both wings.
pub fn kinetic_energy(s: &VehicleState, p: &VehicleParams) -> Result<f64> {
    let j = inertia_of_delta(s.delta, p)?;
    Ok(0.5 * s.omega.dot(&(j * s.omega)) + p.j_xx * s.delta_rate * s.delta_rate)
}

/// Wing attitudes `(R1, R2)` of a state.
pub fn wing_attitudes(s: &VehicleState) -> (Rotation, Rotation) {
    let rd = swivel_rotation(s.delta);
    (s.attitude * rd.transpose(), s.attitude * rd)
}

/// Ground-truth plant: dynamics plus optional motor lag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plant {
    pub params: VehicleParams,
    pub motor_lag: bool,
}

impl Plant {
    /// State derivative under held motor commands. With motor lag the wings
    /// see the lagged thrusts stored in the state; without it they see the
    /// clipped commands directly.
    pub fn derivative(&self, s: &VehicleState, commands: &[f64; 4]) -> Result<StateRate> {
        let p = &self.params;
        let clipped = commands.map(|f| f.clamp(0.0, p.max_motor_thrust));
        let applied = if self.motor_lag { s.motor_thrust } else { clipped };
        let mut rate = dynamics_deriv(s, &wing_from_motors(&applied, p), p)?;
        if self.motor_lag {
            for ((r, &actual), &cmd) in rate.motor_thrust.iter_mut().zip(&s.motor_thrust).zip(commands) {
                *r = motor_lag_deriv(actual, cmd, p.motor_time_constant, p.max_motor_thrust);
            }
        }
        Ok(rate)
    }
}
