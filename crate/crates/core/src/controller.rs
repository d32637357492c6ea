//! Attitude tracking controller.
//!
//! The outer loop is a geometric PD law on SO(3) that produces a desired body
//! moment `M_d` for the constant-inertia nominal model. The inner loop makes
//! the actual moment track `M_d` with second-order (spring-mass-damper) error
//! dynamics: `M_x`, `M_y` are double-integrator states of the controller and
//! `M_z` is realized through the swivel angle via `M_z = −2 l T₀ tan δ`, whose
//! second derivative is feedback-linearized through the differential torque.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    mean_diff_from_wing, motor_allocation, wing_from_mean_diff, MeanDiffInputs, VehicleParams, VehicleState, WingInputs,
};
use crate::error::{Error, Result};
use crate::so3::{attitude_error, config_error_psi, hat, ErrorGainMatrix, Rotation};

/// Thrust below which the `M_z ↔ δ` map is considered collapsed.
pub const MIN_THRUST: f64 = 1e-9;

/// Controller tuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GainsConfig", into = "GainsConfig")]
pub struct ControlGains {
    pub k_r: f64,
    pub k_omega: f64,
    pub p: ErrorGainMatrix,
    /// Damping ratios of the moment loops (x, y, z).
    pub zeta: Vector3<f64>,
    /// Natural frequencies of the moment loops (x, y, z), rad/s.
    pub natural_freq: Vector3<f64>,
}

impl ControlGains {
    pub fn new(k_r: f64, k_omega: f64, p: ErrorGainMatrix, zeta: [f64; 3], natural_freq: [f64; 3]) -> Result<Self> {
        let all = [k_r, k_omega].into_iter().chain(zeta).chain(natural_freq);
        for v in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("controller gains must be positive, got {v}")));
            }
        }
        Ok(ControlGains { k_r, k_omega, p, zeta: Vector3::from(zeta), natural_freq: Vector3::from(natural_freq) })
    }

    /// `D = diag(2 ζ_i Ω_i)`
    pub fn damping(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&(self.zeta.component_mul(&self.natural_freq) * 2.0))
    }

    /// `K = diag(Ω_i²)`
    pub fn stiffness(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.natural_freq.component_mul(&self.natural_freq))
    }
}

impl Default for ControlGains {
    fn default() -> Self {
        ControlGains::try_from(GainsConfig::default()).expect("default gains are valid")
    }
}

/// Serialized form of [`ControlGains`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainsConfig {
    pub k_r: f64,
    pub k_omega: f64,
    /// Rows of the symmetric weight matrix `P`.
    pub p: [[f64; 3]; 3],
    pub zeta: [f64; 3],
    pub natural_freq: [f64; 3],
}

impl Default for GainsConfig {
    fn default() -> Self {
        GainsConfig {
            k_r: 4.0,
            k_omega: 1.2,
            p: [[1.0, 0.0, 0.0], [0.0, 1.1, 0.0], [0.0, 0.0, 1.2]],
            zeta: [1.1, 1.1, 1.1],
            // the yaw loop acts through the swivel and amplifies δ̇ noise, so it runs slower
            natural_freq: [40.0, 40.0, 16.0],
        }
    }
}

impl TryFrom<GainsConfig> for ControlGains {
    type Error = Error;
    fn try_from(c: GainsConfig) -> Result<Self> {
        let p = ErrorGainMatrix::new(Matrix3::from_fn(|i, j| c.p[i][j]))?;
        ControlGains::new(c.k_r, c.k_omega, p, c.zeta, c.natural_freq)
    }
}

impl From<ControlGains> for GainsConfig {
    fn from(g: ControlGains) -> Self {
        let m = g.p.matrix();
        GainsConfig {
            k_r: g.k_r,
            k_omega: g.k_omega,
            p: [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]),
            zeta: g.zeta.into(),
            natural_freq: g.natural_freq.into(),
        }
    }
}

/// Desired attitude with its body rate and the rate's first three derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSample {
    pub attitude: Rotation,
    pub omega: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
    /// Used only by the model-based moment feedforward.
    pub omega_ddot: Vector3<f64>,
    pub omega_dddot: Vector3<f64>,
}

impl Default for ReferenceSample {
    fn default() -> Self {
        ReferenceSample {
            attitude: Rotation::identity(),
            omega: Vector3::zeros(),
            omega_dot: Vector3::zeros(),
            omega_ddot: Vector3::zeros(),
            omega_dddot: Vector3::zeros(),
        }
    }
}

/// Attitude and rate tracking errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingError {
    /// `R_e = R_dᵀ R`
    pub rotation: Rotation,
    pub e_r: Vector3<f64>,
    /// `e_ω = ω − R_eᵀ ω_d`
    pub e_omega: Vector3<f64>,
}

pub fn tracking_error(
    r: &Rotation,
    omega: &Vector3<f64>,
    reference: &ReferenceSample,
    p: &ErrorGainMatrix,
) -> TrackingError {
    let r_e = reference.attitude.transpose() * *r;
    TrackingError {
        rotation: r_e,
        e_r: attitude_error(&r_e, p),
        e_omega: omega - r_e.matrix().transpose() * reference.omega,
    }
}

/// Geometric tracking law for the nominal rigid body:
/// `M_d = −k_R e_R − k_ω e_ω + ω × Jω − J(ê_ω R_eᵀ ω_d − R_eᵀ ω̇_d)`.
pub fn desired_moment(
    r: &Rotation,
    omega: &Vector3<f64>,
    reference: &ReferenceSample,
    gains: &ControlGains,
    inertia: &Matrix3<f64>,
) -> Vector3<f64> {
    let err = tracking_error(r, omega, reference, &gains.p);
    let r_e_t = err.rotation.matrix().transpose();
    let feedforward = hat(&err.e_omega) * r_e_t * reference.omega - r_e_t * reference.omega_dot;
    -err.e_r * gains.k_r - err.e_omega * gains.k_omega + omega.cross(&(inertia * omega)) - inertia * feedforward
}

/// `u = M̈_d − D Ṁ_e − K M_e`
pub fn moment_tracking_u(
    m_e: &Vector3<f64>,
    m_e_rate: &Vector3<f64>,
    m_d_accel: &Vector3<f64>,
    gains: &ControlGains,
) -> Vector3<f64> {
    m_d_accel - gains.damping() * m_e_rate - gains.stiffness() * m_e
}

fn check_map_args(delta: f64, thrust: f64, arm: f64) -> Result<()> {
    if !(thrust > MIN_THRUST) {
        return Err(Error::DegenerateThrust(thrust));
    }
    if !(arm > 0.0) {
        return Err(Error::InvalidParameter(format!("moment arm {arm} must be positive")));
    }
    if !(delta.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(Error::SwivelSingularity(delta));
    }
    Ok(())
}

/// Yaw moment produced by swivel half-angle `delta` at collective thrust `thrust`.
pub fn mz_from_delta(delta: f64, thrust: f64, arm: f64) -> Result<f64> {
    check_map_args(delta, thrust, arm)?;
    Ok(-2.0 * arm * thrust * delta.tan())
}

/// Inverse of [`mz_from_delta`].
pub fn delta_from_mz(mz: f64, thrust: f64, arm: f64) -> Result<f64> {
    check_map_args(0.0, thrust, arm)?;
    if !mz.is_finite() {
        return Err(Error::SwivelSingularity(f64::NAN));
    }
    Ok(-(mz / (2.0 * arm * thrust)).atan())
}

/// `(Ṁ_z, M̈_z)` along a swivel trajectory.
pub fn mz_derivatives(delta: f64, delta_rate: f64, delta_accel: f64, thrust: f64, arm: f64) -> Result<(f64, f64)> {
    check_map_args(delta, thrust, arm)?;
    let sec2 = 1.0 / delta.cos().powi(2);
    let k = 2.0 * arm * thrust * sec2;
    let mz_rate = -k * delta_rate;
    let mz_accel = -2.0 * k * delta.tan() * delta_rate * delta_rate - k * delta_accel;
    Ok((mz_rate, mz_accel))
}

/// Differential torque that makes `M̈_z = u_z` on the swivel dynamics.
pub fn tau_delta_from_uz(
    u_z: f64,
    delta: f64,
    delta_rate: f64,
    omega_y: f64,
    omega_z: f64,
    thrust: f64,
    p: &VehicleParams,
) -> Result<f64> {
    check_map_args(delta, thrust, p.arm)?;
    let sec2 = 1.0 / delta.cos().powi(2);
    let k = 2.0 * p.arm * thrust * sec2;
    // u_z = −2k tanδ δ̇² − k v_z
    let v_z = -(u_z + 2.0 * k * delta.tan() * delta_rate * delta_rate) / k;
    Ok(p.j_xx * v_z + 0.5 * (p.j_yy - p.j_zz) * (2.0 * delta).sin() * (omega_y * omega_y - omega_z * omega_z))
}

/// `(M_d, Ṁ_d, M̈_d)` along the nominal model `J ω̇ = −ω × Jω + M` driven by
/// the moment `M` with rate `Ṁ`.
pub fn desired_moment_derivatives(
    r: &Rotation,
    omega: &Vector3<f64>,
    moment: &Vector3<f64>,
    moment_rate: &Vector3<f64>,
    reference: &ReferenceSample,
    gains: &ControlGains,
    inertia: &Matrix3<f64>,
) -> Result<[Vector3<f64>; 3]> {
    let j = inertia;
    let j_inv = j.try_inverse().ok_or_else(|| Error::InvalidParameter("singular inertia".into()))?;
    let err = tracking_error(r, omega, reference, &gains.p);
    let r_e = err.rotation.matrix();
    let r_e_t = r_e.transpose();
    let e_w = err.e_omega;

    // reference rate and its derivatives in body axes: a = R_eᵀω_d, b = R_eᵀω̇_d, ...
    let a = r_e_t * reference.omega;
    let b = r_e_t * reference.omega_dot;
    let c = r_e_t * reference.omega_ddot;
    let d = r_e_t * reference.omega_dddot;

    let w_dot = j_inv * (moment - omega.cross(&(j * omega)));
    let w_ddot = j_inv * (moment_rate - w_dot.cross(&(j * omega)) - omega.cross(&(j * w_dot)));

    // d/dt (R_eᵀ v) = −e_ω × R_eᵀv + R_eᵀv̇
    let a_dot = -e_w.cross(&a) + b;
    let b_dot = -e_w.cross(&b) + c;
    let c_dot = -e_w.cross(&c) + d;
    let ew_dot = w_dot - a_dot;
    let a_ddot = -ew_dot.cross(&a) - e_w.cross(&a_dot) + b_dot;
    let b_ddot = -ew_dot.cross(&b) - e_w.cross(&b_dot) + c_dot;
    let ew_ddot = w_ddot - a_ddot;

    // ė_R = ½(tr(A) I − Aᵀ) e_ω with A = P R_e and Ȧ = A ê_ω
    let pa = gains.p.matrix() * r_e;
    let pa_dot = pa * hat(&e_w);
    let half_grad = |m: &Matrix3<f64>| (Matrix3::identity() * m.trace() - m.transpose()) * 0.5;
    let er_dot = half_grad(&pa) * e_w;
    let er_ddot = half_grad(&pa_dot) * e_w + half_grad(&pa) * ew_dot;

    let (k_r, k_w) = (gains.k_r, gains.k_omega);
    let m_d = -err.e_r * k_r - e_w * k_w + omega.cross(&(j * omega)) - j * (e_w.cross(&a) - b);
    let m_d_rate = -er_dot * k_r - ew_dot * k_w + w_dot.cross(&(j * omega)) + omega.cross(&(j * w_dot))
        - j * (ew_dot.cross(&a) + e_w.cross(&a_dot) - b_dot);
    let m_d_accel = -er_ddot * k_r - ew_ddot * k_w
        + w_ddot.cross(&(j * omega))
        + w_dot.cross(&(j * w_dot)) * 2.0
        + omega.cross(&(j * w_ddot))
        - j * (ew_ddot.cross(&a) + ew_dot.cross(&a_dot) * 2.0 + e_w.cross(&a_ddot) - b_ddot);
    Ok([m_d, m_d_rate, m_d_accel])
}

/// Three most recent samples of `M_d` for backward-difference derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentHistory {
    samples: [Vector3<f64>; 3],
    len: usize,
}

impl MomentHistory {
    pub fn push(&mut self, m: Vector3<f64>) {
        self.samples = [m, self.samples[0], self.samples[1]];
        self.len = (self.len + 1).min(3);
    }

    pub fn is_full(&self) -> bool {
        self.len == 3
    }

    /// `(3M_k − 4M_{k−1} + M_{k−2}) / 2h`, zero until three samples exist.
    pub fn rate(&self, h: f64) -> Vector3<f64> {
        if !self.is_full() {
            return Vector3::zeros();
        }
        let [m0, m1, m2] = self.samples;
        (m0 * 3.0 - m1 * 4.0 + m2) / (2.0 * h)
    }

    /// `(M_k − 2M_{k−1} + M_{k−2}) / h²`, zero until three samples exist.
    pub fn second_derivative(&self, h: f64) -> Vector3<f64> {
        estimate_md_second_derivative(self, h)
    }
}

/// Second-order backward difference of the stored `M_d` samples.
pub fn estimate_md_second_derivative(history: &MomentHistory, h: f64) -> Vector3<f64> {
    if !history.is_full() || !(h > 0.0) {
        return Vector3::zeros();
    }
    let [m0, m1, m2] = history.samples;
    (m0 - m1 * 2.0 + m2) / (h * h)
}

/// Source of `Ṁ_d` and `M̈_d` in the moment loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feedforward {
    /// Differentiate `M_d` along the nominal model using the controller's own `M`, `Ṁ`.
    #[default]
    Model,
    /// Backward differences of the last three `M_d` samples.
    FiniteDifference,
}

/// Internal state carried between controller ticks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    /// Dynamic-extension states `(M_x, M_y)`.
    pub moment_xy: Vector2<f64>,
    pub moment_xy_rate: Vector2<f64>,
    pub history: MomentHistory,
    /// Exogenous per-wing collective thrust `T₀`, N.
    pub thrust: f64,
    pub feedforward: Feedforward,
}

impl ControllerState {
    pub fn new(thrust: f64) -> Self {
        ControllerState {
            moment_xy: Vector2::zeros(),
            moment_xy_rate: Vector2::zeros(),
            history: MomentHistory::default(),
            thrust,
            feedforward: Feedforward::default(),
        }
    }

    pub fn with_feedforward(self, feedforward: Feedforward) -> Self {
        ControllerState { feedforward, ..self }
    }
}

/// Everything computed in one controller tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerOutput {
    pub wings: WingInputs,
    pub mean_diff: MeanDiffInputs,
    /// Unclipped motor commands `[wing1 a, wing1 b, wing2 a, wing2 b]`.
    pub motor_raw: [f64; 4],
    /// Commands clipped to `[0, F_max]`.
    pub motor_cmd: [f64; 4],
    pub saturated: [bool; 4],
    pub tracking: TrackingError,
    pub desired_moment: Vector3<f64>,
    /// Moment state `(M_x, M_y, M_z(δ))` after the update.
    pub moment: Vector3<f64>,
    pub moment_error: Vector3<f64>,
    pub moment_error_rate: Vector3<f64>,
    pub u: Vector3<f64>,
    pub psi: f64,
}

impl ControllerOutput {
    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|&s| s)
    }

    /// Bit `i` set when motor `i` was clipped.
    pub fn saturation_flags(&self) -> u8 {
        self.saturated.iter().enumerate().fold(0, |acc, (i, &s)| acc | ((s as u8) << i))
    }
}

/// One controller tick at period `h` on a measured state.
pub fn controller_step(
    measured: &VehicleState,
    reference: &ReferenceSample,
    state: &ControllerState,
    gains: &ControlGains,
    params: &VehicleParams,
    h: f64,
) -> Result<(ControllerOutput, ControllerState)> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("controller period {h} must be positive")));
    }
    let thrust = state.thrust;
    let arm = params.arm;
    let delta = measured.delta;
    let j_nom = params.nominal_inertia();

    let tracking = tracking_error(&measured.attitude, &measured.omega, reference, &gains.p);
    let mz = mz_from_delta(delta, thrust, arm)?;
    let (mz_rate, _) = mz_derivatives(delta, measured.delta_rate, 0.0, thrust, arm)?;
    let moment = Vector3::new(state.moment_xy.x, state.moment_xy.y, mz);
    let moment_rate = Vector3::new(state.moment_xy_rate.x, state.moment_xy_rate.y, mz_rate);

    let mut next = *state;
    let (m_d, m_d_rate, m_d_accel) = match state.feedforward {
        Feedforward::Model => {
            let [m, rate, accel] = desired_moment_derivatives(
                &measured.attitude,
                &measured.omega,
                &moment,
                &moment_rate,
                reference,
                gains,
                &j_nom,
            )?;
            (m, rate, accel)
        }
        Feedforward::FiniteDifference => {
            let m = desired_moment(&measured.attitude, &measured.omega, reference, gains, &j_nom);
            next.history.push(m);
            (m, next.history.rate(h), estimate_md_second_derivative(&next.history, h))
        }
    };
    let m_e = moment - m_d;
    let m_e_rate = moment_rate - m_d_rate;
    let u = moment_tracking_u(&m_e, &m_e_rate, &m_d_accel, gains);

    // semi-implicit Euler on the x/y extension
    next.moment_xy_rate += Vector2::new(u.x, u.y) * h;
    next.moment_xy += next.moment_xy_rate * h;

    let tau_delta =
        tau_delta_from_uz(u.z, delta, measured.delta_rate, measured.omega.y, measured.omega.z, thrust, params)?;
    let cos_d = delta.cos();
    let mean_diff = MeanDiffInputs {
        thrust_mean: thrust / cos_d,
        thrust_diff: next.moment_xy.y / (2.0 * arm * cos_d),
        torque_mean: 0.5 * next.moment_xy.x,
        torque_diff: tau_delta,
    };
    let wings = wing_from_mean_diff(&mean_diff);

    let mut motor_raw = [0.0; 4];
    let mut motor_cmd = [0.0; 4];
    let mut saturated = [false; 4];
    for i in 0..2 {
        let (raw, cmd) = match motor_allocation(wings.thrust[i], wings.torque[i], params) {
            Ok(f) => (f, f),
            Err(sat) => (sat.raw, sat.clipped),
        };
        for k in 0..2 {
            motor_raw[2 * i + k] = raw[k];
            motor_cmd[2 * i + k] = cmd[k];
            saturated[2 * i + k] = raw[k] != cmd[k];
        }
    }

    let output = ControllerOutput {
        wings,
        mean_diff,
        motor_raw,
        motor_cmd,
        saturated,
        tracking,
        desired_moment: m_d,
        moment: Vector3::new(next.moment_xy.x, next.moment_xy.y, mz),
        moment_error: m_e,
        moment_error_rate: m_e_rate,
        u,
        psi: config_error_psi(&tracking.rotation, &gains.p),
    };
    debug_assert!(mean_diff_from_wing(&wings).thrust_mean.is_finite());
    Ok((output, next))
}
