//! Multi-rate closed-loop simulation: the plant integrates with RK4 at the
//! plant step while the controller runs on noisy measurements at its own
//! period and its motor commands are held in between.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::SplitMix64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{controller_step, ControllerState};
use crate::dynamics::{motor_allocation, Plant, VehicleState, SWIVEL_GUARD};
use crate::error::{Error, Result};
use crate::ode::rk4_step;
use crate::scenario::{with_parameter, DisturbanceConfig, Scenario, ScenarioError};
use crate::so3::rotation_to_euler312_lossy;
use crate::stability::{lyapunov_rate, lyapunov_value, ErrorState};

/// ψ below which the attitude counts as settled.
pub const SETTLING_THRESHOLD: f64 = 0.01;

/// Commands in the first part of a run are excluded from the post-transient peak.
pub const TRANSIENT: f64 = 0.1;

pub type NoiseRng = SplitMix64;

pub fn noise_rng(seed: u64) -> NoiseRng {
    SplitMix64::seed_from_u64(seed)
}

/// Adds independent zero-mean Gaussian noise of standard deviation
/// `gyro_sigma` to `ω` and `δ̇`. Configuration states are left untouched.
pub fn inject_measurement_noise(s: &VehicleState, disturbance: &DisturbanceConfig, rng: &mut NoiseRng) -> VehicleState {
    if disturbance.gyro_sigma == 0.0 {
        return *s;
    }
    let normal = Normal::new(0.0, disturbance.gyro_sigma).expect("validated sigma");
    let mut out = *s;
    for i in 0..3 {
        out.omega[i] += normal.sample(rng);
    }
    out.delta_rate += normal.sample(rng);
    out
}

/// One row of telemetry, taken at a controller tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryRecord {
    pub t: f64,
    /// Yaw, roll, pitch of `R` (rad).
    pub euler: [f64; 3],
    pub euler_desired: [f64; 3],
    pub omega: Vector3<f64>,
    pub delta: f64,
    pub delta_rate: f64,
    pub moment: Vector3<f64>,
    pub desired_moment: Vector3<f64>,
    /// Raw commands before clipping.
    pub motor_cmd: [f64; 4],
    pub motor_actual: [f64; 4],
    pub psi: f64,
    pub v: f64,
    pub v_dot: f64,
    pub saturation: u8,
}

pub const TELEMETRY_HEADER: &str = "t,eul_psi,eul_phi,eul_theta,eul_psi_d,eul_phi_d,eul_theta_d,wx,wy,wz,delta,ddelta,\
Mx,My,Mz,Mdx,Mdy,Mdz,f1_cmd,f2_cmd,f3_cmd,f4_cmd,f1_act,f2_act,f3_act,f4_act,psi_err,V,Vdot,sat_flags";

impl TelemetryRecord {
    fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut fields: Vec<f64> = vec![self.t];
        fields.extend(self.euler);
        fields.extend(self.euler_desired);
        fields.extend(self.omega.iter());
        fields.extend([self.delta, self.delta_rate]);
        fields.extend(self.moment.iter());
        fields.extend(self.desired_moment.iter());
        fields.extend(self.motor_cmd);
        fields.extend(self.motor_actual);
        fields.extend([self.psi, self.v, self.v_dot]);
        for f in fields {
            write!(w, "{f},")?;
        }
        writeln!(w, "{}", self.saturation)
    }
}

/// CSV with [`TELEMETRY_HEADER`]; floats use the shortest round-trip form.
pub fn write_telemetry(records: &[TelemetryRecord], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{TELEMETRY_HEADER}")?;
    for r in records {
        r.write_csv(w)?;
    }
    Ok(())
}

pub fn write_telemetry_file(records: &[TelemetryRecord], path: &Path) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_telemetry(records, &mut w)?;
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    /// First time after which ψ stays below the threshold; `None` if it never settles.
    pub settling_time: Option<f64>,
    /// Largest raw per-motor command over the run, N.
    pub peak_motor_command: f64,
    /// Largest raw per-motor command after the initial transient, N.
    pub peak_motor_command_after_transient: f64,
    /// Fraction of controller ticks with at least one clipped motor.
    pub saturation_duty: f64,
    pub final_psi: f64,
    pub final_omega_error: f64,
    pub max_abs_delta: f64,
    pub ticks: usize,
    /// Time and message of the error that halted the run.
    pub failure_time: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub telemetry: Vec<TelemetryRecord>,
    pub metrics: MetricsSummary,
    pub error: Option<Error>,
}

impl RunOutput {
    pub fn diverged(&self) -> bool {
        self.error.is_some()
    }
}

pub fn compute_metrics(
    telemetry: &[TelemetryRecord],
    omega_error: f64,
    failure: Option<(f64, &Error)>,
) -> MetricsSummary {
    let last_unsettled = telemetry.iter().rposition(|r| !(r.psi < SETTLING_THRESHOLD));
    let settling_time = match (last_unsettled, failure) {
        (_, Some(_)) => None,
        (None, _) => telemetry.first().map(|r| r.t),
        (Some(i), _) => telemetry.get(i + 1).map(|r| r.t),
    };
    let peak = |from: f64| {
        telemetry.iter().filter(|r| r.t >= from).flat_map(|r| r.motor_cmd).fold(f64::NEG_INFINITY, f64::max)
    };
    let saturated = telemetry.iter().filter(|r| r.saturation != 0).count();
    MetricsSummary {
        settling_time,
        peak_motor_command: peak(f64::NEG_INFINITY),
        peak_motor_command_after_transient: peak(TRANSIENT),
        saturation_duty: if telemetry.is_empty() { 0.0 } else { saturated as f64 / telemetry.len() as f64 },
        final_psi: telemetry.last().map_or(f64::NAN, |r| r.psi),
        final_omega_error: omega_error,
        max_abs_delta: telemetry.iter().map(|r| r.delta.abs()).fold(0.0, f64::max),
        ticks: telemetry.len(),
        failure_time: failure.map(|(t, _)| t),
        failure: failure.map(|(_, e)| e.to_string()),
    }
}

/// Runs a validated scenario. Runtime failures stop the run and are reported
/// in the output together with the telemetry gathered so far.
pub fn run_scenario(sc: &Scenario) -> Result<RunOutput> {
    let gains = sc.gains()?;
    let nominal = sc.vehicle;
    nominal.validate()?;
    let plant =
        Plant { params: nominal.with_inertia_scale(sc.disturbance.inertia_scale), motor_lag: sc.disturbance.motor_lag };
    let mut reference = sc.reference.build()?;
    let mut rng = noise_rng(sc.seed);
    let (ticks, substeps) = sc.step_counts();
    let (period, h) = (sc.controller_period, sc.controller_period / substeps as f64);
    let j_nom = nominal.nominal_inertia();

    let thrust = sc.thrust();
    let mut cs = ControllerState::new(thrust).with_feedforward(sc.controller.feedforward);
    let mut state = sc.initial_state();
    let hover = thrust / state.delta.cos();
    let hover_motor = motor_allocation(hover, 0.0, &nominal).unwrap_or_else(|s| s.clipped);
    state.motor_thrust = [hover_motor[0], hover_motor[1], hover_motor[0], hover_motor[1]];

    let mut telemetry = Vec::with_capacity(ticks + 1);
    let mut omega_error = f64::NAN;
    let mut failure: Option<(f64, Error)> = None;

    for k in 0..=ticks {
        let t = k as f64 * period;
        let tick = (|| -> Result<[f64; 4]> {
            let r = reference.sample(t)?;
            let measured = inject_measurement_noise(&state, &sc.disturbance, &mut rng);
            let (out, next) = controller_step(&measured, &r, &cs, &gains, &nominal, period)?;
            cs = next;
            if !plant.motor_lag {
                state.motor_thrust = out.motor_cmd;
            }
            let err = ErrorState {
                r_e: out.tracking.rotation,
                e_omega: out.tracking.e_omega,
                m_e: out.moment_error,
                m_e_rate: out.moment_error_rate,
            };
            omega_error = (state.omega - out.tracking.rotation.matrix().transpose() * r.omega).norm();
            let e = rotation_to_euler312_lossy(&state.attitude);
            let ed = rotation_to_euler312_lossy(&r.attitude);
            telemetry.push(TelemetryRecord {
                t,
                euler: [e.yaw, e.roll, e.pitch],
                euler_desired: [ed.yaw, ed.roll, ed.pitch],
                omega: state.omega,
                delta: state.delta,
                delta_rate: state.delta_rate,
                moment: out.moment,
                desired_moment: out.desired_moment,
                motor_cmd: out.motor_raw,
                motor_actual: state.motor_thrust,
                psi: out.psi,
                v: lyapunov_value(&err, &gains, &j_nom),
                v_dot: lyapunov_rate(&err, &gains),
                saturation: out.saturation_flags(),
            });
            Ok(out.motor_cmd)
        })();
        let commands = match tick {
            Ok(c) => c,
            Err(e) => {
                failure = Some((t, e));
                break;
            }
        };
        if k == ticks {
            break;
        }
        let step = (|| -> Result<VehicleState> {
            let mut s = state;
            for _ in 0..substeps {
                s = rk4_step(&s, h, |x| plant.derivative(x, &commands))?;
                if s.delta.abs() >= SWIVEL_GUARD {
                    return Err(Error::SwivelSingularity(s.delta));
                }
            }
            Ok(s)
        })();
        match step {
            Ok(s) => state = s,
            Err(e) => {
                failure = Some((t + period, e));
                break;
            }
        }
    }

    let metrics = compute_metrics(&telemetry, omega_error, failure.as_ref().map(|(t, e)| (*t, e)));
    Ok(RunOutput { telemetry, metrics, error: failure.map(|(_, e)| e) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub metrics: MetricsSummary,
}

/// Independent runs with `path` set to each value; run `i` uses seed `base + i`.
pub fn sweep(sc: &Scenario, path: &str, values: &[f64]) -> std::result::Result<Vec<SweepRow>, ScenarioError> {
    let scenarios = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut s = with_parameter(sc, path, v)?;
            s.seed = sc.seed.wrapping_add(i as u64);
            Ok((v, s))
        })
        .collect::<std::result::Result<Vec<_>, ScenarioError>>()?;
    scenarios
        .into_par_iter()
        .map(|(value, s)| {
            let out = run_scenario(&s).map_err(|e| ScenarioError::Parse {
                field: path.to_string(),
                line: 0,
                reason: e.to_string(),
            })?;
            Ok(SweepRow { value, seed: s.seed, metrics: out.metrics })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "value,seed,settling_time,peak_motor_command,peak_motor_command_after_transient,\
saturation_duty,final_psi,final_omega_error,max_abs_delta,failure_time";

pub fn write_sweep(rows: &[SweepRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in rows {
        let m = &r.metrics;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.value,
            r.seed,
            opt(m.settling_time),
            m.peak_motor_command,
            m.peak_motor_command_after_transient,
            m.saturation_duty,
            m.final_psi,
            m.final_omega_error,
            m.max_abs_delta,
            opt(m.failure_time)
        )?;
    }
    Ok(())
}
