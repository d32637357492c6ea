//! Reference attitude trajectories.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::controller::ReferenceSample;
use crate::error::{Error, Result};
use crate::so3::{euler312_to_rotation, exp_so3, Euler312};

/// Samples a reference at non-decreasing times.
pub trait ReferenceGenerator {
    fn sample(&mut self, t: f64) -> Result<ReferenceSample>;
}

/// `θ(t) = A sin(2πft)` about a fixed unit axis.
pub fn reference_fixed_axis_sinusoid(
    t: f64,
    amplitude: f64,
    freq: f64,
    axis: &Vector3<f64>,
) -> Result<ReferenceSample> {
    let norm = axis.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidParameter("sinusoid axis must be non-zero".into()));
    }
    let n = axis / norm;
    let w = 2.0 * std::f64::consts::PI * freq;
    let (s, c) = (w * t).sin_cos();
    let a = amplitude;
    Ok(ReferenceSample {
        attitude: exp_so3(&(n * (a * s))),
        omega: n * (a * w * c),
        omega_dot: n * (-a * w.powi(2) * s),
        omega_ddot: n * (-a * w.powi(3) * c),
        omega_dddot: n * (a * w.powi(4) * s),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedAxisSinusoid {
    pub amplitude: f64,
    pub freq: f64,
    pub axis: Vector3<f64>,
}

impl ReferenceGenerator for FixedAxisSinusoid {
    fn sample(&mut self, t: f64) -> Result<ReferenceSample> {
        reference_fixed_axis_sinusoid(t, self.amplitude, self.freq, &self.axis)
    }
}

/// An angle and its first four time derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AngleTrajectory(pub [f64; 5]);

impl AngleTrajectory {
    pub fn angle(&self) -> f64 {
        self.0[0]
    }
}

/// A scalar signal and its first three time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Jet([f64; 4]);

const BINOMIAL: [[f64; 4]; 4] =
    [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];

impl Jet {
    fn mul(self, o: Jet) -> Jet {
        // Leibniz rule
        Jet(std::array::from_fn(|n| (0..=n).map(|k| BINOMIAL[n][k] * self.0[k] * o.0[n - k]).sum()))
    }

    fn add(self, o: Jet) -> Jet {
        Jet(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }

    fn neg(self) -> Jet {
        Jet(self.0.map(|v| -v))
    }

    /// `(sin f, cos f)` from `s' = c f'` and `c' = −s f'`.
    fn sin_cos(f: [f64; 5]) -> (Jet, Jet) {
        let (mut s, mut c) = ([0.0; 4], [0.0; 4]);
        (s[0], c[0]) = f[0].sin_cos();
        for n in 1..4 {
            let m = n - 1;
            s[n] = (0..=m).map(|k| BINOMIAL[m][k] * c[k] * f[n - k]).sum();
            c[n] = -(0..=m).map(|k| BINOMIAL[m][k] * s[k] * f[n - k]).sum::<f64>();
        }
        (Jet(s), Jet(c))
    }

    /// The jet of `ḟ`.
    fn rate(f: [f64; 5]) -> Jet {
        Jet([f[1], f[2], f[3], f[4]])
    }
}

/// Maximum roll before the 312 chart is considered singular.
pub const ROLL_MARGIN: f64 = 1e-3;

/// Maps yaw, roll and pitch trajectories of the 312 chart
/// `R = Rz(ψ) Rx(φ) Ry(θ)` to a reference sample. The body rate is
/// `ω = ψ̇ (−sθ cφ, sφ, cθ cφ) + φ̇ (cθ, 0, sθ) + θ̇ e_y`.
pub fn reference_euler312_stick(
    yaw: &AngleTrajectory,
    roll: &AngleTrajectory,
    pitch: &AngleTrajectory,
) -> Result<ReferenceSample> {
    if !(roll.angle().abs() < std::f64::consts::FRAC_PI_2 - ROLL_MARGIN) {
        return Err(Error::GimbalLock(roll.angle()));
    }
    let (sf, cf) = Jet::sin_cos(roll.0);
    let (st, ct) = Jet::sin_cos(pitch.0);
    let (yaw_rate, roll_rate, pitch_rate) = (Jet::rate(yaw.0), Jet::rate(roll.0), Jet::rate(pitch.0));
    let components = [
        st.mul(cf).neg().mul(yaw_rate).add(ct.mul(roll_rate)),
        sf.mul(yaw_rate).add(pitch_rate),
        ct.mul(cf).mul(yaw_rate).add(st.mul(roll_rate)),
    ];
    let derivative = |n: usize| Vector3::from_fn(|i, _| components[i].0[n]);
    Ok(ReferenceSample {
        attitude: euler312_to_rotation(&Euler312 { yaw: yaw.angle(), roll: roll.angle(), pitch: pitch.angle() }),
        omega: derivative(0),
        omega_dot: derivative(1),
        omega_ddot: derivative(2),
        omega_dddot: derivative(3),
    })
}

/// Stick and transition-pitch inputs at a point in time, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StickKeyframe {
    pub t: f64,
    pub yaw_deg: f64,
    pub roll_deg: f64,
    pub pitch_deg: f64,
    pub transition_pitch_deg: f64,
}

/// Second-order smoothing `ẍ = Ω²(u − x) − 2ζΩẋ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StickFilter {
    pub natural_freq: f64,
    pub damping: f64,
}

impl Default for StickFilter {
    fn default() -> Self {
        StickFilter { natural_freq: 4.0, damping: 1.0 }
    }
}

/// Piecewise-linear stick script smoothed by [`StickFilter`] on each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct StickReference {
    keyframes: Vec<StickKeyframe>,
    filter: StickFilter,
    /// `(x, ẋ)` for yaw, roll and commanded pitch.
    channels: [[f64; 2]; 3],
    time: f64,
}

/// Integration substep for the smoothing filters.
const FILTER_STEP: f64 = 1e-4;

impl StickReference {
    /// The filters start at rest on the first keyframe.
    pub fn new(mut keyframes: Vec<StickKeyframe>, filter: StickFilter) -> Result<Self> {
        if keyframes.is_empty() {
            return Err(Error::InvalidParameter("stick script needs at least one keyframe".into()));
        }
        if !(filter.natural_freq > 0.0 && filter.damping > 0.0) {
            return Err(Error::InvalidParameter("stick filter parameters must be positive".into()));
        }
        keyframes.sort_by(|a, b| a.t.total_cmp(&b.t));
        let first = Self::input_at(&keyframes, keyframes[0].t);
        let channels = first.map(|x| [x, 0.0]);
        let time = keyframes[0].t.min(0.0);
        Ok(StickReference { keyframes, filter, channels, time })
    }

    /// Linearly interpolated `(ψ_c, φ_c, θ_c + θ_tr)` in radians, held beyond the ends.
    fn input_at(keyframes: &[StickKeyframe], t: f64) -> [f64; 3] {
        Self::input_and_slope(keyframes, t).0
    }

    /// Input and its slope on the segment containing `t`.
    fn input_and_slope(keyframes: &[StickKeyframe], t: f64) -> ([f64; 3], [f64; 3]) {
        let to_rad = |k: &StickKeyframe| {
            [k.yaw_deg.to_radians(), k.roll_deg.to_radians(), (k.pitch_deg + k.transition_pitch_deg).to_radians()]
        };
        let idx = keyframes.partition_point(|k| k.t <= t);
        if idx == 0 {
            return (to_rad(&keyframes[0]), [0.0; 3]);
        }
        if idx == keyframes.len() {
            return (to_rad(&keyframes[idx - 1]), [0.0; 3]);
        }
        let (a, b) = (&keyframes[idx - 1], &keyframes[idx]);
        let span = b.t - a.t;
        let s = (t - a.t) / span;
        let (ua, ub) = (to_rad(a), to_rad(b));
        ([0, 1, 2].map(|i| ua[i] + s * (ub[i] - ua[i])), [0, 1, 2].map(|i| (ub[i] - ua[i]) / span))
    }

    fn accel(&self, x: [f64; 2], u: f64) -> f64 {
        let w = self.filter.natural_freq;
        w * w * (u - x[0]) - 2.0 * self.filter.damping * w * x[1]
    }

    fn advance_to(&mut self, t: f64) {
        while self.time < t {
            let h = FILTER_STEP.min(t - self.time);
            let t0 = self.time;
            let u0 = Self::input_at(&self.keyframes, t0);
            let um = Self::input_at(&self.keyframes, t0 + 0.5 * h);
            let u1 = Self::input_at(&self.keyframes, t0 + h);
            for c in 0..3 {
                let x = self.channels[c];
                let f = |x: [f64; 2], u: f64| [x[1], self.accel(x, u)];
                let k1 = f(x, u0[c]);
                let k2 = f([x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]], um[c]);
                let k3 = f([x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]], um[c]);
                let k4 = f([x[0] + h * k3[0], x[1] + h * k3[1]], u1[c]);
                self.channels[c] = [0, 1].map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
            }
            self.time = t0 + h;
        }
    }
}

impl ReferenceGenerator for StickReference {
    fn sample(&mut self, t: f64) -> Result<ReferenceSample> {
        if t < self.time {
            return Err(Error::InvalidParameter(format!("reference time {t} precedes {}", self.time)));
        }
        self.advance_to(t);
        let (u, slope) = Self::input_and_slope(&self.keyframes, t);
        let (w, z) = (self.filter.natural_freq, self.filter.damping);
        let traj = [0, 1, 2].map(|c| {
            let x = self.channels[c];
            let acc = self.accel(x, u[c]);
            let jerk = w * w * (slope[c] - x[1]) - 2.0 * z * w * acc;
            let snap = -w * w * acc - 2.0 * z * w * jerk;
            AngleTrajectory([x[0], x[1], acc, jerk, snap])
        });
        reference_euler312_stick(&traj[0], &traj[1], &traj[2])
    }
}
