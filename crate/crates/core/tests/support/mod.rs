//! Shared helpers for the integration tests, including an independent model
//! of the vehicle as two rigid wings joined by a revolute hinge.
#![allow(dead_code)]

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use swivel_core::dynamics::{swivel_rotation, wing_from_motors, VehicleParams, VehicleState};
use swivel_core::so3::{exp_so3, hat, orthonormalize, Rotation};

pub fn rng(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_vector(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-scale..scale))
}

/// Rotation by a uniformly drawn angle in `[0, max_angle]` about a random axis.
pub fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> Rotation {
    exp_so3(&(unit_vector(rng) * rng.random_range(0.0..max_angle)))
}

/// Smooth open-loop inputs per wing, held over each step. The hinge torques
/// stay small and zero-mean.
pub struct InputScript {
    thrust: [f64; 2],
    thrust_amp: [f64; 2],
    torque_amp: [f64; 2],
    freq: [f64; 4],
    phase: [f64; 4],
}

impl InputScript {
    pub fn random(rng: &mut impl Rng) -> Self {
        // nearly equal wing thrusts; a large pitch moment would spin up ω_y
        // and tip the free swivel over
        let thrust = rng.random_range(0.5..1.5);
        InputScript {
            thrust: std::array::from_fn(|_| thrust + rng.random_range(-0.02..0.02)),
            thrust_amp: std::array::from_fn(|_| rng.random_range(0.0..0.05)),
            torque_amp: std::array::from_fn(|_| rng.random_range(0.0..5e-3)),
            freq: std::array::from_fn(|_| rng.random_range(0.5..4.0)),
            phase: std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU)),
        }
    }

    /// Motor thrusts `[w1a, w1b, w2a, w2b]` at time `t`.
    pub fn at(&self, t: f64, p: &VehicleParams) -> [f64; 4] {
        let wave = |i: usize| (self.freq[i] * t + self.phase[i]).sin();
        let mut f = [0.0; 4];
        for w in 0..2 {
            let thrust = self.thrust[w] + self.thrust_amp[w] * wave(2 * w);
            let diff = self.torque_amp[w] * wave(2 * w + 1) / p.motor_separation;
            f[2 * w] = 0.5 * thrust + diff;
            f[2 * w + 1] = 0.5 * thrust - diff;
        }
        f
    }
}

pub fn random_state(rng: &mut impl Rng) -> VehicleState {
    VehicleState {
        attitude: random_rotation(rng, std::f64::consts::PI),
        omega: random_vector(rng, 1.0),
        delta: rng.random_range(-0.3..0.3),
        delta_rate: rng.random_range(-0.3..0.3),
        motor_thrust: [0.0; 4],
    }
}

/// Each wing as its own rigid body. Angular velocities are in the wing's
/// own axes and both wings share the rod axis `e_x`.
#[derive(Debug, Clone, Copy)]
pub struct WingPair {
    pub r1: Matrix3<f64>,
    pub w1: Vector3<f64>,
    pub r2: Matrix3<f64>,
    pub w2: Vector3<f64>,
}

type Flat = SVector<f64, 24>;

impl WingPair {
    pub fn from_frame0(s: &VehicleState) -> Self {
        let sd = *swivel_rotation(s.delta).matrix();
        let r = *s.attitude.matrix();
        let rate = Vector3::x() * s.delta_rate;
        WingPair { r1: r * sd.transpose(), w1: sd * s.omega - rate, r2: r * sd, w2: sd.transpose() * s.omega + rate }
    }

    fn flat(&self) -> Flat {
        let mut x = Flat::zeros();
        x.fixed_rows_mut::<9>(0).copy_from_slice(self.r1.as_slice());
        x.fixed_rows_mut::<3>(9).copy_from(&self.w1);
        x.fixed_rows_mut::<9>(12).copy_from_slice(self.r2.as_slice());
        x.fixed_rows_mut::<3>(21).copy_from(&self.w2);
        x
    }

    fn unflat(x: &Flat) -> Self {
        WingPair {
            r1: Matrix3::from_column_slice(x.fixed_rows::<9>(0).as_slice()),
            w1: x.fixed_rows::<3>(9).into_owned(),
            r2: Matrix3::from_column_slice(x.fixed_rows::<9>(12).as_slice()),
            w2: x.fixed_rows::<3>(21).into_owned(),
        }
    }

    /// Each wing's external moment in its own axes: the hinge-axis torque
    /// plus the thrust acting at `±l` from the centre of mass.
    fn external_moments(f: &[f64; 4], p: &VehicleParams) -> (Vector3<f64>, Vector3<f64>) {
        let w = wing_from_motors(f, p);
        (Vector3::new(w.torque[0], p.arm * w.thrust[0], 0.0), Vector3::new(w.torque[1], -p.arm * w.thrust[1], 0.0))
    }

    /// Newton-Euler for both wings with the hinge reaction solved from the
    /// constraint that their relative rate stays along `e_x`.
    fn rate(&self, f: &[f64; 4], p: &VehicleParams) -> Flat {
        let jw = Matrix3::from_diagonal(&Vector3::new(p.j_xx, p.j_yy, p.j_zz));
        let q = self.r1.transpose() * self.r2;
        let (m1, m2) = Self::external_moments(f, p);
        // reaction directions perpendicular to the hinge, in wing-1 axes
        let c = nalgebra::Matrix3x2::new(0.0, 0.0, 1.0, 0.0, 0.0, 1.0);
        let qt_c = q.transpose() * c;

        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&jw);
        a.fixed_view_mut::<3, 2>(0, 6).copy_from(&(-c));
        b.fixed_rows_mut::<3>(0).copy_from(&(m1 - self.w1.cross(&(jw * self.w1))));
        a.fixed_view_mut::<3, 3>(3, 3).copy_from(&jw);
        a.fixed_view_mut::<3, 2>(3, 6).copy_from(&qt_c);
        b.fixed_rows_mut::<3>(3).copy_from(&(m2 - self.w2.cross(&(jw * self.w2))));
        // d/dt (Q w2 − w1) = Q ẇ2 − w1 × Q w2 − ẇ1 has no component off the hinge
        a.fixed_view_mut::<2, 3>(6, 0).copy_from(&(-c.transpose()));
        a.fixed_view_mut::<2, 3>(6, 3).copy_from(&(c.transpose() * q));
        b.fixed_rows_mut::<2>(6).copy_from(&(c.transpose() * self.w1.cross(&(q * self.w2))));
        let sol = a.lu().solve(&b).expect("hinge system is regular");

        let rate = WingPair {
            r1: self.r1 * hat(&self.w1),
            w1: sol.fixed_rows::<3>(0).into_owned(),
            r2: self.r2 * hat(&self.w2),
            w2: sol.fixed_rows::<3>(3).into_owned(),
        };
        rate.flat()
    }

    /// Classical RK4 step with held motor thrusts.
    pub fn step(&self, f: &[f64; 4], p: &VehicleParams, h: f64) -> Self {
        let x = self.flat();
        let k = |x: &Flat| WingPair::unflat(x).rate(f, p);
        let k1 = k(&x);
        let k2 = k(&(x + k1 * (0.5 * h)));
        let k3 = k(&(x + k2 * (0.5 * h)));
        let k4 = k(&(x + k3 * h));
        Self::unflat(&(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)))
    }

    /// Relative swivel angle `φ` between the wings, about the hinge axis.
    pub fn swivel_angle(&self) -> f64 {
        let q = self.r1.transpose() * self.r2;
        q[(2, 1)].atan2(q[(1, 1)])
    }

    pub fn r1_rotation(&self) -> Rotation {
        orthonormalize(&self.r1).expect("near SO(3)")
    }
}

pub mod nominal {
    //! Continuous-time closed loop of the constant-inertia model with the
    //! `(M_x, M_y)` double integrators and the real swivel dynamics for `M_z`.

    use nalgebra::{DVector, Matrix3, Vector3};
    use swivel_core::controller::{
        desired_moment_derivatives, moment_tracking_u, mz_derivatives, mz_from_delta, tau_delta_from_uz, ControlGains,
        ReferenceSample,
    };
    use swivel_core::dynamics::{swivel_acceleration, VehicleParams};
    use swivel_core::so3::{hat, Rotation};
    use swivel_core::Result;

    pub struct NominalLoop<F> {
        pub gains: ControlGains,
        pub params: VehicleParams,
        pub thrust: f64,
        pub reference: F,
    }

    /// Unpacked `[t, R, ω, M_xy, Ṁ_xy, δ, δ̇]`.
    pub struct Parts {
        pub t: f64,
        pub r: Rotation,
        pub omega: Vector3<f64>,
        pub moment: Vector3<f64>,
        pub moment_rate: Vector3<f64>,
        pub delta: f64,
        pub delta_rate: f64,
    }

    pub fn pack(t: f64, r: &Matrix3<f64>, omega: &Vector3<f64>, delta: f64) -> DVector<f64> {
        let mut x = DVector::zeros(19);
        x[0] = t;
        x.rows_mut(1, 9).copy_from_slice(r.as_slice());
        x.rows_mut(10, 3).copy_from(omega);
        x[17] = delta;
        x
    }

    impl<F: Fn(f64) -> ReferenceSample> NominalLoop<F> {
        pub fn parts(&self, x: &DVector<f64>) -> Result<Parts> {
            let (delta, delta_rate) = (x[17], x[18]);
            let mz = mz_from_delta(delta, self.thrust, self.params.arm)?;
            let (mz_rate, _) = mz_derivatives(delta, delta_rate, 0.0, self.thrust, self.params.arm)?;
            Ok(Parts {
                t: x[0],
                r: Rotation::from_matrix_unchecked(Matrix3::from_column_slice(x.rows(1, 9).as_slice())),
                omega: x.fixed_rows::<3>(10).into_owned(),
                moment: Vector3::new(x[13], x[14], mz),
                moment_rate: Vector3::new(x[15], x[16], mz_rate),
                delta,
                delta_rate,
            })
        }

        pub fn rate(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
            let s = self.parts(x)?;
            let j = self.params.nominal_inertia();
            let reference = (self.reference)(s.t);
            let [m_d, m_d_rate, m_d_accel] =
                desired_moment_derivatives(&s.r, &s.omega, &s.moment, &s.moment_rate, &reference, &self.gains, &j)?;
            let u = moment_tracking_u(&(s.moment - m_d), &(s.moment_rate - m_d_rate), &m_d_accel, &self.gains);
            let tau = tau_delta_from_uz(u.z, s.delta, s.delta_rate, s.omega.y, s.omega.z, self.thrust, &self.params)?;

            let j_inv = j.try_inverse().expect("diagonal inertia");
            let omega_dot = j_inv * (s.moment - s.omega.cross(&(j * s.omega)));
            let r_dot = s.r.matrix() * hat(&s.omega);
            let mut dx = DVector::zeros(19);
            dx[0] = 1.0;
            dx.rows_mut(1, 9).copy_from_slice(r_dot.as_slice());
            dx.rows_mut(10, 3).copy_from(&omega_dot);
            dx[13] = x[15];
            dx[14] = x[16];
            dx[15] = u.x;
            dx[16] = u.y;
            dx[17] = s.delta_rate;
            dx[18] = swivel_acceleration(s.delta, &s.omega, tau, &self.params);
            Ok(dx)
        }
    }
}
