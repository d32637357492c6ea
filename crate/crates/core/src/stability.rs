//! Equilibria of the closed-loop error system, their linearizations, the
//! Lyapunov function and gain-selection checks.
//!
//! The error state is `(R_e, e_ω, M_e, Ṁ_e)` with nominal dynamics
//!
//! ```text
//! Ṙ_e = R_e ê_ω
//! J ė_ω = −k_R e_R − k_ω e_ω + M_e
//! M̈_e + D Ṁ_e + K M_e = 0
//! ```
//!
//! Its equilibria are `(R_eq, 0, 0, 0)` for the four critical points of ψ.

use nalgebra::{Complex, DMatrix, DVector, Matrix3, Vector3};

use crate::controller::ControlGains;
use crate::error::{Error, Result};
use crate::linalg::eigenvalues;
use crate::ode::OdeState;
use crate::so3::{attitude_error, config_error_psi, critical_points, hat, log_so3, orthonormalize, Rotation};

/// Real parts within this distance of zero make an equilibrium non-hyperbolic.
pub const HYPERBOLIC_MARGIN: f64 = 1e-9;

/// Tolerance on `‖e_R(R_eq)‖` for accepting a critical point.
pub const CRITICAL_POINT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorState {
    pub r_e: Rotation,
    pub e_omega: Vector3<f64>,
    pub m_e: Vector3<f64>,
    pub m_e_rate: Vector3<f64>,
}

impl ErrorState {
    pub fn at_rest(r_e: Rotation) -> Self {
        ErrorState { r_e, e_omega: Vector3::zeros(), m_e: Vector3::zeros(), m_e_rate: Vector3::zeros() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRate {
    pub r_e: Matrix3<f64>,
    pub e_omega: Vector3<f64>,
    pub m_e: Vector3<f64>,
    pub m_e_rate: Vector3<f64>,
}

impl OdeState for ErrorState {
    type Rate = ErrorRate;

    fn advance(&self, rate: &ErrorRate, h: f64) -> Self {
        ErrorState {
            r_e: Rotation::from_matrix_unchecked(self.r_e.matrix() + rate.r_e * h),
            e_omega: self.e_omega + rate.e_omega * h,
            m_e: self.m_e + rate.m_e * h,
            m_e_rate: self.m_e_rate + rate.m_e_rate * h,
        }
    }

    fn combine(rates: [&ErrorRate; 4], weights: [f64; 4]) -> ErrorRate {
        let mut out = ErrorRate {
            r_e: Matrix3::zeros(),
            e_omega: Vector3::zeros(),
            m_e: Vector3::zeros(),
            m_e_rate: Vector3::zeros(),
        };
        for (r, w) in rates.iter().zip(weights) {
            out.r_e += r.r_e * w;
            out.e_omega += r.e_omega * w;
            out.m_e += r.m_e * w;
            out.m_e_rate += r.m_e_rate * w;
        }
        out
    }

    fn project(self) -> Result<Self> {
        let finite = self
            .r_e
            .matrix()
            .iter()
            .chain(self.e_omega.iter())
            .chain(self.m_e.iter())
            .chain(self.m_e_rate.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFiniteState(format!("{self:?}")));
        }
        Ok(ErrorState { r_e: orthonormalize(self.r_e.matrix())?, ..self })
    }
}

/// Vector field of the nominal error system.
pub fn error_dynamics(e: &ErrorState, g: &ControlGains, inertia: &Matrix3<f64>) -> Result<ErrorRate> {
    let j_inv = inertia.try_inverse().ok_or_else(|| Error::InvalidParameter("singular inertia".into()))?;
    let e_r = attitude_error(&e.r_e, &g.p);
    Ok(ErrorRate {
        r_e: e.r_e.matrix() * hat(&e.e_omega),
        e_omega: j_inv * (-e_r * g.k_r - e.e_omega * g.k_omega + e.m_e),
        m_e: e.m_e_rate,
        m_e_rate: -g.damping() * e.m_e_rate - g.stiffness() * e.m_e,
    })
}

/// `B(R_eq) = −½ Σᵢ êᵢ P R_eq êᵢ`, the Jacobian of `e_R` along `R_eq exp(η̂)`.
pub fn b_matrix(r_eq: &Rotation, p: &crate::so3::ErrorGainMatrix) -> Result<Matrix3<f64>> {
    let residual = attitude_error(r_eq, p).norm();
    if !(residual <= CRITICAL_POINT_TOL * p.matrix().norm().max(1.0)) {
        return Err(Error::NotCriticalPoint(residual));
    }
    let a = p.matrix() * r_eq.matrix();
    let mut sum = Matrix3::zeros();
    for i in 0..3 {
        let e = hat(&Vector3::ith(i, 1.0));
        sum += e * a * e;
    }
    Ok(sum * -0.5)
}

/// 12×12 Jacobian `S(R_eq)` in the coordinates `(η, e_ω, M_e, Ṁ_e)`.
pub fn linearized_system(r_eq: &Rotation, g: &ControlGains, inertia: &Matrix3<f64>) -> Result<DMatrix<f64>> {
    let b = b_matrix(r_eq, &g.p)?;
    let j_inv = inertia.try_inverse().ok_or_else(|| Error::InvalidParameter("singular inertia".into()))?;
    let mut s = DMatrix::zeros(12, 12);
    let mut put = |row: usize, col: usize, m: Matrix3<f64>| s.fixed_view_mut::<3, 3>(row, col).copy_from(&m);
    put(0, 3, Matrix3::identity());
    put(3, 0, -j_inv * b * g.k_r);
    put(3, 3, -j_inv * g.k_omega);
    put(3, 6, j_inv);
    put(6, 9, Matrix3::identity());
    put(9, 6, -g.stiffness());
    put(9, 9, -g.damping());
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    DesiredStable,
    Saddle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub r_eq: Rotation,
    pub eigenvalues: Vec<Complex<f64>>,
    pub n_stable: usize,
    pub hyperbolic: bool,
    pub classification: Classification,
}

impl EquilibriumReport {
    /// Smallest `|Re λ|`.
    pub fn hyperbolicity_margin(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.re.abs()).fold(f64::INFINITY, f64::min)
    }
}

fn analyze_equilibrium(r_eq: Rotation, g: &ControlGains, inertia: &Matrix3<f64>) -> Result<EquilibriumReport> {
    let mut eigs = eigenvalues(&linearized_system(&r_eq, g, inertia)?)?;
    eigs.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let n_stable = eigs.iter().filter(|l| l.re < 0.0).count();
    let hyperbolic = eigs.iter().all(|l| l.re.abs() > HYPERBOLIC_MARGIN);
    let classification = if n_stable == eigs.len() { Classification::DesiredStable } else { Classification::Saddle };
    Ok(EquilibriumReport { r_eq, eigenvalues: eigs, n_stable, hyperbolic, classification })
}

/// Reports for `[I, exp(π v̂₁), exp(π v̂₂), exp(π v̂₃)]`.
pub fn classify_equilibria(g: &ControlGains, inertia: &Matrix3<f64>) -> Result<[EquilibriumReport; 4]> {
    let points = critical_points(&g.p)?;
    let reports: Vec<_> = points.into_iter().map(|r| analyze_equilibrium(r, g, inertia)).collect::<Result<_>>()?;
    for (index, r) in reports.iter().enumerate() {
        if !r.hyperbolic {
            return Err(Error::NonHyperbolic { index, margin: r.hyperbolicity_margin() });
        }
    }
    Ok(reports.try_into().expect("four critical points"))
}

/// `V = k_R ψ + ½ e_ωᵀ J e_ω + ½ M_eᵀ K M_e + ½ Ṁ_eᵀ Ṁ_e`
pub fn lyapunov_value(e: &ErrorState, g: &ControlGains, inertia: &Matrix3<f64>) -> f64 {
    g.k_r * config_error_psi(&e.r_e, &g.p)
        + 0.5 * e.e_omega.dot(&(inertia * e.e_omega))
        + 0.5 * e.m_e.dot(&(g.stiffness() * e.m_e))
        + 0.5 * e.m_e_rate.norm_squared()
}

/// `V̇ = −e_ωᵀ(k_ω e_ω − M_e) − Ṁ_eᵀ D Ṁ_e`
pub fn lyapunov_rate(e: &ErrorState, g: &ControlGains) -> f64 {
    -e.e_omega.dot(&(e.e_omega * g.k_omega - e.m_e)) - e.m_e_rate.dot(&(g.damping() * e.m_e_rate))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainRuleReport {
    /// Every `ζ_i ≥ 1`.
    pub inner_overdamped: bool,
    /// `min Ω_i²`
    pub inner_stiffness: f64,
    /// Largest eigenvalue of `k_R J⁻¹ B(I)`.
    pub outer_stiffness: f64,
    pub inner_stiffer: bool,
    /// Upper-left 6×6 block of `S(I)` has only real eigenvalues.
    pub outer_non_oscillatory: bool,
}

impl GainRuleReport {
    pub fn all_pass(&self) -> bool {
        self.inner_overdamped && self.inner_stiffer && self.outer_non_oscillatory
    }
}

pub fn check_gain_rules(g: &ControlGains, inertia: &Matrix3<f64>) -> Result<GainRuleReport> {
    let s = linearized_system(&Rotation::identity(), g, inertia)?;
    let outer_block = s.view((0, 0), (6, 6)).into_owned();
    let outer = eigenvalues(&outer_block)?;
    let scale = outer.iter().map(|l| l.norm()).fold(1.0, f64::max);
    let outer_non_oscillatory = outer.iter().all(|l| l.im.abs() <= 1e-9 * scale);

    let stiffness_block = -s.view((3, 0), (3, 3)).into_owned();
    let outer_stiffness = eigenvalues(&stiffness_block)?.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    let inner_stiffness = g.natural_freq.component_mul(&g.natural_freq).min();
    Ok(GainRuleReport {
        inner_overdamped: g.zeta.iter().all(|&z| z >= 1.0),
        inner_stiffness,
        outer_stiffness,
        inner_stiffer: inner_stiffness > outer_stiffness,
        outer_non_oscillatory,
    })
}

/// Local coordinates `(η, e_ω, M_e, Ṁ_e)` of `e` around `R_eq`, with `R_e = R_eq exp(η̂)`.
pub fn local_coordinates(e: &ErrorState, r_eq: &Rotation) -> DVector<f64> {
    let eta = log_so3(&(r_eq.transpose() * e.r_e));
    DVector::from_iterator(12, eta.iter().chain(e.e_omega.iter()).chain(e.m_e.iter()).chain(e.m_e_rate.iter()).copied())
}

/// Inverse of [`local_coordinates`].
pub fn from_local_coordinates(x: &DVector<f64>, r_eq: &Rotation) -> ErrorState {
    let v = |i: usize| Vector3::new(x[i], x[i + 1], x[i + 2]);
    ErrorState { r_e: *r_eq * crate::so3::exp_so3(&v(0)), e_omega: v(3), m_e: v(6), m_e_rate: v(9) }
}
