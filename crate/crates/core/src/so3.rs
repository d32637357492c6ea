//! SO(3) kernel: hat/vee, exponential and logarithm, the 312 Euler chart and
//! the configuration error function used by the tracking controller.
//!
//! Attitudes are plain rotation matrices. Vectors are column vectors and the
//! hat map satisfies `hat(a) * b == a.cross(&b)`.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen3;

/// Tolerance for the orthonormality and determinant checks of [`Rotation`].
pub const ROTATION_TOL: f64 = 1e-9;

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix that is known to be a rotation (no checks).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Wraps `m` after checking `RᵀR = I` and `det R = 1` to [`ROTATION_TOL`].
    pub fn try_from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let defect = orthogonality_defect(&m);
        let det = m.determinant();
        if defect < ROTATION_TOL && (det - 1.0).abs() < ROTATION_TOL {
            Ok(Rotation(m))
        } else {
            Err(Error::TooFarFromSO3(defect.max((det - 1.0).abs())))
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn is_valid(&self) -> bool {
        orthogonality_defect(&self.0) < ROTATION_TOL && (self.0.determinant() - 1.0).abs() < ROTATION_TOL
    }

    /// Geodesic distance to `other` in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        log_so3(&(self.transpose() * *other)).norm()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// `‖RᵀR − I‖_F`
pub fn orthogonality_defect(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).norm()
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Rejects matrices whose symmetric part exceeds 1e-9.
pub fn vee(s: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let sym = (s + s.transpose()).norm();
    if sym >= 1e-9 {
        return Err(Error::NonSkewInput(sym));
    }
    Ok(vee_unchecked(s))
}

/// Vee of the skew part of `s`.
pub(crate) fn vee_unchecked(s: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(0.5 * (s[(2, 1)] - s[(1, 2)]), 0.5 * (s[(0, 2)] - s[(2, 0)]), 0.5 * (s[(1, 0)] - s[(0, 1)]))
}

/// Rodrigues' formula.
pub fn exp_so3(v: &Vector3<f64>) -> Rotation {
    let theta = v.norm();
    let k = hat(v);
    let (a, b) = if theta < 1e-6 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Principal logarithm, `‖log R‖ ≤ π`.
///
/// At exactly π the axis sign is ambiguous; the representative whose first
/// nonzero component (x, then y, then z) is positive is returned.
pub fn log_so3(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let skew = vee_unchecked(m); // = sin(theta) * axis

    if theta < 1e-6 {
        return skew * (1.0 + theta * theta / 6.0);
    }
    if theta < PI - 1e-3 {
        return skew * (theta / theta.sin());
    }

    // Near π: recover the axis from the symmetric part (1 - cos θ) n nᵀ.
    let sym = (m + m.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
    let col = (0..3).max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)])).unwrap_or(0);
    let mut axis: Vector3<f64> = sym.column(col).into_owned();
    axis.normalize_mut();
    let d = axis.dot(&skew);
    if d.abs() > 1e-12 {
        if d < 0.0 {
            axis = -axis;
        }
    } else if let Some(first) = axis.iter().find(|c| c.abs() > 1e-9) {
        if *first < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// Projects a near-rotation onto SO(3) (polar factor via SVD).
pub fn orthonormalize(m: &Matrix3<f64>) -> Result<Rotation> {
    let defect = orthogonality_defect(m);
    if !defect.is_finite() || defect >= 0.1 || m.determinant() <= 0.0 {
        return Err(Error::TooFarFromSO3(defect));
    }
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::TooFarFromSO3(defect));
    };
    Ok(Rotation(u * v_t))
}

/// 312 Euler angles: yaw about z, then roll about x, then pitch about y.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Euler312 {
    pub yaw: f64,
    pub roll: f64,
    pub pitch: f64,
}

impl Euler312 {
    pub fn new(yaw: f64, roll: f64, pitch: f64) -> Self {
        Euler312 { yaw, roll, pitch }
    }

    pub fn from_degrees(yaw: f64, roll: f64, pitch: f64) -> Self {
        Euler312::new(yaw.to_radians(), roll.to_radians(), pitch.to_radians())
    }

    pub fn to_degrees(self) -> [f64; 3] {
        [self.yaw.to_degrees(), self.roll.to_degrees(), self.pitch.to_degrees()]
    }
}

/// `R = Rz(yaw) Rx(roll) Ry(pitch)`, written out entrywise.
pub fn euler312_to_rotation(e: &Euler312) -> Rotation {
    let (sp, cp) = e.yaw.sin_cos();
    let (sr, cr) = e.roll.sin_cos();
    let (st, ct) = e.pitch.sin_cos();
    Rotation(Matrix3::new(
        ct * cp - sr * st * sp,
        -cr * sp,
        st * cp + sr * ct * sp,
        ct * sp + sr * st * cp,
        cr * cp,
        st * sp - sr * ct * cp,
        -cr * st,
        sr,
        cr * ct,
    ))
}

pub fn rotation_to_euler312(r: &Rotation) -> Result<Euler312> {
    let m = r.matrix();
    let r32 = m[(2, 1)];
    if r32.abs() >= 1.0 - 1e-9 {
        return Err(Error::GimbalLock(r32.abs()));
    }
    Ok(euler312_unchecked(m))
}

/// Same as [`rotation_to_euler312`] but never fails; at gimbal lock the roll
/// saturates at ±π/2 and the yaw/pitch split is arbitrary. Used for telemetry.
pub fn rotation_to_euler312_lossy(r: &Rotation) -> Euler312 {
    euler312_unchecked(r.matrix())
}

fn euler312_unchecked(m: &Matrix3<f64>) -> Euler312 {
    Euler312 {
        yaw: (-m[(0, 1)]).atan2(m[(1, 1)]),
        roll: m[(2, 1)].clamp(-1.0, 1.0).asin(),
        pitch: (-m[(2, 0)]).atan2(m[(2, 2)]),
    }
}

/// Symmetric positive-definite weight `P` of the configuration error function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorGainMatrix(Matrix3<f64>);

impl ErrorGainMatrix {
    pub fn new(p: Matrix3<f64>) -> Result<Self> {
        let asym = (p - p.transpose()).abs().max();
        if !(asym <= 1e-12) {
            return Err(Error::InvalidGainMatrix(format!("asymmetry {asym:e}")));
        }
        let (vals, _) = symmetric_eigen3(&p);
        if vals.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidGainMatrix(format!("eigenvalues {vals:?}")));
        }
        Ok(ErrorGainMatrix(p))
    }

    pub fn diagonal(d: [f64; 3]) -> Result<Self> {
        ErrorGainMatrix::new(Matrix3::from_diagonal(&Vector3::from(d)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Ascending eigenvalues and matching unit eigenvectors (as columns).
    pub fn eigen(&self) -> ([f64; 3], Matrix3<f64>) {
        symmetric_eigen3(&self.0)
    }
}

/// `ψ = ½ tr(P (I − R_e))`
pub fn config_error_psi(r_e: &Rotation, p: &ErrorGainMatrix) -> f64 {
    0.5 * (p.0 * (Matrix3::identity() - r_e.0)).trace()
}

/// `e_R = ½ vee(P R_e − R_eᵀ P)`, the left-trivialized gradient of ψ.
pub fn attitude_error(r_e: &Rotation, p: &ErrorGainMatrix) -> Vector3<f64> {
    // vee of the skew part of A = P R_e is ½ vee(A − Aᵀ)
    vee_unchecked(&(p.0 * r_e.0))
}

/// `{I, exp(π v̂₁), exp(π v̂₂), exp(π v̂₃)}` for the unit eigenvectors of `P`.
pub fn critical_points(p: &ErrorGainMatrix) -> Result<[Rotation; 4]> {
    let (vals, vecs) = p.eigen();
    if (vals[1] - vals[0]).abs() <= 1e-9 || (vals[2] - vals[1]).abs() <= 1e-9 {
        return Err(Error::DegenerateP(vals));
    }
    let half_turn = |i: usize| {
        let v: Vector3<f64> = vecs.column(i).into_owned();
        // exp(π v̂) = 2 v vᵀ − I for unit v
        Rotation(v * v.transpose() * 2.0 - Matrix3::identity())
    };
    Ok([Rotation::identity(), half_turn(0), half_turn(1), half_turn(2)])
}
