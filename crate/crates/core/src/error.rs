use thiserror::Error;

/// Errors raised by the kernel, plant, controller and analysis routines.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not skew-symmetric (|S + S^T| = {0:e})")]
    NonSkewInput(f64),
    #[error("312 Euler chart is singular: |R32| = {0} is too close to 1")]
    GimbalLock(f64),
    #[error("error gain matrix eigenvalues are not distinct: {0:?}")]
    DegenerateP([f64; 3]),
    #[error("error gain matrix must be symmetric positive definite: {0}")]
    InvalidGainMatrix(String),
    #[error("matrix is too far from SO(3) to project (orthogonality defect {0:e})")]
    TooFarFromSO3(f64),
    #[error("swivel half-angle {0} rad is outside the admissible range")]
    SwivelSingularity(f64),
    #[error("non-finite value in state: {0}")]
    NonFiniteState(String),
    #[error("collective thrust {0} N is too small for the yaw-moment diffeomorphism")]
    DegenerateThrust(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("rotation is not a critical point of the error function (|e_R| = {0:e})")]
    NotCriticalPoint(f64),
    #[error("linearization at equilibrium {index} is not hyperbolic (min |Re| = {margin:e})")]
    NonHyperbolic { index: usize, margin: f64 },
    #[error("eigenvalue iteration did not converge after {0} iterations")]
    EigenNoConvergence(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
