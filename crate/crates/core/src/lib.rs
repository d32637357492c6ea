//! Attitude dynamics, geometric tracking control, stability analysis and a
//! closed-loop simulation harness for a swiveling biplane-quadrotor tailsitter.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod ode;
pub mod reference;
pub mod scenario;
pub mod sim;
pub mod so3;
pub mod stability;

pub use error::{Error, Result};
