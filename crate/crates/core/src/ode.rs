//! Fixed-step classical Runge-Kutta integration for states that live on a
//! manifold embedded in a vector space.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A state that can be advanced along a rate and projected back onto its
/// manifold after a full step.
pub trait OdeState: Clone {
    type Rate;

    /// `self + h * rate`, without projection.
    fn advance(&self, rate: &Self::Rate, h: f64) -> Self;

    /// `Σ weights[i] * rates[i]`
    fn combine(rates: [&Self::Rate; 4], weights: [f64; 4]) -> Self::Rate;

    /// Repairs constraint drift and rejects non-finite values.
    fn project(self) -> Result<Self>;
}

/// One classical RK4 step of size `h`.
pub fn rk4_step<S, F>(x: &S, h: f64, mut f: F) -> Result<S>
where
    S: OdeState,
    F: FnMut(&S) -> Result<S::Rate>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step size {h} must be positive")));
    }
    let k1 = f(x)?;
    let k2 = f(&x.advance(&k1, 0.5 * h))?;
    let k3 = f(&x.advance(&k2, 0.5 * h))?;
    let k4 = f(&x.advance(&k3, h))?;
    let sixth = 1.0 / 6.0;
    let k = S::combine([&k1, &k2, &k3, &k4], [sixth, 2.0 * sixth, 2.0 * sixth, sixth]);
    x.advance(&k, h).project()
}

impl OdeState for DVector<f64> {
    type Rate = DVector<f64>;

    fn advance(&self, rate: &Self::Rate, h: f64) -> Self {
        self + rate * h
    }

    fn combine(rates: [&Self::Rate; 4], weights: [f64; 4]) -> Self::Rate {
        let mut out = DVector::zeros(rates[0].len());
        for (r, w) in rates.iter().zip(weights) {
            out.axpy(w, r, 1.0);
        }
        out
    }

    fn project(self) -> Result<Self> {
        if self.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFiniteState("vector state".into()))
        }
    }
}
