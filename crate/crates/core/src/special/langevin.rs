//! The harmonic function `h(x, y)` of the Kolmogorov diffusion
//! `dx = y dt, dy = dW` killed when `x` reaches zero, expressed through
//! `U(·, 4/3, z)` with `z = (2/9)|y|³/x`.
//!
//! `x` is the distance to the barrier and `y` the velocity away from it; the
//! invariant function for an integrated Brownian motion staying negative is
//! `h(-a, -b)`.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use crate::special::gamma::gamma;
use crate::special::hypergeometric::hypergeometric_u;

fn four_thirds<T: Real>() -> T {
    lit(4.0 / 3.0)
}

/// `z = (2/9) |y|³ / x`.
pub fn langevin_z<T: Real>(x: T, y: T) -> T {
    lit::<T>(2.0 / 9.0) * y.abs().powi(3) / x
}

/// Value of `h(x, 0)`, the common limit of both branches:
/// `(9x/2)^{1/6} Γ(1/3) / Γ(1/6)`.
pub fn langevin_h_axis<T: Real>(x: T) -> T {
    (lit::<T>(4.5) * x).powf(lit(1.0 / 6.0)) * gamma(lit::<T>(1.0 / 3.0)) / gamma(lit::<T>(1.0 / 6.0))
}

/// `h(x, y)` for `x > 0`.
pub fn langevin_h<T: Real>(x: T, y: T) -> Result<T> {
    if !(x > T::zero()) {
        return Err(Error::Domain(format!("h(x, y) requires x > 0, got x = {x}")));
    }
    if y == T::zero() {
        return Ok(langevin_h_axis(x));
    }
    let z = langevin_z(x, y);
    let sixth = lit::<T>(1.0 / 6.0);
    let root = y.abs().sqrt();
    if y > T::zero() {
        Ok(root * z.powf(sixth) * hypergeometric_u(sixth, four_thirds(), z)?)
    } else {
        let u = hypergeometric_u(lit(7.0 / 6.0), four_thirds(), z)?;
        Ok(sixth * root * z.powf(sixth) * u * (-z).exp())
    }
}

/// Limit of `h(x, y)` as `x ↓ 0`: `√y` for `y > 0` and `0` otherwise.
pub fn langevin_h_barrier<T: Real>(y: T) -> T {
    if y > T::zero() {
        y.sqrt()
    } else {
        T::zero()
    }
}

/// `∂h/∂x`, obtained from `d/dz (z^a U(a,b,z)) = -a(b-a-1) z^{a-1} U(a+1,b,z)`.
pub fn langevin_h_dx<T: Real>(x: T, y: T) -> Result<T> {
    if !(x > T::zero()) {
        return Err(Error::Domain(format!("∂h/∂x requires x > 0, got x = {x}")));
    }
    let sixth = lit::<T>(1.0 / 6.0);
    if y == T::zero() {
        return Ok(sixth * langevin_h_axis(x) / x);
    }
    let z = langevin_z(x, y);
    let root = y.abs().sqrt();
    let u76 = hypergeometric_u(lit(7.0 / 6.0), four_thirds(), z)?;
    if y > T::zero() {
        Ok(root * z.powf(sixth) * u76 / (lit::<T>(36.0) * x))
    } else {
        let u136 = hypergeometric_u(lit(13.0 / 6.0), four_thirds(), z)?;
        let bracket = u76 * (T::one() + z) - lit::<T>(35.0 / 36.0) * u136;
        Ok(root / (lit::<T>(6.0) * x) * (-z).exp() * z.powf(sixth) * bracket)
    }
}
