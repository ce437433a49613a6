//! Strictly α-stable laws with `1 < α < 2`:
//!
//! ```text
//! E[exp(iλ Z_t)] = exp(-c t |λ|^α (1 - iβ sgn(λ) tan(πα/2)))
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::rng::{exp1, open01};
use crate::scalar::{lit, Real};
use crate::special::gamma;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams<T> {
    /// Index, `1 < α < 2`.
    pub alpha: T,
    /// Skewness, `-1 ≤ β ≤ 1`.
    pub beta: T,
    /// Scale `c > 0` of the characteristic exponent per unit time.
    pub scale: T,
}

impl<T: Real> StableParams<T> {
    pub fn new(alpha: T, beta: T, scale: T) -> Result<Self> {
        if !(alpha > T::one() && alpha < lit(2.0)) {
            return config(format!("stable index must lie in (1, 2), got {alpha}"));
        }
        if !(beta >= -T::one() && beta <= T::one()) {
            return config(format!("stable skewness must lie in [-1, 1], got {beta}"));
        }
        if !(scale > T::zero() && scale.is_finite()) {
            return config(format!("stable scale must be positive, got {scale}"));
        }
        Ok(Self { alpha, beta, scale })
    }

    /// `tan(πα/2)`; negative on `(1, 2)`.
    pub fn tan_term(&self) -> T {
        (T::PI() * self.alpha * lit(0.5)).tan()
    }

    /// `ρ = P(Z₁ > 0) = 1/2 + arctan(β tan(πα/2)) / (πα)`.
    pub fn positivity_parameter(&self) -> T {
        let rho = lit::<T>(0.5) + (self.beta * self.tan_term()).atan() / (T::PI() * self.alpha);
        let lo = T::one() - T::one() / self.alpha;
        let hi = T::one() / self.alpha;
        let slack = lit::<T>(64.0) * T::epsilon();
        debug_assert!(rho >= lo - slack && rho <= hi + slack, "ρ = {rho} outside [{lo}, {hi}]");
        rho.max(lo).min(hi)
    }

    /// The supremum-penalisation exponent `αρ`.
    pub fn alpha_rho(&self) -> T {
        self.alpha * self.positivity_parameter()
    }

    /// Characteristic function of `Z_t` at `λ`, as `(re, im)`.
    pub fn characteristic_function(&self, lambda: T, t: T) -> (T, T) {
        if lambda == T::zero() {
            return (T::one(), T::zero());
        }
        let mag = self.scale * t * lambda.abs().powf(self.alpha);
        let sgn = lambda.signum();
        let modulus = (-mag).exp();
        let phase = mag * self.beta * sgn * self.tan_term();
        (modulus * phase.cos(), modulus * phase.sin())
    }

    /// Constant `C` such that `C (1 - β sgn x) |x|^{α-1}` is the potential
    /// of the zero set when local time is the occupation density at zero:
    ///
    /// ```text
    /// C = Γ(2-α) sin(πα/2) / ((α-1) π c (1 + β² tan²(πα/2)))
    /// ```
    pub fn occupation_local_time_constant(&self) -> T {
        let a = self.alpha;
        let tau = self.tan_term();
        let num = gamma(lit::<T>(2.0) - a) * (T::PI() * a * lit(0.5)).sin() / (a - T::one());
        num / (T::PI() * self.scale * (T::one() + self.beta * self.beta * tau * tau))
    }
}

impl StableParams<f64> {
    /// Chambers–Mallows–Stuck draw of a unit-scale variable with the
    /// characteristic exponent `|λ|^α (1 - iβ sgn λ tan(πα/2))`.
    pub fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.cms_constants().draw(rng)
    }

    pub fn cms_constants(&self) -> CmsConstants {
        let tau = self.tan_term();
        let bt = self.beta * tau;
        CmsConstants {
            alpha: self.alpha,
            b_shift: bt.atan() / self.alpha,
            s_factor: (1.0 + bt * bt).powf(0.5 / self.alpha),
            inv_alpha: 1.0 / self.alpha,
            exponent: (1.0 - self.alpha) / self.alpha,
        }
    }
}

/// Precomputed Chambers–Mallows–Stuck constants.
#[derive(Debug, Clone, Copy)]
pub struct CmsConstants {
    pub alpha: f64,
    pub b_shift: f64,
    pub s_factor: f64,
    pub inv_alpha: f64,
    pub exponent: f64,
}

impl CmsConstants {
    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v = std::f64::consts::PI * (open01(rng) - 0.5);
        let w = exp1(rng);
        let t = self.alpha * (v + self.b_shift);
        self.s_factor * t.sin() / v.cos().powf(self.inv_alpha) * ((v - t).cos() / w).powf(self.exponent)
    }
}
