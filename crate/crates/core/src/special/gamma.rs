//! Lanczos approximation of the gamma function (g = 7, nine terms).

#![allow(clippy::excessive_precision)]

use crate::scalar::{lit, Real};

const G: f64 = 7.0;
const COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Gamma function on the real line (poles at non-positive integers give ±∞ or NaN).
pub fn gamma<T: Real>(x: T) -> T {
    let half = lit::<T>(0.5);
    if x < half {
        // Reflection: Γ(x) Γ(1 - x) = π / sin(πx)
        let pi = T::PI();
        return pi / ((pi * x).sin() * gamma(T::one() - x));
    }
    let x = x - T::one();
    let mut acc = lit::<T>(COEF[0]);
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc = acc + lit::<T>(*c) / (x + T::from_usize_lossy(i));
    }
    let t = x + lit(G) + half;
    lit::<T>((2.0 * std::f64::consts::PI).sqrt()) * t.powf(x + half) * (-t).exp() * acc
}
