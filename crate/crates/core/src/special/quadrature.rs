//! Adaptive Gauss–Kronrod (7/15) quadrature.

#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Tolerances for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions<T> {
    pub abs_tol: T,
    pub rel_tol: T,
    pub max_intervals: usize,
}

impl<T: Real> Default for QuadOptions<T> {
    fn default() -> Self {
        Self {
            abs_tol: lit(1e-10),
            rel_tol: lit(1e-8),
            max_intervals: 2000,
        }
    }
}

impl<T: Real> QuadOptions<T> {
    pub fn new(abs_tol: T, rel_tol: T) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Quadrature<T> {
    pub value: T,
    pub abs_error: T,
    pub intervals: usize,
}

#[derive(Clone, Copy)]
struct Segment<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

fn gk15<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T) -> Segment<T> {
    let half = (b - a) * lit(0.5);
    let center = (a + b) * lit(0.5);
    let fc = f(center);
    let mut kronrod = fc * lit(WGK[7]);
    let mut gauss = fc * lit(WG[3]);
    for j in 0..7 {
        let dx = half * lit(XGK[j]);
        let pair = f(center - dx) + f(center + dx);
        kronrod = kronrod + pair * lit(WGK[j]);
        if j % 2 == 1 {
            gauss = gauss + pair * lit(WG[j / 2]);
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Segment { a, b, value, error }
}

/// Integrates `f` over the finite interval `[a, b]`.
///
/// Bisects the segment with the largest error estimate until the total
/// error estimate drops below `max(abs_tol, rel_tol * |value|)`.
pub fn integrate<T: Real, F: Fn(T) -> T>(f: F, a: T, b: T, opts: &QuadOptions<T>) -> Result<Quadrature<T>> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("integration bounds must be finite, got [{a}, {b}]")));
    }
    if a == b {
        return Ok(Quadrature {
            value: T::zero(),
            abs_error: T::zero(),
            intervals: 0,
        });
    }
    let mut segments = vec![gk15(&f, a, b)];
    loop {
        let value = segments.iter().fold(T::zero(), |acc, s| acc + s.value);
        let error = segments.iter().fold(T::zero(), |acc, s| acc + s.error);
        if !value.is_finite() {
            return Err(Error::Numerical(format!("non-finite integrand on [{a}, {b}]")));
        }
        let target = opts.abs_tol.max(opts.rel_tol * value.abs());
        if error <= target {
            return Ok(Quadrature {
                value,
                abs_error: error,
                intervals: segments.len(),
            });
        }
        if segments.len() >= opts.max_intervals {
            // Accept when the residual error is at round-off level of the result.
            if error <= lit::<T>(64.0) * T::epsilon() * value.abs().max(T::min_positive_value()) * lit(segments.len() as f64) {
                return Ok(Quadrature {
                    value,
                    abs_error: error,
                    intervals: segments.len(),
                });
            }
            return Err(Error::Numerical(format!(
                "quadrature on [{a}, {b}] did not converge: value {value}, error {error}"
            )));
        }
        let worst = segments
            .iter()
            .enumerate()
            .fold(
                (0usize, -T::one()),
                |(bi, be), (i, s)| if s.error > be { (i, s.error) } else { (bi, be) },
            )
            .0;
        let seg = segments.swap_remove(worst);
        let mid = (seg.a + seg.b) * lit(0.5);
        if mid <= seg.a || mid >= seg.b {
            // Interval exhausted at machine precision; keep its estimate.
            segments.push(Segment { error: T::zero(), ..seg });
            continue;
        }
        segments.push(gk15(&f, seg.a, mid));
        segments.push(gk15(&f, mid, seg.b));
    }
}

/// Integrates `f` over `[a, ∞)` through the map `u = a + t / (1 - t)`.
pub fn integrate_to_infinity<T: Real, F: Fn(T) -> T>(f: F, a: T, opts: &QuadOptions<T>) -> Result<Quadrature<T>> {
    let one = T::one();
    let g = |t: T| {
        if t >= one {
            return T::zero();
        }
        let s = one - t;
        let v = f(a + t / s) / (s * s);
        if v.is_finite() {
            v
        } else {
            T::zero()
        }
    };
    integrate(g, T::zero(), one, opts)
}
