//! Host-level functions used by weights: the penalisation function `f` of
//! supremum/local-time weights and the Kac potential `v`.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::scalar::{lit, Real};
use crate::special::quadrature::{integrate, QuadOptions};

/// Piecewise-linear function through `(args[i], values[i])`, constant to the
/// left of the first node and zero to the right of the last one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable<T>", bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct Table<T> {
    pub args: Vec<T>,
    pub values: Vec<T>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable<T> {
    args: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> TryFrom<RawTable<T>> for Table<T> {
    type Error = crate::error::Error;

    fn try_from(raw: RawTable<T>) -> Result<Self> {
        Table::new(raw.args, raw.values)
    }
}

impl<T: Real> Table<T> {
    pub fn new(args: Vec<T>, values: Vec<T>) -> Result<Self> {
        if args.len() < 2 || args.len() != values.len() {
            return config("a tabulated function needs at least two (arg, value) rows of equal length");
        }
        if args.windows(2).any(|w| !(w[1] > w[0])) {
            return config("tabulated arguments must be strictly increasing");
        }
        if values.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return config("tabulated values must be finite and nonnegative");
        }
        Ok(Self { args, values })
    }

    /// Parses two-column `arg,value` CSV text; a non-numeric first row is a header.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut args = Vec::new();
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let (Some(a), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
                return config(format!("line {}: expected two columns 'arg,value'", i + 1));
            };
            match (a.parse::<f64>(), v.parse::<f64>()) {
                (Ok(a), Ok(v)) => {
                    args.push(lit(a));
                    values.push(lit(v));
                }
                _ if args.is_empty() && i == 0 => continue,
                _ => return config(format!("line {}: non-numeric entry", i + 1)),
            }
        }
        Self::new(args, values)
    }

    pub fn first(&self) -> T {
        self.args[0]
    }

    pub fn last(&self) -> T {
        *self.args.last().expect("non-empty table")
    }

    pub fn eval(&self, u: T) -> T {
        if u <= self.args[0] {
            return self.values[0];
        }
        if u > self.last() {
            return T::zero();
        }
        let i = self.args.partition_point(|&a| a < u).max(1);
        let (a0, a1) = (self.args[i - 1], self.args[i]);
        let w = (u - a0) / (a1 - a0);
        self.values[i - 1] + w * (self.values[i] - self.values[i - 1])
    }

    /// Exact integral of the interpolant over `[a, b]` within the table range.
    fn integral_inside(&self, a: T, b: T) -> T {
        let mut total = T::zero();
        let nodes = self.args.len();
        for i in 1..nodes {
            let (lo, hi) = (self.args[i - 1].max(a), self.args[i].min(b));
            if hi > lo {
                total = total + (hi - lo) * (self.eval(lo) + self.eval(hi)) * lit(0.5);
            }
        }
        total
    }
}

/// Nonnegative function `f` entering `f(aggregate_t) / f(aggregate_0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    rename_all = "snake_case",
    deny_unknown_fields,
    bound(deserialize = "T: Real + Deserialize<'de>")
)]
pub enum WeightFn<T> {
    /// `f(u) = exp(-rate · u)`.
    ExpDecay {
        rate: T,
    },
    /// `f ≡ 1` (an indicator once combined with the threshold).
    Constant,
    Tabulated {
        table: Table<T>,
    },
}

impl<T: Real> WeightFn<T> {
    pub fn exp_decay(rate: T) -> Result<Self> {
        if !(rate > T::zero() && rate.is_finite()) {
            return config(format!("exp-decay rate must be positive, got {rate}"));
        }
        Ok(WeightFn::ExpDecay { rate })
    }

    pub fn eval(&self, u: T) -> T {
        match self {
            WeightFn::ExpDecay { rate } => (-*rate * u).exp(),
            WeightFn::Constant => T::one(),
            WeightFn::Tabulated { table } => table.eval(u),
        }
    }

    /// `∫_a^b f(u) du` for `a ≤ b`, where `b` may be `+∞`.
    pub fn integral(&self, a: T, b: T) -> Result<T> {
        if b < a {
            return Err(Error::Domain(format!("integral bounds reversed: [{a}, {b}]")));
        }
        if a == b {
            return Ok(T::zero());
        }
        match self {
            WeightFn::ExpDecay { rate } => {
                let tail = if b.is_infinite() { T::zero() } else { (-*rate * b).exp() };
                Ok(((-*rate * a).exp() - tail) / *rate)
            }
            WeightFn::Constant => {
                if b.is_infinite() {
                    config("a constant weight function needs a finite threshold to be integrable")
                } else {
                    Ok(b - a)
                }
            }
            WeightFn::Tabulated { table } => {
                let mut total = T::zero();
                // constant extension to the left of the first node
                if a < table.first() {
                    total = total + table.values[0] * (b.min(table.first()) - a);
                }
                Ok(total + table.integral_inside(a, b.min(table.last())))
            }
        }
    }

    /// `f(u) / f(base)`; the exponential built-in uses the difference of
    /// arguments so the ratio never underflows.
    pub fn ratio(&self, u: T, base: T) -> T {
        match self {
            WeightFn::ExpDecay { rate } => (-*rate * (u - base)).exp(),
            WeightFn::Constant => T::one(),
            WeightFn::Tabulated { table } => table.eval(u) / table.eval(base),
        }
    }

    /// `(1/f(a)) ∫_a^b f(u) du`, computed without forming `f(a)` for the
    /// exponential built-in (which would underflow for large `a`).
    pub fn tail_ratio(&self, a: T, b: T) -> Result<T> {
        match self {
            WeightFn::ExpDecay { rate } => {
                let decay = if b.is_infinite() { T::zero() } else { (-*rate * (b - a)).exp() };
                Ok((T::one() - decay) / *rate)
            }
            _ => {
                let fa = self.eval(a);
                if !(fa > T::zero()) {
                    return Err(Error::Domain(format!("weight function vanishes at {a}")));
                }
                Ok(self.integral(a, b)? / fa)
            }
        }
    }

    /// Whether `f` is nonincreasing on `(-∞, upto]`.
    pub fn is_nonincreasing(&self, upto: T) -> bool {
        match self {
            WeightFn::ExpDecay { .. } | WeightFn::Constant => true,
            WeightFn::Tabulated { table } => table
                .args
                .iter()
                .zip(table.values.iter())
                .take_while(|(a, _)| **a <= upto)
                .map(|(_, v)| *v)
                .collect::<Vec<_>>()
                .windows(2)
                .all(|w| w[1] <= w[0]),
        }
    }

    /// Checks `f > 0` up to `threshold` and that `∫_u^threshold f` is finite
    /// for every finite `u`.
    pub fn validate_threshold(&self, threshold: T) -> Result<()> {
        if threshold.is_nan() {
            return config("weight threshold is NaN");
        }
        match self {
            WeightFn::ExpDecay { rate } if !(*rate > T::zero() && rate.is_finite()) => {
                config(format!("exp-decay rate must be positive, got {rate}"))
            }
            WeightFn::Constant if threshold.is_infinite() => config("a constant weight function needs a finite threshold to be integrable"),
            WeightFn::Tabulated { table } => {
                if threshold.is_infinite() || threshold > table.last() {
                    return config("tabulated weight function must cover its threshold (threshold <= last node)");
                }
                let positive = table
                    .args
                    .iter()
                    .zip(&table.values)
                    .filter(|(a, _)| **a <= threshold)
                    .all(|(_, v)| *v > T::zero())
                    && table.eval(threshold) > T::zero();
                if positive {
                    Ok(())
                } else {
                    config("tabulated weight function must be positive up to its threshold")
                }
            }
            _ => Ok(()),
        }
    }
}

/// Kac killing potential `v ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    rename_all = "snake_case",
    deny_unknown_fields,
    bound(deserialize = "T: Real + Deserialize<'de>")
)]
pub enum Potential<T> {
    /// `v(x) = height · 1{|x| ≤ half_width}`.
    Box {
        height: T,
        half_width: T,
    },
    Tabulated {
        table: Table<T>,
    },
}

impl<T: Real> Potential<T> {
    pub fn boxed(height: T, half_width: T) -> Result<Self> {
        let v = Potential::Box { height, half_width };
        v.validate()?;
        Ok(v)
    }

    pub fn eval(&self, x: T) -> T {
        match self {
            Potential::Box { height, half_width } => {
                if x.abs() <= *half_width {
                    *height
                } else {
                    T::zero()
                }
            }
            Potential::Tabulated { table } => {
                if x < table.first() {
                    T::zero()
                } else {
                    table.eval(x)
                }
            }
        }
    }

    /// Smallest interval containing the support.
    pub fn support(&self) -> (T, T) {
        match self {
            Potential::Box { half_width, .. } => (-*half_width, *half_width),
            Potential::Tabulated { table } => (table.first(), table.last()),
        }
    }

    /// Points where `v` may jump; quadrature splits there.
    pub fn breakpoints(&self) -> Vec<T> {
        match self {
            Potential::Box { half_width, .. } => vec![-*half_width, *half_width],
            Potential::Tabulated { table } => table.args.clone(),
        }
    }

    /// `∫ v(x) dx` over `[a, b]`, exact for the built-in shapes.
    pub fn integral(&self, a: T, b: T) -> T {
        match self {
            Potential::Box { height, half_width } => {
                let lo = a.max(-*half_width);
                let hi = b.min(*half_width);
                if hi > lo {
                    *height * (hi - lo)
                } else {
                    T::zero()
                }
            }
            Potential::Tabulated { table } => table.integral_inside(a.max(table.first()), b.min(table.last())),
        }
    }

    /// `∫ (1 + |x|) v(x) dx`; quadrature between breakpoints for tables.
    pub fn weighted_mass(&self) -> Result<T> {
        match self {
            Potential::Box { height, half_width } => Ok(*height * (lit::<T>(2.0) * *half_width + *half_width * *half_width)),
            Potential::Tabulated { table } => {
                let opts = QuadOptions::new(lit(1e-12), lit(1e-10));
                let mut pts = table.args.clone();
                if pts[0] < T::zero() && *pts.last().expect("non-empty") > T::zero() {
                    pts.push(T::zero());
                    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite nodes"));
                    pts.dedup();
                }
                let mut total = T::zero();
                for w in pts.windows(2) {
                    total = total + integrate(|x: T| (T::one() + x.abs()) * self.eval(x), w[0], w[1], &opts)?.value;
                }
                Ok(total)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Potential::Box { height, half_width } = self {
            if !(*height >= T::zero() && height.is_finite() && *half_width >= T::zero() && half_width.is_finite()) {
                return config("box potential needs finite nonnegative height and half-width");
            }
        }
        let mass = self.weighted_mass()?;
        if !(mass > T::zero()) {
            return config("Kac potential must satisfy 0 < ∫(1+|x|) v(x) dx; got a vanishing potential");
        }
        if !mass.is_finite() {
            return config("Kac potential is not integrable against (1+|x|)");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_decay_integral() {
        let f = WeightFn::exp_decay(1.0f64).unwrap();
        assert!((f.integral(0.5, f64::INFINITY).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!((f.integral(0.0, 1.0).unwrap() - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn constant_requires_finite_threshold() {
        let f = WeightFn::<f64>::Constant;
        assert!(f.integral(0.0, f64::INFINITY).is_err());
        assert_eq!(f.integral(-2.0, 0.0).unwrap(), 2.0);
    }

    #[test]
    fn table_parse_and_interpolate() {
        let t = Table::<f64>::from_csv_str("arg,value\n0,2\n1,1\n3,0.5\n").unwrap();
        assert_eq!(t.eval(-1.0), 2.0);
        assert!((t.eval(0.5) - 1.5).abs() < 1e-15);
        assert!((t.eval(2.0) - 0.75).abs() < 1e-15);
        assert_eq!(t.eval(3.5), 0.0);
        let f = WeightFn::Tabulated { table: t };
        assert!((f.integral(0.0, 3.0).unwrap() - (1.5 + 1.5)).abs() < 1e-14);
        assert!((f.integral(-1.0, 1.0).unwrap() - (2.0 + 1.5)).abs() < 1e-14);
        assert!(f.is_nonincreasing(3.0));
        assert!(Table::<f64>::from_csv_str("0,1\n0,2\n").is_err());
        assert!(Table::<f64>::from_csv_str("0,1,2\n").is_err());
    }

    #[test]
    fn box_potential_mass() {
        let v = Potential::boxed(1.0f64, 1.0).unwrap();
        // ∫_{-1}^{1} (1+|x|) dx = 3
        assert!((v.weighted_mass().unwrap() - 3.0).abs() < 1e-14);
        assert!(Potential::boxed(0.0f64, 1.0).is_err());
        assert!(Potential::boxed(1.0f64, 0.0).is_err());
    }

    #[test]
    fn tabulated_potential_mass() {
        let t = Table::<f64>::new(vec![-1.0, 0.0, 1.0], vec![0.0, 2.0, 0.0]).unwrap();
        let v = Potential::Tabulated { table: t };
        // ∫ (1+|x|)·2(1-|x|) over [-1,1] = 2·2·∫_0^1 (1 - x²) dx = 8/3
        assert!((v.weighted_mass().unwrap() - 8.0 / 3.0).abs() < 1e-9);
    }
}
