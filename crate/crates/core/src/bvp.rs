//! Finite-difference solver for `(1/2) φ'' = v φ` with `φ'(±∞) = ±1`.
//!
//! The potential is replaced by its average on each cell of a uniform grid
//! over `[-M, M]`. On a cell the equation is then solved exactly by
//! hyperbolic functions, and matching `φ'` across nodes gives a symmetric
//! tridiagonal system (second order in general, exact for potentials that are
//! constant between nodes). Neumann data `φ'(±M) = ±1` close the system, which
//! is solved by the Thomas algorithm. The same cell solutions interpolate
//! between nodes; outside `[-M, M]` the table is extended with slope `±1`.

use serde::Serialize;

use crate::error::{config, Error, Result};
use crate::functions::Potential;
use crate::scalar::{lit, Real};
use crate::special::quadrature::{integrate, QuadOptions};

/// Tail mass `∫_{|x|>M} (1+|x|) v` above which the truncation is rejected.
pub const TAIL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KacSolution<T> {
    pub half_width: T,
    pub step: T,
    /// `φ` at the nodes `-M + j h`, `j = 0..=n`.
    pub values: Vec<T>,
    /// `√(2 v̄)` on each interval between nodes, for interpolation.
    rates: Vec<T>,
    /// `∫_{-M}^{x_j} dy / φ(y)²`.
    cumulative: Vec<T>,
    /// `C_v = ∫_ℝ dy / φ(y)²`.
    pub c_v: T,
}

/// Solves the Kac boundary-value problem on `[-M, M]` with `n` intervals.
pub fn solve_kac<T: Real>(potential: &Potential<T>, half_width: T, intervals: usize) -> Result<KacSolution<T>> {
    potential.validate()?;
    if !(half_width > T::zero() && half_width.is_finite()) {
        return config(format!("truncation M must be positive, got {half_width}"));
    }
    if intervals < 4 {
        return config("the BVP grid needs at least 4 intervals");
    }
    let tail = tail_mass(potential, half_width)?;
    if tail > lit(TAIL_TOLERANCE) {
        return config(format!("truncation M = {half_width} leaves potential mass {tail} outside [-M, M]"));
    }
    let n = intervals;
    let h = lit::<T>(2.0) * half_width / T::from_usize_lossy(n);
    let node = |j: usize| -half_width + h * T::from_usize_lossy(j);

    // per cell: rate k = √(2 v̄), coupling s = k / sinh(kh), excess k·tanh(kh/2)
    let rates: Vec<T> = (0..n)
        .map(|j| (lit::<T>(2.0) * potential.integral(node(j), node(j + 1)) / h).sqrt())
        .collect();
    let coupling: Vec<T> = rates
        .iter()
        .map(|&k| if k * h < lit(1e-6) { T::one() / h } else { k / (k * h).sinh() })
        .collect();
    let excess: Vec<T> = rates.iter().map(|&k| k * (k * h * lit(0.5)).tanh()).collect();

    // flux continuity at interior nodes, flux = ∓1 at the ends
    let mut diag = vec![T::zero(); n + 1];
    let mut lower = vec![T::zero(); n + 1];
    let mut upper = vec![T::zero(); n + 1];
    let mut rhs = vec![T::zero(); n + 1];
    for j in 0..n {
        diag[j] = diag[j] + coupling[j] + excess[j];
        diag[j + 1] = diag[j + 1] + coupling[j] + excess[j];
        upper[j] = -coupling[j];
        lower[j + 1] = -coupling[j];
    }
    rhs[0] = T::one();
    rhs[n] = T::one();
    let values = thomas(&lower, &diag, &upper, &rhs)?;
    if values.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "BVP solution is not positive and finite (min {:?}); refine the grid",
            values.iter().cloned().fold(T::infinity(), T::min)
        )));
    }

    let mut sol = KacSolution {
        half_width,
        step: h,
        values,
        rates,
        cumulative: Vec::with_capacity(n + 1),
        c_v: T::zero(),
    };
    let mut acc = T::zero();
    sol.cumulative.push(acc);
    for j in 0..n {
        acc = acc + sol.inverse_square_integral(j, node(j), node(j + 1));
        sol.cumulative.push(acc);
    }
    sol.c_v = acc + T::one() / sol.values[0] + T::one() / sol.values[n];
    Ok(sol)
}

fn tail_mass<T: Real>(potential: &Potential<T>, m: T) -> Result<T> {
    let (lo, hi) = potential.support();
    let opts = QuadOptions::new(lit(1e-14), lit(1e-10));
    let weighted = |x: T| (T::one() + x.abs()) * potential.eval(x);
    let mut tail = T::zero();
    if lo < -m {
        tail = tail + integrate(weighted, lo, -m, &opts)?.value;
    }
    if hi > m {
        tail = tail + integrate(weighted, m, hi, &opts)?.value;
    }
    Ok(tail)
}

fn thomas<T: Real>(lower: &[T], diag: &[T], upper: &[T], rhs: &[T]) -> Result<Vec<T>> {
    let n = diag.len();
    let mut c = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    let scale = diag.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    let tiny = scale * T::epsilon() * T::epsilon();
    let mut pivot = diag[0];
    for i in 0..n {
        if i > 0 {
            pivot = diag[i] - lower[i] * c[i - 1];
        }
        if pivot.abs() <= tiny || !pivot.is_finite() {
            return Err(Error::Numerical(format!(
                "singular BVP system: pivot {pivot} at row {i} of {n} (is the potential identically zero?)"
            )));
        }
        c[i] = upper[i] / pivot;
        d[i] = (rhs[i] - if i > 0 { lower[i] * d[i - 1] } else { T::zero() }) / pivot;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] = x[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

impl<T: Real> KacSolution<T> {
    pub fn intervals(&self) -> usize {
        self.values.len() - 1
    }

    pub fn node(&self, j: usize) -> T {
        -self.half_width + self.step * T::from_usize_lossy(j)
    }

    fn locate(&self, x: T) -> (usize, T) {
        let r = ((x + self.half_width) / self.step).floor();
        let j = r.to_usize().unwrap_or(0).min(self.intervals() - 1);
        (j, x - self.node(j))
    }

    /// Interpolated `φ_v(x)` inside cell `j` at offset `s` from its left node.
    fn cell_value(&self, j: usize, s: T) -> T {
        let (a, b) = (self.values[j], self.values[j + 1]);
        let h = self.step;
        let kh = self.rates[j] * h;
        if kh < lit(1e-6) {
            return a + (b - a) * s / h;
        }
        let k = self.rates[j];
        (a * (k * (h - s)).sinh() + b * (k * s).sinh()) / kh.sinh()
    }

    pub fn eval(&self, x: T) -> T {
        let m = self.half_width;
        if x >= m {
            return self.values[self.intervals()] + (x - m);
        }
        if x <= -m {
            return self.values[0] + (-m - x);
        }
        let (j, s) = self.locate(x);
        self.cell_value(j, s)
    }

    /// Simpson's rule for `∫ dy/φ²` over part of cell `j`.
    fn inverse_square_integral(&self, j: usize, a: T, b: T) -> T {
        let base = self.node(j);
        let g = |x: T| {
            let p = self.cell_value(j, x - base);
            T::one() / (p * p)
        };
        let mid = (a + b) * lit(0.5);
        (b - a) / lit(6.0) * (g(a) + lit::<T>(4.0) * g(mid) + g(b))
    }

    /// `∫_x^∞ dy / φ_v(y)²`.
    pub fn upper_tail(&self, x: T) -> T {
        let m = self.half_width;
        let n = self.intervals();
        let right = T::one() / self.values[n];
        if x >= m {
            return T::one() / (self.values[n] + (x - m));
        }
        let inner_total = self.cumulative[n];
        if x <= -m {
            let left_piece = T::one() / self.values[0] - T::one() / (self.values[0] + (-m - x));
            return left_piece + inner_total + right;
        }
        let (j, _) = self.locate(x);
        let partial = self.inverse_square_integral(j, self.node(j), x);
        inner_total - self.cumulative[j] - partial + right
    }

    /// `P^{Kac,v}_x(X → -∞) = (1/C_v) ∫_x^∞ dy/φ_v(y)²`.
    pub fn probability_minus_infinity(&self, x: T) -> T {
        self.upper_tail(x) / self.c_v
    }

    /// `max |(1/2)φ'' − vφ|` over interior nodes at which `v` is continuous,
    /// together with `max |vφ|` there.
    pub fn ode_residual(&self, potential: &Potential<T>) -> (T, T) {
        let h = self.step;
        let breaks = potential.breakpoints();
        let near_break = |x: T| breaks.iter().any(|b| (x - *b).abs() < h * lit(1.5));
        let mut worst = T::zero();
        let mut scale = T::zero();
        for j in 1..self.intervals() {
            let x = self.node(j);
            if near_break(x) {
                continue;
            }
            let second = (self.values[j - 1] - lit::<T>(2.0) * self.values[j] + self.values[j + 1]) / (h * h);
            let vp = potential.eval(x) * self.values[j];
            worst = worst.max((second * lit(0.5) - vp).abs());
            scale = scale.max(vp.abs());
        }
        (worst, scale)
    }
}
