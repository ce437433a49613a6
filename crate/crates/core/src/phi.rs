//! Invariant functions φ^Γ, one per weight family.

use serde::{Deserialize, Serialize};

use crate::bvp::{solve_kac, KacSolution};
use crate::error::{config, Error, Result};
use crate::functions::{Potential, WeightFn};
use crate::scalar::{lit, Real};
use crate::special::langevin::{langevin_h, langevin_h_barrier, langevin_h_dx};
use crate::special::quadrature::{integrate, integrate_to_infinity, QuadOptions};
use crate::stable::StableParams;
use crate::state::{Model, ModelState};
use crate::weights::WeightSpec;

/// `(y − x) + (1/f(y)) ∫_y^{y0} f`.
pub fn phi_sup_brownian<T: Real>(f: &WeightFn<T>, y0: T, state: &ModelState<T>) -> Result<T> {
    let (x, y) = (state.position(), state.supremum());
    if y > y0 {
        return Err(Error::Domain(format!("supremum {y} exceeds the threshold {y0}")));
    }
    Ok((y - x) + f.tail_ratio(y, y0)?)
}

/// `|x| + (1/f(l)) ∫_l^{l0} f`.
pub fn phi_lt_brownian<T: Real>(f: &WeightFn<T>, l0: T, state: &ModelState<T>) -> Result<T> {
    let (x, l) = (state.position(), state.local_time());
    if l > l0 {
        return Err(Error::Domain(format!("local time {l} exceeds the threshold {l0}")));
    }
    Ok(x.abs() + f.tail_ratio(l, l0)?)
}

/// `e^{-√(2λ) x}/√(2λ)` for `x ≥ 0`, `1/√(2λ) − x` for `x < 0`.
pub fn phi_hev<T: Real>(lambda: T, state: &ModelState<T>) -> Result<T> {
    if !(lambda > T::zero()) {
        return config(format!("Heaviside rate λ must be positive, got {lambda}"));
    }
    let k = (lit::<T>(2.0) * lambda).sqrt();
    let x = state.position();
    Ok(if x >= T::zero() { (-k * x).exp() / k } else { T::one() / k - x })
}

/// Kac invariant function on a grid of `intervals` cells over `[-M, M]`.
pub fn phi_kac_solve<T: Real>(v: &Potential<T>, half_width: T, intervals: usize) -> Result<PhiFn<T>> {
    let solution = solve_kac(v, half_width, intervals)?;
    Ok(PhiFn {
        spec: WeightSpec::KacV { potential: v.clone() },
        rule: PhiRule::Kac(Box::new(solution)),
    })
}

/// `h(−a, −b)` for the Langevin state `(b, a, y)` with `y < 0`.
pub fn phi_langevin_a<T: Real>(state: &ModelState<T>) -> Result<T> {
    if !(state.supremum() < T::zero()) {
        return Err(Error::Domain("φ^A needs the running supremum of X^A to be negative".into()));
    }
    langevin_h(-state.integral(), -state.velocity())
}

/// `h(y − a, −b) + (1/f(y)) ∫_y^{y0} f(w) ∂h/∂x(w − a, −b) dw`.
pub fn phi_langevin_sup<T: Real>(f: &WeightFn<T>, y0: T, state: &ModelState<T>) -> Result<T> {
    if y0 > T::zero() {
        return config(format!("domain: y₀ must be ≤ 0 (got {y0})"));
    }
    let (b, a, y) = (state.velocity(), state.integral(), state.supremum());
    if y > y0 {
        return Err(Error::Domain(format!("supremum {y} exceeds the threshold {y0}")));
    }
    let gap = y - a;
    let head = if gap > T::zero() {
        langevin_h(gap, -b)?
    } else {
        langevin_h_barrier(-b)
    };
    if matches!(f, WeightFn::Constant) {
        // ∫ ∂h/∂x telescopes
        let top = y0 - a;
        return Ok(if top > T::zero() { langevin_h(top, -b)? } else { head });
    }
    if y == y0 {
        return Ok(head);
    }
    // x = w − a = s⁶ tames the x^{-5/6} behaviour of ∂h/∂x at the barrier
    let six = lit::<T>(6.0);
    let sixth = T::one() / six;
    let integrand = |s: T| {
        let x = s.powi(6);
        match langevin_h_dx(x, -b) {
            Ok(d) => f.ratio(a + x, y) * d * six * s.powi(5),
            Err(_) => T::nan(),
        }
    };
    let q = integrate(integrand, gap.powf(sixth), (y0 - a).powf(sixth), &QuadOptions::default())?;
    if !q.value.is_finite() {
        return Err(Error::Numerical("Langevin sup integral is not finite".into()));
    }
    Ok(head + q.value)
}

/// `(y − x)^{αρ} + (αρ/f(y)) ∫_y^{y0} f(u) (u − x)^{αρ−1} du`.
pub fn phi_stable_sup<T: Real>(p: &StableParams<T>, f: &WeightFn<T>, y0: T, state: &ModelState<T>) -> Result<T> {
    let (x, y) = (state.position(), state.supremum());
    if y > y0 {
        return Err(Error::Domain(format!("supremum {y} exceeds the threshold {y0}")));
    }
    let ar = p.alpha_rho();
    let head = (y - x).powf(ar);
    if matches!(f, WeightFn::Constant) {
        // the integral telescopes to (y0 − x)^{αρ} − (y − x)^{αρ}
        return Ok((y0 - x).powf(ar));
    }
    if y == y0 {
        return Ok(head);
    }
    // w = (u − x)^{αρ} absorbs the factor αρ (u − x)^{αρ−1}
    let inv = T::one() / ar;
    let g = |w: T| f.ratio(x + w.powf(inv), y);
    let opts = QuadOptions::default();
    let tail = match f {
        WeightFn::Tabulated { table } => {
            let top = y0.min(table.last());
            let mut cuts: Vec<T> = table.args.iter().copied().filter(|u| *u > y && *u < top).collect();
            cuts.insert(0, y);
            cuts.push(top);
            let mut total = T::zero();
            for c in cuts.windows(2) {
                total = total + integrate(g, (c[0] - x).powf(ar), (c[1] - x).powf(ar), &opts)?.value;
            }
            total
        }
        _ if y0.is_infinite() => integrate_to_infinity(g, head, &opts)?.value,
        _ => integrate(g, head, (y0 - x).powf(ar), &opts)?.value,
    };
    Ok(head + tail)
}

/// `C (1 − β sgn x) |x|^{α−1} + (1/f(l)) ∫_l^{l0} f`.
pub fn phi_stable_lt<T: Real>(p: &StableParams<T>, constant: T, f: &WeightFn<T>, l0: T, state: &ModelState<T>) -> Result<T> {
    if !(constant > T::zero() && constant.is_finite()) {
        return config(format!("the stable local-time constant must be positive, got {constant}"));
    }
    let (x, l) = (state.position(), state.local_time());
    if l > l0 {
        return Err(Error::Domain(format!("local time {l} exceeds the threshold {l0}")));
    }
    let sign = if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    };
    let position = if x == T::zero() {
        T::zero()
    } else {
        constant * (T::one() - p.beta * sign) * x.abs().powf(p.alpha - T::one())
    };
    Ok(position + f.tail_ratio(l, l0)?)
}

/// `ρ = P(Z_1 > 0)` for the stable law with parameters `p`.
pub fn positivity_parameter<T: Real>(p: &StableParams<T>) -> T {
    p.positivity_parameter()
}

/// How a [`PhiFn`] is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PhiRule<T> {
    SupBrownian,
    LtBrownian,
    Kac(Box<KacSolution<T>>),
    Heaviside,
    AvoidZero,
    StayNegativeB,
    LangevinA,
    LangevinSup,
    StableSup {
        params: StableParams<T>,
    },
    /// `constant` is the calibrated `C_{α,β}` (or its closed form for the
    /// occupation-density normalisation).
    StableLt {
        params: StableParams<T>,
        constant: T,
    },
}

/// Settings needed to build φ for weights that are not plain closed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiOptions<T> {
    #[serde(default)]
    pub stable: Option<StableParams<T>>,
    /// `C_{α,β}` for stable local-time weights; the occupation-density value
    /// is used when absent.
    #[serde(default)]
    pub stable_lt_constant: Option<T>,
    pub kac_half_width: T,
    pub kac_intervals: usize,
}

impl<T: Real> Default for PhiOptions<T> {
    fn default() -> Self {
        Self {
            stable: None,
            stable_lt_constant: None,
            kac_half_width: lit(10.0),
            kac_intervals: 10_000,
        }
    }
}

/// φ^Γ bound to its weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiFn<T> {
    pub spec: WeightSpec<T>,
    pub rule: PhiRule<T>,
}

impl<T: Real> PhiFn<T> {
    pub fn build(spec: &WeightSpec<T>, opts: &PhiOptions<T>) -> Result<Self> {
        spec.validate()?;
        let stable = || {
            opts.stable
                .ok_or_else(|| Error::Config("stable weights need stable parameters".into()))
        };
        let rule = match (spec, spec.model()) {
            (WeightSpec::SupF { .. }, Model::Brownian) => PhiRule::SupBrownian,
            (WeightSpec::SupF { .. }, Model::Langevin) => PhiRule::LangevinSup,
            (WeightSpec::SupF { .. }, Model::Stable) => {
                let params = stable()?;
                spec.validate_stable(&params)?;
                PhiRule::StableSup { params }
            }
            (WeightSpec::LtF { .. }, Model::Brownian) => PhiRule::LtBrownian,
            (WeightSpec::LtF { .. }, _) => {
                let params = stable()?;
                let constant = opts.stable_lt_constant.unwrap_or_else(|| params.occupation_local_time_constant());
                if !(constant > T::zero()) {
                    return config(format!("the stable local-time constant must be positive, got {constant}"));
                }
                PhiRule::StableLt { params, constant }
            }
            (WeightSpec::KacV { potential }, _) => {
                return phi_kac_solve(potential, opts.kac_half_width, opts.kac_intervals);
            }
            (WeightSpec::HevLambda { .. }, _) => PhiRule::Heaviside,
            (WeightSpec::AvoidZero, _) => PhiRule::AvoidZero,
            (WeightSpec::StayNegativeA, _) => PhiRule::LangevinA,
            (WeightSpec::StayNegativeB { .. }, _) => PhiRule::StayNegativeB,
        };
        Ok(Self { spec: spec.clone(), rule })
    }

    pub fn model(&self) -> Model {
        self.spec.model()
    }

    /// Whether the rule relies on a calibrated rather than exact constant.
    pub fn is_calibrated(&self) -> bool {
        matches!(self.rule, PhiRule::StableLt { .. })
    }

    /// φ(state); a domain error outside `S^Γ`.
    pub fn eval(&self, state: &ModelState<T>) -> Result<T> {
        if !self.spec.membership(state)? {
            return Err(Error::Domain(format!(
                "state {:?} is outside the domain of {}",
                state.coords,
                self.spec.name()
            )));
        }
        match (&self.rule, &self.spec) {
            (PhiRule::SupBrownian, WeightSpec::SupF { f, threshold, .. }) => phi_sup_brownian(f, *threshold, state),
            (PhiRule::LtBrownian, WeightSpec::LtF { f, threshold, .. }) => phi_lt_brownian(f, *threshold, state),
            (PhiRule::Kac(sol), _) => Ok(sol.eval(state.position())),
            (PhiRule::Heaviside, WeightSpec::HevLambda { lambda }) => phi_hev(*lambda, state),
            (PhiRule::AvoidZero, _) => Ok(state.position().abs()),
            (PhiRule::StayNegativeB, _) => Ok(-state.position()),
            (PhiRule::LangevinA, _) => phi_langevin_a(state),
            (PhiRule::LangevinSup, WeightSpec::SupF { f, threshold, .. }) => phi_langevin_sup(f, *threshold, state),
            (PhiRule::StableSup { params }, WeightSpec::SupF { f, threshold, .. }) => phi_stable_sup(params, f, *threshold, state),
            (PhiRule::StableLt { params, constant }, WeightSpec::LtF { f, threshold, .. }) => {
                phi_stable_lt(params, *constant, f, *threshold, state)
            }
            _ => Err(Error::Usage("φ rule does not match its weight".into())),
        }
    }

    /// φ from raw coordinates, for the hot loops of ensemble code.
    #[inline]
    pub fn eval_coords(&self, coords: [T; 3]) -> Result<T> {
        self.eval(&ModelState {
            model: self.model(),
            coords,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::hypergeometric_u;
    use proptest::prelude::*;

    type S = ModelState<f64>;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn sup_brownian_examples() {
        let s = S::brownian(-2.0, -0.5, 0.0);
        assert!(close(phi_sup_brownian(&WeightFn::Constant, 0.0, &s).unwrap(), 2.0, 1e-15));
        let e = WeightFn::exp_decay(1.0).unwrap();
        let s = S::brownian(-0.7, 0.4, 0.0);
        assert!(close(phi_sup_brownian(&e, f64::INFINITY, &s).unwrap(), 0.4 + 0.7 + 1.0, 1e-15));
        // fresh maximum: only the integral term remains
        let s = S::brownian(0.4, 0.4, 0.0);
        assert!(close(phi_sup_brownian(&e, 2.0, &s).unwrap(), 1.0 - (-1.6f64).exp(), 1e-14));
        assert!(phi_sup_brownian(&WeightFn::Constant, 0.0, &S::brownian(-1.0, 0.1, 0.0)).is_err());
        // no underflow far up the supremum axis
        let s = S::brownian(900.0, 900.0, 0.0);
        assert_eq!(phi_sup_brownian(&e, f64::INFINITY, &s).unwrap(), 1.0);
    }

    #[test]
    fn lt_brownian_examples() {
        let e = WeightFn::exp_decay(1.0).unwrap();
        assert_eq!(phi_lt_brownian(&e, f64::INFINITY, &S::brownian(0.0, 0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(
            phi_lt_brownian(&WeightFn::Constant, 0.0, &S::brownian(-1.5, 0.0, 0.0)).unwrap(),
            1.5
        );
        assert_eq!(phi_lt_brownian(&e, 2.0, &S::brownian(0.3, 0.3, 2.0)).unwrap(), 0.3);
    }

    #[test]
    fn heaviside_examples() {
        assert_eq!(phi_hev(0.5, &S::brownian(0.0, 0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(phi_hev(0.5, &S::brownian(-1.0, 0.0, 0.0)).unwrap(), 2.0);
        let k = 3f64.sqrt();
        assert!(close(phi_hev(1.5, &S::brownian(1e-12, 0.0, 0.0)).unwrap(), 1.0 / k, 1e-11));
        assert!(close(phi_hev(1.5, &S::brownian(-1e-12, 0.0, 0.0)).unwrap(), 1.0 / k, 1e-11));
        assert!(phi_hev(0.0, &S::brownian(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn langevin_a_examples() {
        // velocity towards the barrier: z = 6 on the damped branch
        let v = phi_langevin_a(&S::langevin(3.0, -1.0, -0.5)).unwrap();
        let expected = 3f64.sqrt() / 6.0 * 6f64.powf(1.0 / 6.0) * hypergeometric_u(7.0 / 6.0, 4.0 / 3.0, 6.0).unwrap() * (-6.0f64).exp();
        assert!(close(v, expected, 1e-12));
        // velocity away from it
        let v = phi_langevin_a(&S::langevin(-3.0, -1.0, -0.5)).unwrap();
        let expected = 3f64.sqrt() * 6f64.powf(1.0 / 6.0) * hypergeometric_u(1.0 / 6.0, 4.0 / 3.0, 6.0).unwrap();
        assert!(close(v, expected, 1e-12));
        let axis = phi_langevin_a(&S::langevin(0.0, -1.0, -0.5)).unwrap();
        assert!(axis > 0.0 && axis.is_finite());
        assert!(phi_langevin_a(&S::langevin(-1.0, -1.0, 0.0)).is_err());
    }

    #[test]
    fn langevin_sup_examples() {
        let s = S::langevin(-0.4, -1.0, -0.6);
        let ind = phi_langevin_sup(&WeightFn::Constant, -0.2, &s).unwrap();
        assert!(close(ind, langevin_h(0.8, 0.4).unwrap(), 1e-14));
        // quadrature path agrees with the telescoped form for a flat table
        let flat = crate::functions::Table::new(vec![-5.0, 0.0], vec![1.0, 1.0]).unwrap();
        let tab = WeightFn::Tabulated { table: flat };
        let q = phi_langevin_sup(&tab, -0.2, &s).unwrap();
        assert!(close(q, ind, 1e-7), "{q} vs {ind}");
        // monotone f: φ ≥ h(y − a, −b) and φ ≤ sup f · h(y0 − a, −b) / f(y)
        let e = WeightFn::exp_decay(1.0).unwrap();
        let v = phi_langevin_sup(&e, -0.2, &s).unwrap();
        let lower = langevin_h(0.4, 0.4).unwrap();
        let upper = (0.6f64).exp() * langevin_h(0.8, 0.4).unwrap();
        assert!(v >= lower && v <= upper, "{lower} {v} {upper}");
        assert!(phi_langevin_sup(&e, 0.1, &s).unwrap_err().to_string().contains("y₀ must be ≤ 0"));
    }

    #[test]
    fn stable_sup_examples() {
        let p = StableParams::new(1.5, 0.0, 1.0).unwrap();
        let s = S::stable(-2.0, -0.5, 0.0);
        assert!(close(
            phi_stable_sup(&p, &WeightFn::Constant, 0.0, &s).unwrap(),
            2f64.powf(0.75),
            1e-14
        ));
        // indicator telescoping reproduced by quadrature with a flat table
        let flat = crate::functions::Table::new(vec![-5.0, 0.0], vec![1.0, 1.0]).unwrap();
        let q = phi_stable_sup(&p, &WeightFn::Tabulated { table: flat }, 0.0, &s).unwrap();
        assert!(close(q, 2f64.powf(0.75), 1e-9), "{q}");
        // fresh maximum with exponential f: αρ ∫_0^∞ e^{-v} v^{αρ-1} dv = Γ(1 + αρ)
        let e = WeightFn::exp_decay(1.0).unwrap();
        let v = phi_stable_sup(&p, &e, f64::INFINITY, &S::stable(0.3, 0.3, 0.0)).unwrap();
        assert!(close(v, crate::special::gamma(1.75), 1e-8), "{v}");
        let p1 = StableParams::new(1.5, 1.0, 1.0).unwrap();
        assert!(close(p1.alpha_rho(), 0.5, 1e-14));
        assert!(close(positivity_parameter(&p1), 1.0 / 3.0, 1e-14));
    }

    #[test]
    fn stable_lt_examples() {
        let p = StableParams::new(1.5, 0.0, 1.0).unwrap();
        let e = WeightFn::exp_decay(1.0).unwrap();
        assert_eq!(phi_stable_lt(&p, 0.8, &e, f64::INFINITY, &S::stable(0.0, 0.0, 0.0)).unwrap(), 1.0);
        let a = phi_stable_lt(&p, 0.8, &e, f64::INFINITY, &S::stable(1.7, 1.7, 0.2)).unwrap();
        let b = phi_stable_lt(&p, 0.8, &e, f64::INFINITY, &S::stable(-1.7, 0.0, 0.2)).unwrap();
        assert_eq!(a, b);
        let p1 = StableParams::new(1.5, 1.0, 1.0).unwrap();
        assert_eq!(phi_stable_lt(&p1, 0.8, &e, f64::INFINITY, &S::stable(2.0, 2.0, 0.0)).unwrap(), 1.0);
        assert!(phi_stable_lt(&p, 0.0, &e, f64::INFINITY, &S::stable(1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn build_dispatch_and_domain_errors() {
        let spec = WeightSpec::sup_f(Model::Brownian, WeightFn::Constant, 0.0).unwrap();
        let phi = PhiFn::build(&spec, &PhiOptions::default()).unwrap();
        assert_eq!(phi.eval(&S::brownian(-2.0, -1.0, 0.0)).unwrap(), 2.0);
        assert!(matches!(phi.eval(&S::brownian(-2.0, 1.0, 0.0)), Err(Error::Domain(_))));
        let stable_spec = WeightSpec::lt_f(Model::Stable, WeightFn::exp_decay(1.0).unwrap(), f64::INFINITY).unwrap();
        assert!(PhiFn::build(&stable_spec, &PhiOptions::default()).is_err());
        let opts = PhiOptions {
            stable: Some(StableParams::new(1.5, 0.0, 1.0).unwrap()),
            ..PhiOptions::default()
        };
        let phi = PhiFn::build(&stable_spec, &opts).unwrap();
        assert!(phi.is_calibrated());
        let kac = PhiFn::build(
            &WeightSpec::kac(Potential::boxed(1.0, 1.0).unwrap()).unwrap(),
            &PhiOptions::default(),
        )
        .unwrap();
        let k = 2f64.sqrt();
        assert!(close(kac.eval(&S::brownian(0.0, 0.0, 0.0)).unwrap(), 1.0 / (k * k.sinh()), 1e-10));
    }

    fn all_phis() -> Vec<PhiFn<f64>> {
        let e = || WeightFn::exp_decay(1.0).unwrap();
        let stable = StableParams::new(1.5, 0.5, 1.0).unwrap();
        let opts = PhiOptions {
            stable: Some(stable),
            kac_intervals: 2000,
            ..PhiOptions::default()
        };
        vec![
            WeightSpec::sup_f(Model::Brownian, e(), f64::INFINITY).unwrap(),
            WeightSpec::sup_f(Model::Brownian, WeightFn::Constant, 1.0).unwrap(),
            WeightSpec::lt_f(Model::Brownian, e(), f64::INFINITY).unwrap(),
            WeightSpec::kac(Potential::boxed(1.0, 1.0).unwrap()).unwrap(),
            WeightSpec::heaviside(0.5).unwrap(),
            WeightSpec::AvoidZero,
            WeightSpec::StayNegativeB { model: Model::Brownian },
            WeightSpec::StayNegativeB { model: Model::Langevin },
            WeightSpec::StayNegativeA,
            WeightSpec::sup_f(Model::Langevin, WeightFn::Constant, 0.0).unwrap(),
            WeightSpec::sup_f(Model::Stable, e(), f64::INFINITY).unwrap(),
            WeightSpec::sup_f(Model::Stable, WeightFn::Constant, 0.0).unwrap(),
            WeightSpec::lt_f(Model::Stable, e(), 3.0).unwrap(),
        ]
        .iter()
        .map(|s| PhiFn::build(s, &opts).unwrap())
        .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn phi_positive_on_domain(x in -5.0f64..5.0, gap in 0.0f64..3.0, l in 0.0f64..3.0) {
            let phis = all_phis();
            for phi in &phis {
                let state = match phi.model() {
                    Model::Langevin => S::langevin(x.clamp(-2.0, 2.0), -0.2 - gap - l, -0.2 - l),
                    m => S { model: m, coords: [x, x + gap, l] },
                };
                if phi.spec.membership(&state).unwrap() {
                    let v = phi.eval(&state).unwrap();
                    prop_assert!(v > 0.0 && v.is_finite(), "{} at {:?}: {}", phi.spec.name(), state.coords, v);
                } else {
                    prop_assert!(phi.eval(&state).is_err());
                }
            }
        }
    }
}
