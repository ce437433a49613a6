//! Multiplicative weights Γ as functionals of grid paths.
//!
//! All weights are evaluated incrementally by [`WeightTracker`], which is fed
//! one grid step at a time. Path-level helpers replay a [`PathSample`] through
//! the same tracker, so streamed ensembles and stored paths agree bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{config, usage, Result};
use crate::functions::{Potential, WeightFn};
use crate::paths::{PathSample, State};
use crate::scalar::{lit, Real};
use crate::special::quadrature::{integrate, integrate_to_infinity, QuadOptions};
use crate::stable::StableParams;
use crate::state::{Model, ModelState};

/// The seven weight families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    rename_all = "snake_case",
    deny_unknown_fields,
    bound(deserialize = "T: Real + Deserialize<'de>")
)]
pub enum WeightSpec<T> {
    /// `Γ_t = f(X^sup_t)/f(X^sup_0) · 1{X^sup_t ≤ y0}`.
    SupF { model: Model, f: WeightFn<T>, threshold: T },
    /// `Γ_t = f(L_t)/f(L_0) · 1{L_t ≤ l0}`.
    LtF { model: Model, f: WeightFn<T>, threshold: T },
    /// `Γ_t = exp(-∫_0^t v(X_s) ds)`.
    KacV { potential: Potential<T> },
    /// `Γ_t = exp(-λ ∫_0^t 1{X_s > 0} ds)`.
    HevLambda { lambda: T },
    /// Langevin: the integral `X^A` stays in `(-∞, 0)`.
    StayNegativeA,
    /// The velocity (Langevin) or position (Brownian) stays in `(-∞, 0)`.
    StayNegativeB { model: Model },
    /// Brownian: `1{τ_0 > t}`.
    AvoidZero,
}

impl<T: Real> WeightSpec<T> {
    pub fn sup_f(model: Model, f: WeightFn<T>, threshold: T) -> Result<Self> {
        let spec = WeightSpec::SupF { model, f, threshold };
        spec.validate()?;
        Ok(spec)
    }

    pub fn lt_f(model: Model, f: WeightFn<T>, threshold: T) -> Result<Self> {
        let spec = WeightSpec::LtF { model, f, threshold };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kac(potential: Potential<T>) -> Result<Self> {
        let spec = WeightSpec::KacV { potential };
        spec.validate()?;
        Ok(spec)
    }

    pub fn heaviside(lambda: T) -> Result<Self> {
        let spec = WeightSpec::HevLambda { lambda };
        spec.validate()?;
        Ok(spec)
    }

    pub fn model(&self) -> Model {
        match self {
            WeightSpec::SupF { model, .. } | WeightSpec::LtF { model, .. } | WeightSpec::StayNegativeB { model } => *model,
            WeightSpec::KacV { .. } | WeightSpec::HevLambda { .. } | WeightSpec::AvoidZero => Model::Brownian,
            WeightSpec::StayNegativeA => Model::Langevin,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightSpec::SupF { .. } => "sup_f",
            WeightSpec::LtF { .. } => "lt_f",
            WeightSpec::KacV { .. } => "kac_v",
            WeightSpec::HevLambda { .. } => "hev_lambda",
            WeightSpec::StayNegativeA => "stay_negative_a",
            WeightSpec::StayNegativeB { .. } => "stay_negative_b",
            WeightSpec::AvoidZero => "avoid_zero",
        }
    }

    /// Whether Γ only takes the values 0 and 1.
    pub fn is_indicator(&self) -> bool {
        match self {
            WeightSpec::SupF { f, .. } | WeightSpec::LtF { f, .. } => matches!(f, WeightFn::Constant),
            WeightSpec::KacV { .. } | WeightSpec::HevLambda { .. } => false,
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WeightSpec::SupF { model, f, threshold } => {
                if *model == Model::Langevin && *threshold > T::zero() {
                    return config(format!("domain: y₀ must be ≤ 0 (got {threshold})"));
                }
                f.validate_threshold(*threshold)
            }
            WeightSpec::LtF { model, f, threshold } => {
                if *model == Model::Langevin {
                    return config("lt_f is defined for the brownian and stable models only");
                }
                if !(*threshold >= T::zero()) {
                    return config(format!("local-time threshold l₀ must be ≥ 0, got {threshold}"));
                }
                f.validate_threshold(*threshold)
            }
            WeightSpec::KacV { potential } => potential.validate(),
            WeightSpec::HevLambda { lambda } => {
                if *lambda > T::zero() && lambda.is_finite() {
                    Ok(())
                } else {
                    config(format!("Heaviside rate λ must be positive, got {lambda}"))
                }
            }
            WeightSpec::StayNegativeB { model } if *model == Model::Stable => {
                config("stay_negative_b is defined for the brownian and langevin models only")
            }
            _ => Ok(()),
        }
    }

    /// Stable supremum weights additionally need `f` nonincreasing and
    /// `∫_0^{y0} y^{αρ-1} f(y) dy < ∞`.
    pub fn validate_stable(&self, params: &StableParams<T>) -> Result<()> {
        let WeightSpec::SupF { f, threshold, .. } = self else {
            return Ok(());
        };
        if !f.is_nonincreasing(*threshold) {
            return config("stable supremum penalisation needs a nonincreasing f");
        }
        if *threshold <= T::zero() {
            return Ok(());
        }
        // w = y^{αρ} removes the endpoint singularity
        let ar = params.alpha_rho();
        let g = |w: T| f.eval(w.powf(T::one() / ar)) / ar;
        let opts = QuadOptions::default();
        let value = if threshold.is_infinite() {
            integrate_to_infinity(g, T::zero(), &opts)
        } else {
            integrate(g, T::zero(), threshold.powf(ar), &opts)
        };
        match value {
            Ok(q) if q.value.is_finite() => Ok(()),
            _ => config("stable supremum weight: ∫_0^{y0} y^{αρ-1} f(y) dy does not converge"),
        }
    }

    fn check_model(&self, model: Model) -> Result<()> {
        if self.model() == model {
            Ok(())
        } else {
            usage(format!("weight {} expects the {} model, got {}", self.name(), self.model(), model))
        }
    }

    /// Whether `state` lies in the domain `S^Γ`.
    pub fn membership(&self, state: &ModelState<T>) -> Result<bool> {
        self.check_model(state.model)?;
        Ok(match self {
            WeightSpec::SupF { threshold, .. } => state.supremum() <= *threshold,
            WeightSpec::LtF { threshold, .. } => state.local_time() <= *threshold,
            WeightSpec::KacV { .. } | WeightSpec::HevLambda { .. } => true,
            WeightSpec::StayNegativeA => state.supremum() < T::zero(),
            WeightSpec::StayNegativeB { .. } => state.position() < T::zero(),
            WeightSpec::AvoidZero => state.position() != T::zero(),
        })
    }
}

/// Incremental evaluator of Γ along one path.
#[derive(Debug, Clone)]
pub struct WeightTracker<'a> {
    spec: &'a WeightSpec<f64>,
    dt: f64,
    /// Initial aggregate (supremum or local time) for sup/lt weights.
    base: f64,
    /// Running exponent for Kac/Heaviside weights.
    exponent: f64,
    alive: bool,
}

impl<'a> WeightTracker<'a> {
    pub fn start(spec: &'a WeightSpec<f64>, x0: &State, dt: f64) -> Result<Self> {
        let alive = spec.membership(x0)?;
        let (base, positive) = match spec {
            WeightSpec::SupF { f, .. } => (x0.supremum(), f.eval(x0.supremum()) > 0.0),
            WeightSpec::LtF { f, .. } => (x0.local_time(), f.eval(x0.local_time()) > 0.0),
            _ => (0.0, true),
        };
        Ok(Self {
            spec,
            dt,
            base,
            exponent: 0.0,
            alive: alive && positive,
        })
    }

    pub fn alive(&self) -> bool {
        self.alive
    }

    /// Accounts for the step `prev → next`; `touched` reports whether the
    /// monitored line coordinate hit zero during the step.
    #[inline]
    pub fn advance(&mut self, prev: &[f64; 3], next: &[f64; 3], touched: bool) {
        if !self.alive {
            return;
        }
        match self.spec {
            WeightSpec::SupF { model, threshold, .. } => {
                let y = if *model == Model::Langevin { next[2] } else { next[1] };
                self.alive = y <= *threshold;
            }
            WeightSpec::LtF { threshold, .. } => self.alive = next[2] <= *threshold,
            WeightSpec::KacV { potential } => {
                self.exponent += self.dt * potential.eval(prev[0]);
            }
            WeightSpec::HevLambda { lambda } => {
                if prev[0] > 0.0 {
                    self.exponent += lambda * self.dt;
                }
            }
            WeightSpec::StayNegativeA => self.alive = next[2] < 0.0,
            WeightSpec::StayNegativeB { .. } => self.alive = !touched && next[0] < 0.0,
            WeightSpec::AvoidZero => self.alive = !touched && next[0] != 0.0,
        }
    }

    /// Γ at the current state.
    #[inline]
    pub fn value(&self, current: &[f64; 3]) -> f64 {
        if !self.alive {
            return 0.0;
        }
        match self.spec {
            WeightSpec::SupF { model, f, .. } => {
                let y = if *model == Model::Langevin { current[2] } else { current[1] };
                f.ratio(y, self.base)
            }
            WeightSpec::LtF { f, .. } => f.ratio(current[2], self.base),
            WeightSpec::KacV { .. } | WeightSpec::HevLambda { .. } => (-self.exponent).exp(),
            _ => 1.0,
        }
    }
}

/// Γ at every grid time of `path`.
pub fn weight_series(spec: &WeightSpec<f64>, path: &PathSample) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(path.len());
    replay(spec, path, path.steps, |_, g| out.push(g))?;
    Ok(out)
}

fn replay<F: FnMut(usize, f64)>(spec: &WeightSpec<f64>, path: &PathSample, upto: usize, mut visit: F) -> Result<()> {
    let x0 = path.initial();
    let mut tracker = WeightTracker::start(spec, &x0, path.dt)?;
    let mut prev = x0.coords;
    visit(0, tracker.value(&prev));
    for k in 1..=upto {
        let next = path.state(k).coords;
        tracker.advance(&prev, &next, path.zero_touch[k]);
        visit(k, tracker.value(&next));
        prev = next;
    }
    Ok(())
}

/// Γ_t on `path`, `t` a grid time.
pub fn evaluate_weight(spec: &WeightSpec<f64>, path: &PathSample, t: f64) -> Result<f64> {
    let k = path.index_of(t)?;
    let mut last = 0.0;
    replay(spec, path, k, |_, g| last = g)?;
    Ok(last)
}

/// `Γ_t − Γ_s · (Γ_{t−s} ∘ θ_s)` with the shifted path's aggregates re-based at `s`.
pub fn multiplicativity_residual(spec: &WeightSpec<f64>, path: &PathSample, s: f64, t: f64) -> Result<f64> {
    let ks = path.index_of(s)?;
    let kt = path.index_of(t)?;
    if kt < ks {
        return usage(format!("need s ≤ t, got s = {s}, t = {t}"));
    }
    let shifted = path.shifted(ks)?;
    let later = evaluate_weight(spec, &shifted, shifted.time(kt - ks))?;
    Ok(evaluate_weight(spec, path, t)? - evaluate_weight(spec, path, s)? * later)
}

/// Grid index of the exit from `S^Γ`, if it happens within the horizon.
pub fn exit_index(spec: &WeightSpec<f64>, path: &PathSample) -> Result<Option<usize>> {
    let mut first = None;
    replay(spec, path, path.steps, |k, g| {
        if first.is_none() && g == 0.0 {
            first = Some(k);
        }
    })?;
    Ok(first)
}

/// First grid time outside `S^Γ`, or `+∞` if the path never leaves.
pub fn exit_time(spec: &WeightSpec<f64>, path: &PathSample) -> Result<f64> {
    Ok(exit_index(spec, path)?.map_or(f64::INFINITY, |k| path.time(k)))
}

/// Brownian `sup_f` with `f(y) = exp(-rate·y)` and `y0 = +∞`.
pub fn exp_sup_brownian<T: Real>(rate: f64) -> Result<WeightSpec<T>> {
    WeightSpec::sup_f(Model::Brownian, WeightFn::exp_decay(lit(rate))?, T::infinity())
}
