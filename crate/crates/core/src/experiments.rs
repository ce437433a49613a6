//! Penalisation limit experiments and verification suites.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::measure::{build_penalised_ensemble, phi_or_zero, EnsembleConfig, ParticleSystem};
use crate::paths::{Dynamics, State, TimeGrid};
use crate::phi::{PhiFn, PhiRule};
use crate::rng::{exp1, keyed_rng, Domain};
use crate::state::Model;
use crate::stats::{bootstrap_survival_counts, survival_slope, MCEstimate, Moments};
use crate::weights::{WeightSpec, WeightTracker};

/// Deterministic normaliser `ρ(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum Normaliser {
    /// `√(πt/2)` (Brownian local time).
    SqrtPiTOver2,
    /// `t^ρ / k` (stable supremum).
    StablePower { rho: f64, k: f64 },
    /// `c₁ t^{1/4}` (Langevin).
    Langevin { c1: f64 },
    /// `c t^p`.
    Power { c: f64, exponent: f64 },
}

impl Normaliser {
    pub fn eval(&self, t: f64) -> f64 {
        let (c, p) = self.power();
        c * t.powf(p)
    }

    /// `(c, p)` with `ρ(t) = c t^p`.
    pub fn power(&self) -> (f64, f64) {
        match *self {
            Normaliser::SqrtPiTOver2 => ((PI / 2.0).sqrt(), 0.5),
            Normaliser::StablePower { rho, k } => (1.0 / k, rho),
            Normaliser::Langevin { c1 } => (c1, 0.25),
            Normaliser::Power { c, exponent } => (c, exponent),
        }
    }

    /// A power law `c t^p` tends to infinity and satisfies `ρ(t)/ρ(t−s) → 1`
    /// exactly when `c > 0` and `p > 0`.
    pub fn validate(&self) -> Result<()> {
        let (c, p) = self.power();
        if !(c > 0.0 && c.is_finite() && p > 0.0 && p.is_finite()) {
            return config(format!("normaliser c·t^p needs c > 0 and p > 0, got c = {c}, p = {p}"));
        }
        Ok(())
    }
}

/// Rate normaliser `r(q) = c_r q^p` with `p < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateNormaliser {
    pub c: f64,
    pub exponent: f64,
}

impl RateNormaliser {
    /// `c_r q^{1/α − 1}`.
    pub fn stable(c: f64, alpha: f64) -> Self {
        Self {
            c,
            exponent: 1.0 / alpha - 1.0,
        }
    }

    pub fn eval(&self, q: f64) -> f64 {
        self.c * q.powf(self.exponent)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite() && self.exponent < 0.0) {
            return config(format!(
                "rate normaliser c·q^p needs c > 0 and p < 0 so that r(q) → ∞ as q ↓ 0, got c = {}, p = {}",
                self.c, self.exponent
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClockSpec {
    Constant { normaliser: Normaliser },
    Exponential { rates: Vec<f64>, normaliser: RateNormaliser },
}

impl ClockSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ClockSpec::Constant { normaliser } => normaliser.validate(),
            ClockSpec::Exponential { rates, normaliser } => {
                normaliser.validate()?;
                if rates.is_empty() || rates.iter().any(|q| !(*q > 0.0 && q.is_finite())) {
                    return config("exponential clock rates must be positive");
                }
                if rates.windows(2).any(|w| w[1] >= w[0]) {
                    return config("exponential clock rates must be strictly decreasing");
                }
                Ok(())
            }
        }
    }
}

/// Formats with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// One grid point of a convergence experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergencePoint {
    pub quantity: String,
    pub grid: f64,
    pub estimate: MCEstimate,
    pub reference: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub name: String,
    /// `"t"` or `"q"`.
    pub grid_label: String,
    pub points: Vec<ConvergencePoint>,
    /// Log–log slope of the normalised quantity against the grid.
    pub slope: Option<MCEstimate>,
    pub flags: Vec<String>,
}

impl ConvergenceReport {
    pub const HEADER: [&'static str; 8] = ["quantity", "grid", "estimate", "se", "n", "n_eff", "reference", "pass"];

    pub fn rows(&self) -> Vec<Vec<String>> {
        self.points
            .iter()
            .map(|p| {
                vec![
                    p.quantity.clone(),
                    fmt17(p.grid),
                    fmt17(p.estimate.mean),
                    fmt17(p.estimate.se),
                    p.estimate.n.to_string(),
                    fmt17(p.estimate.n_eff),
                    fmt17(p.reference),
                    p.pass.to_string(),
                ]
            })
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.points.iter().all(|p| p.pass)
    }

    pub fn quantity(&self, name: &str) -> impl Iterator<Item = &ConvergencePoint> {
        let name = name.to_string();
        self.points.iter().filter(move |p| p.quantity == name)
    }
}

/// `|estimate − reference| ≤ max(k·SE, rel·|reference|)`.
pub fn agrees(e: &MCEstimate, reference: f64, k: f64, rel: f64) -> bool {
    (e.mean - reference).abs() <= (k * e.se).max(rel * reference.abs())
}

/// Richardson combination `2·fine − coarse` for an O(h) bias.
pub fn richardson(coarse: &MCEstimate, fine: &MCEstimate) -> MCEstimate {
    MCEstimate::new(
        2.0 * fine.mean - coarse.mean,
        (4.0 * fine.se * fine.se + coarse.se * coarse.se).sqrt(),
        fine.n.min(coarse.n),
        fine.n_eff.min(coarse.n_eff),
    )
}

/// Weighted least-squares slope of `ln y` on `ln x`, using `(se/mean)²` as
/// the variance of `ln y`.
pub fn log_log_slope(x: &[f64], y: &[MCEstimate]) -> MCEstimate {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|e| e.mean.ln()).collect();
    let w: Vec<f64> = y
        .iter()
        .map(|e| {
            let r = e.se / e.mean;
            if r > 0.0 {
                1.0 / (r * r)
            } else {
                1.0
            }
        })
        .collect();
    let sw: f64 = w.iter().sum();
    let mx = lx.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = ly.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = lx.iter().zip(&w).map(|(a, b)| b * (a - mx) * (a - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).zip(&w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    let n = y.iter().map(|e| e.n).min().unwrap_or(0);
    MCEstimate::new(sxy / sxx, (1.0 / sxx).sqrt(), n, n as f64)
}

/// Ratio `Σa / Σb` with its delta-method standard error.
fn ratio_estimate(a: &[f64], b: &[f64]) -> Option<MCEstimate> {
    let n = a.len();
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if !(sb > 0.0) {
        return None;
    }
    let r = sa / sb;
    let mut acc = Moments::default();
    a.iter().zip(b).for_each(|(x, y)| acc.push(x - r * y));
    let mb = sb / n as f64;
    Some(MCEstimate::new(r, (acc.variance() / n as f64).sqrt() / mb, n as u64, n as f64))
}

/// Unweighted paths tracking Γ, with states and Γ stored at `times`.
struct Raw {
    states: Vec<Vec<[f64; 3]>>,
    gammas: Vec<Vec<f64>>,
}

fn raw_paths(spec: &WeightSpec<f64>, x0: &State, times: &[f64], dynamics: Dynamics, n: usize, seed: u64) -> Result<Raw> {
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let grid = TimeGrid::new(horizon.max(dynamics.dt()), dynamics.dt())?;
    let steps: Vec<usize> = times.iter().map(|t| grid.index_of(*t)).collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by_key(|&j| steps[j]);
    let mut sys = ParticleSystem::new(dynamics, x0, &[spec], n, seed, Domain::Path, 0)?;
    let mut out = Raw {
        states: vec![Vec::new(); times.len()],
        gammas: vec![Vec::new(); times.len()],
    };
    for j in order {
        sys.advance_to(steps[j]);
        out.states[j] = sys.states();
        out.gammas[j] = sys.gammas(0);
    }
    Ok(out)
}

fn start_phi(spec: &WeightSpec<f64>, phi: &PhiFn<f64>, x0: &State) -> Result<f64> {
    if phi.spec != *spec {
        return Err(Error::Usage(format!(
            "φ was built for {} but the weight is {}",
            phi.spec.name(),
            spec.name()
        )));
    }
    if !spec.membership(x0)? {
        return Err(Error::Domain(format!(
            "start state {:?} is outside the domain of {}",
            x0.coords,
            spec.name()
        )));
    }
    phi.eval(x0)
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleRow {
    pub x0: [f64; 3],
    pub t: f64,
    pub estimate: MCEstimate,
    pub reference: f64,
    pub pass: bool,
    /// Same estimate with the step halved (and any bandwidth scaled by 1/√2).
    pub halved: Option<MCEstimate>,
    /// `|d(Δ/2)| ≤ max(|d(Δ)|, 3·SE(Δ/2))` for the discrepancies `d`.
    pub shrinks: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub weight: String,
    pub dt: f64,
    pub rows: Vec<MartingaleRow>,
}

impl MartingaleReport {
    pub const HEADER: [&'static str; 10] = ["x", "y", "l", "t", "estimate", "se", "n", "reference", "pass", "shrinks"];

    pub fn rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    fmt17(r.x0[0]),
                    fmt17(r.x0[1]),
                    fmt17(r.x0[2]),
                    fmt17(r.t),
                    fmt17(r.estimate.mean),
                    fmt17(r.estimate.se),
                    r.estimate.n.to_string(),
                    fmt17(r.reference),
                    r.pass.to_string(),
                    r.shrinks.map_or(String::new(), |b| b.to_string()),
                ]
            })
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass && r.shrinks != Some(false))
    }
}

/// `E[Γ_t φ(X_t)]` against `φ(x₀)` for every start and time, optionally
/// repeated with the step halved.
#[allow(clippy::too_many_arguments)]
pub fn martingale_identity_suite(
    spec: &WeightSpec<f64>,
    phi: &PhiFn<f64>,
    starts: &[State],
    times: &[f64],
    dynamics: Dynamics,
    n: usize,
    seed: u64,
    halving: bool,
) -> Result<MartingaleReport> {
    let estimate = |x0: &State, dynamics: Dynamics| -> Result<Vec<MCEstimate>> {
        let raw = raw_paths(spec, x0, times, dynamics, n, seed)?;
        (0..times.len())
            .map(|j| {
                let mut acc = Moments::default();
                for (g, s) in raw.gammas[j].iter().zip(&raw.states[j]) {
                    acc.push(if *g == 0.0 { 0.0 } else { g * phi_or_zero(phi, *s)? });
                }
                Ok(acc.estimate())
            })
            .collect()
    };
    let fine = if halving {
        Some(dynamics.with_dt(dynamics.dt() / 2.0, FRAC_1_SQRT_2)?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for x0 in starts {
        let reference = start_phi(spec, phi, x0)?;
        let coarse = estimate(x0, dynamics)?;
        let halved = fine.map(|d| estimate(x0, d)).transpose()?;
        for (j, &t) in times.iter().enumerate() {
            let e = coarse[j];
            let h = halved.as_ref().map(|v| v[j]);
            rows.push(MartingaleRow {
                x0: x0.coords,
                t,
                estimate: e,
                reference,
                pass: e.within(reference, 3.0),
                halved: h,
                shrinks: h.map(|h| (h.mean - reference).abs() <= (e.mean - reference).abs().max(3.0 * h.se)),
            });
        }
    }
    Ok(MartingaleReport {
        weight: spec.name().into(),
        dt: dynamics.dt(),
        rows,
    })
}

/// Reference for the functional ratio: either a known value or the weighted
/// ensemble estimate of `E^Γ[F_s]`.
#[derive(Debug, Clone, Copy)]
pub enum RatioReference {
    Known(f64),
    Ensemble,
}

/// `ρ(t)·E[Γ_t]` against `φ(x₀)` and `E[F_s Γ_t]/E[Γ_t]` against `E^Γ[F_s]`
/// over `t_grid`. Normalised points pass within `max(3 SE, rel_tol)`; ratio
/// points within `max(3 SE, rel_tol)` as well.
#[allow(clippy::too_many_arguments)]
pub fn constant_clock_limit<F>(
    spec: &WeightSpec<f64>,
    phi: &PhiFn<f64>,
    normaliser: Normaliser,
    x0: &State,
    functional: F,
    s: f64,
    t_grid: &[f64],
    reference: RatioReference,
    rel_tol: f64,
    dynamics: Dynamics,
    n: usize,
    seed: u64,
) -> Result<ConvergenceReport>
where
    F: Fn(&[f64; 3]) -> f64,
{
    normaliser.validate()?;
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return config("t grid must be non-empty and strictly increasing");
    }
    if !(s >= 0.0 && s < t_grid[0]) {
        return config(format!("need 0 ≤ s < min t, got s = {s}"));
    }
    let phi_x0 = start_phi(spec, phi, x0)?;
    let mut times = vec![s];
    times.extend_from_slice(t_grid);
    let raw = raw_paths(spec, x0, &times, dynamics, n, seed)?;
    let fs: Vec<f64> = raw.states[0].iter().map(&functional).collect();
    let fref = match reference {
        RatioReference::Known(v) => v,
        RatioReference::Ensemble => {
            let mut acc = Moments::default();
            for ((g, st), f) in raw.gammas[0].iter().zip(&raw.states[0]).zip(&fs) {
                acc.push(if *g == 0.0 { 0.0 } else { f * g * phi_or_zero(phi, *st)? / phi_x0 });
            }
            acc.mean
        }
    };
    let mut points = Vec::new();
    let mut flags = Vec::new();
    let mut norms = Vec::new();
    for (j, &t) in t_grid.iter().enumerate() {
        let g = &raw.gammas[j + 1];
        let e = MCEstimate::from_values(g).scaled(normaliser.eval(t));
        norms.push(e);
        points.push(ConvergencePoint {
            quantity: "normalised".into(),
            grid: t,
            estimate: e,
            reference: phi_x0,
            pass: agrees(&e, phi_x0, 3.0, rel_tol),
        });
        let a: Vec<f64> = fs.iter().zip(g).map(|(f, g)| f * g).collect();
        match ratio_estimate(&a, g) {
            Some(r) => points.push(ConvergencePoint {
                quantity: "ratio".into(),
                grid: t,
                estimate: r,
                reference: fref,
                pass: agrees(&r, fref, 3.0, rel_tol),
            }),
            None => flags.push(format!("t = {t}: every path has Γ_t = 0")),
        }
    }
    let slope = (t_grid.len() > 1 && norms.iter().all(|e| e.mean > 0.0)).then(|| log_log_slope(t_grid, &norms));
    Ok(ConvergenceReport {
        name: format!("constant clock, {}", spec.name()),
        grid_label: "t".into(),
        points,
        slope,
        flags,
    })
}

/// Per-path outcome at an exponential horizon.
struct ClockSample {
    gamma: f64,
    f_after_s: f64,
    after_s: bool,
}

#[allow(clippy::too_many_arguments)]
fn clock_sample<F: Fn(&[f64; 3]) -> f64>(
    spec: &WeightSpec<f64>,
    x0: &State,
    dynamics: &Dynamics,
    q: f64,
    s_step: usize,
    functional: &F,
    seed: u64,
    stream: u64,
) -> Result<ClockSample> {
    let dt = dynamics.dt();
    let mut clock = keyed_rng(seed, Domain::Clock, stream, 0);
    let horizon = exp1(&mut clock) / q;
    let steps = (horizon / dt).round() as usize;
    let mut rng = keyed_rng(seed, Domain::Path, stream, 0);
    let mut tracker = WeightTracker::start(spec, x0, dt)?;
    let mut s = x0.coords;
    let mut f_s = if s_step == 0 { functional(&s) } else { 0.0 };
    for k in 0..steps {
        if !tracker.alive() {
            break;
        }
        let prev = s;
        let touched = dynamics.step(&mut s, &mut rng);
        tracker.advance(&prev, &s, touched);
        if k + 1 == s_step {
            f_s = functional(&s);
        }
    }
    Ok(ClockSample {
        gamma: tracker.value(&s),
        f_after_s: f_s,
        after_s: steps > s_step,
    })
}

/// `r(q)·E[Γ_{e(q)}]` against `φ(x₀)` and
/// `E[F_s Γ_{e(q)}; e(q) > s]/E[Γ_{e(q)}; e(q) > s]` against `E^Γ[F_s]`
/// over the decreasing rate grid. The exponential horizon is rounded to the
/// nearest grid time.
#[allow(clippy::too_many_arguments)]
pub fn exponential_clock_limit<F>(
    spec: &WeightSpec<f64>,
    phi: &PhiFn<f64>,
    clock: &ClockSpec,
    x0: &State,
    functional: F,
    s: f64,
    reference: RatioReference,
    rel_tol: f64,
    dynamics: Dynamics,
    n: usize,
    seed: u64,
) -> Result<ConvergenceReport>
where
    F: Fn(&[f64; 3]) -> f64 + Sync,
{
    clock.validate()?;
    let ClockSpec::Exponential { rates, normaliser } = clock else {
        return config("exponential_clock_limit needs an exponential clock");
    };
    let phi_x0 = start_phi(spec, phi, x0)?;
    let s_step = if s == 0.0 { 0 } else { TimeGrid::new(s, dynamics.dt())?.steps };
    let fref = match reference {
        RatioReference::Known(v) => v,
        RatioReference::Ensemble => {
            let cfg = EnsembleConfig::new(dynamics, s.max(dynamics.dt()), n, seed)
                .recording(&[s])
                .without_resampling()
                .streams_from((rates.len() * n) as u64);
            let ens = build_penalised_ensemble(spec, phi, x0, &cfg)?;
            let k = ens.index_of(s)?;
            ens.expectation(k, |i| functional(&ens.states[k][i])).mean
        }
    };
    let mut points = Vec::new();
    let mut flags = Vec::new();
    let mut norms = Vec::new();
    for (qi, &q) in rates.iter().enumerate() {
        let samples: Vec<ClockSample> = (0..n)
            .into_par_iter()
            .with_min_len(64)
            .map(|i| clock_sample(spec, x0, &dynamics, q, s_step, &functional, seed, (qi * n + i) as u64))
            .collect::<Result<_>>()?;
        let g: Vec<f64> = samples.iter().map(|c| c.gamma).collect();
        let e = MCEstimate::from_values(&g).scaled(normaliser.eval(q));
        norms.push(e);
        points.push(ConvergencePoint {
            quantity: "normalised".into(),
            grid: q,
            estimate: e,
            reference: phi_x0,
            pass: agrees(&e, phi_x0, 3.0, rel_tol),
        });
        let b: Vec<f64> = samples.iter().map(|c| if c.after_s { c.gamma } else { 0.0 }).collect();
        let a: Vec<f64> = samples.iter().zip(&b).map(|(c, b)| c.f_after_s * b).collect();
        match ratio_estimate(&a, &b) {
            Some(r) => points.push(ConvergencePoint {
                quantity: "ratio".into(),
                grid: q,
                estimate: r,
                reference: fref,
                pass: agrees(&r, fref, 3.0, rel_tol),
            }),
            None => flags.push(format!("q = {q}: every path has Γ = 0 after s")),
        }
    }
    let slope = (rates.len() > 1 && norms.iter().all(|e| e.mean > 0.0)).then(|| log_log_slope(rates, &norms));
    Ok(ConvergenceReport {
        name: format!("exponential clock, {}", spec.name()),
        grid_label: "q".into(),
        points,
        slope,
        flags,
    })
}

/// `c_r` rescaled so that `r(q)·E[Γ_{e(q)}] = φ(x₀)` at the smallest rate.
pub fn calibrate_rate_constant(report: &ConvergenceReport, normaliser: RateNormaliser) -> Option<f64> {
    let last = report.quantity("normalised").last()?;
    (last.estimate.mean > 0.0).then(|| normaliser.c * last.reference / last.estimate.mean)
}

/// `c` such that `c·t^p·E[Γ_t] = φ(x₀)` at the largest time, with its SE.
pub fn calibrate_power_constant(report: &ConvergenceReport, normaliser: Normaliser) -> Option<MCEstimate> {
    let last = report.quantity("normalised").last()?;
    let (c, _) = normaliser.power();
    let e = last.estimate;
    (e.mean > 0.0).then(|| {
        let v = c * last.reference / e.mean;
        MCEstimate::new(v, v * e.se / e.mean, e.n, e.n_eff)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PersistenceReport {
    pub x0: [f64; 3],
    pub dt: f64,
    pub n: usize,
    pub times: Vec<f64>,
    pub survivors: Vec<u64>,
    pub survival: Vec<MCEstimate>,
    pub slope: MCEstimate,
    /// `c₁` with `c₁ t^{1/4} P(τ^A > t) ≈ φ^A(x₀)` at the largest time.
    pub c1: Option<f64>,
    pub flags: Vec<String>,
}

impl PersistenceReport {
    pub const HEADER: [&'static str; 5] = ["t", "survivors", "n", "survival", "se"];

    pub fn rows(&self) -> Vec<Vec<String>> {
        self.times
            .iter()
            .zip(&self.survivors)
            .zip(&self.survival)
            .map(|((t, k), e)| vec![fmt17(*t), k.to_string(), self.n.to_string(), fmt17(e.mean), fmt17(e.se)])
            .collect()
    }
}

/// Log–log slope of `P(τ^A > t)` over `t_grid` for the integrated Brownian
/// motion started at `x₀ = (b, a, y)` with `a, y < 0`; the SE is bootstrapped.
pub fn persistence_exponent_langevin(
    x0: &State,
    t_grid: &[f64],
    dt: f64,
    n: usize,
    seed: u64,
    bootstrap: usize,
) -> Result<PersistenceReport> {
    if x0.model != Model::Langevin {
        return Err(Error::Usage("persistence needs a Langevin start state".into()));
    }
    if !(x0.coords[1] < 0.0 && x0.coords[2] < 0.0) {
        return Err(Error::Domain(format!("need a < 0 and y < 0, got {:?}", x0.coords)));
    }
    if t_grid.len() < 2 || t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] <= 0.0 {
        return config("persistence needs at least two increasing positive times");
    }
    let spec = WeightSpec::StayNegativeA;
    let dynamics = Dynamics::langevin(dt)?;
    let grid = TimeGrid::new(*t_grid.last().expect("non-empty"), dt)?;
    for t in t_grid {
        grid.index_of(*t)?;
    }
    let mut sys = ParticleSystem::new(dynamics, x0, &[&spec], n, seed, Domain::Path, 0)?;
    sys.advance_to(grid.steps);
    let exits: Vec<f64> = sys
        .particles
        .iter()
        .map(|p| {
            if p.exit_step[0] == u64::MAX {
                f64::INFINITY
            } else {
                p.exit_step[0] as f64 * dt
            }
        })
        .collect();
    let survivors: Vec<u64> = t_grid.iter().map(|t| exits.iter().filter(|e| **e > *t).count() as u64).collect();
    let mut flags = Vec::new();
    if survivors.iter().any(|k| *k < 100) {
        flags.push("fewer than 100 survivors at some time".into());
    }
    if survivors.contains(&0) {
        return Err(Error::Numerical("no survivors at some time; the slope is undefined".into()));
    }
    let reps = bootstrap_survival_counts(&exits, t_grid, bootstrap, seed);
    let slope = survival_slope(t_grid, &survivors, n as u64, &reps);
    let survival: Vec<MCEstimate> = survivors
        .iter()
        .map(|k| {
            let p = *k as f64 / n as f64;
            MCEstimate::new(p, (p * (1.0 - p) / n as f64).sqrt(), n as u64, n as f64)
        })
        .collect();
    let phi = crate::phi::phi_langevin_a(x0)?;
    let last = survival.last().expect("non-empty").mean;
    let c1 = Some(phi / (last * t_grid.last().expect("non-empty").powf(0.25)));
    Ok(PersistenceReport {
        x0: x0.coords,
        dt,
        n,
        times: t_grid.to_vec(),
        survivors,
        survival,
        slope,
        c1,
        flags,
    })
}

/// Limit probability `P^Γ(position → −∞)` where a closed form is known.
pub fn direction_reference(phi: &PhiFn<f64>, x0: &State) -> Result<Option<f64>> {
    let x = x0.position();
    Ok(match (&phi.rule, &phi.spec) {
        (PhiRule::LtBrownian, WeightSpec::LtF { f, threshold, .. }) => {
            let l = x0.local_time();
            let fl = f.eval(l);
            let tail = f.integral(l, *threshold)?;
            Some(((-x).max(0.0) * fl + 0.5 * tail) / (x.abs() * fl + tail))
        }
        (PhiRule::Kac(sol), _) => Some(sol.probability_minus_infinity(x)),
        (PhiRule::Heaviside, _)
        | (PhiRule::SupBrownian, _)
        | (PhiRule::StableSup { .. }, _)
        | (PhiRule::StayNegativeB, _)
        | (PhiRule::LangevinA, _)
        | (PhiRule::LangevinSup, _) => Some(1.0),
        (PhiRule::AvoidZero, _) => Some(if x < 0.0 { 1.0 } else { 0.0 }),
        (PhiRule::StableLt { params, .. }, _) if params.beta == 1.0 => Some(1.0),
        (PhiRule::StableLt { params, .. }, _) if params.beta == -1.0 => Some(0.0),
        _ => None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionReport {
    pub weight: String,
    pub horizon: f64,
    pub threshold: f64,
    /// Weighted `P^Γ(X_T < −K)`.
    pub below: MCEstimate,
    /// Weighted `P^Γ(X_T > K)`.
    pub above: MCEstimate,
    /// `below / (below + above)`: the split among paths beyond `±K`.
    pub split: Option<MCEstimate>,
    /// Closed-form `P^Γ(X → −∞)` when known.
    pub reference: Option<f64>,
    pub pass: Option<bool>,
    pub n_eff: f64,
    pub flags: Vec<String>,
}

/// Weighted exceedance beyond `±K` at the horizon against the limit
/// direction probabilities. The split among exceeding paths is graded
/// within 3 SE.
pub fn direction_statistics(
    spec: &WeightSpec<f64>,
    phi: &PhiFn<f64>,
    x0: &State,
    threshold: f64,
    cfg: &EnsembleConfig,
) -> Result<DirectionReport> {
    let ens = build_penalised_ensemble(spec, phi, x0, cfg)?;
    let k = ens.terminal();
    let pos = |i: usize| ens.states[k][i][0];
    let below_v: Vec<f64> = (0..ens.n)
        .map(|i| if pos(i) < -threshold { ens.weights[k][i] } else { 0.0 })
        .collect();
    let beyond: Vec<f64> = (0..ens.n)
        .map(|i| if pos(i).abs() > threshold { ens.weights[k][i] } else { 0.0 })
        .collect();
    let below = ens.expectation(k, |i| (pos(i) < -threshold) as u8 as f64);
    let above = ens.expectation(k, |i| (pos(i) > threshold) as u8 as f64);
    let split = ratio_estimate(&below_v, &beyond);
    let reference = direction_reference(phi, x0)?;
    let pass = match (split, reference) {
        (Some(s), Some(r)) => Some(s.within(r, 3.0) || (s.se == 0.0 && s.mean == r)),
        _ => None,
    };
    Ok(DirectionReport {
        weight: spec.name().into(),
        horizon: ens.horizon,
        threshold,
        below,
        above,
        split,
        reference,
        pass,
        n_eff: ens.n_eff[k],
        flags: ens.flags,
    })
}

/// Estimate of the stable local-time constant `C` from the martingale
/// identity at `x₀ = 0` with `f = e^{−l}`, `l₀ = ∞`:
/// `E[e^{−L_t}(C (1 − β sgn X_t)|X_t|^{α−1} + 1)] = 1`.
pub fn calibrate_stable_lt_constant(
    params: &crate::stable::StableParams<f64>,
    t: f64,
    dt: f64,
    bandwidth: f64,
    n: usize,
    seed: u64,
) -> Result<MCEstimate> {
    let dynamics = Dynamics::stable(params, dt, bandwidth)?;
    let spec = WeightSpec::lt_f(Model::Stable, crate::functions::WeightFn::exp_decay(1.0)?, f64::INFINITY)?;
    let raw = raw_paths(&spec, &State::stable(0.0, 0.0, 0.0), &[t], dynamics, n, seed)?;
    let a = params.alpha - 1.0;
    let shape: Vec<f64> = raw.gammas[0]
        .iter()
        .zip(&raw.states[0])
        .map(|(g, s)| g * (1.0 - params.beta * s[0].signum()) * s[0].abs().powf(a))
        .collect();
    let deficit: Vec<f64> = raw.gammas[0].iter().map(|g| 1.0 - g).collect();
    ratio_estimate(&deficit, &shape).ok_or_else(|| Error::Numerical("no paths kept any weight".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{Potential, WeightFn};
    use crate::paths::{LocalTimeScheme, SupremumScheme};
    use crate::phi::PhiOptions;

    fn bridge(dt: f64) -> Dynamics {
        Dynamics::brownian(dt, SupremumScheme::BrownianBridge, LocalTimeScheme::BrownianBridge).unwrap()
    }

    fn build(spec: &WeightSpec<f64>) -> PhiFn<f64> {
        PhiFn::build(spec, &PhiOptions::default()).unwrap()
    }

    #[test]
    fn normalisers() {
        assert!((Normaliser::SqrtPiTOver2.eval(2.0) - PI.sqrt()).abs() < 1e-15);
        assert_eq!(Normaliser::Langevin { c1: 2.0 }.eval(16.0), 4.0);
        assert_eq!(Normaliser::StablePower { rho: 0.5, k: 2.0 }.eval(4.0), 1.0);
        assert!(Normaliser::Power { c: 1.0, exponent: 0.0 }.validate().is_err());
        let r = RateNormaliser::stable(1.0, 1.5);
        assert!((r.exponent + 1.0 / 3.0).abs() < 1e-15);
        assert!(r.validate().is_ok());
        let bad = ClockSpec::Exponential {
            rates: vec![0.1, 0.2],
            normaliser: r,
        };
        assert!(bad.validate().is_err());
        assert_eq!(fmt17(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn martingale_suite_at_time_zero_is_exact() {
        let spec = WeightSpec::heaviside(0.5).unwrap();
        let phi = build(&spec);
        let x0 = State::brownian(0.0, 0.0, 0.0);
        let r = martingale_identity_suite(&spec, &phi, &[x0], &[0.0, 0.5], bridge(0.01), 20_000, 3, true).unwrap();
        assert_eq!(r.rows[0].estimate.mean, 1.0);
        assert_eq!(r.rows[0].estimate.se, 0.0);
        assert!(r.passed(), "{:?}", r.rows);
    }

    #[test]
    fn ratio_with_unit_functional_is_one() {
        let spec = WeightSpec::AvoidZero;
        let phi = build(&spec);
        let x0 = State::brownian(1.0, 1.0, 0.0);
        let r = constant_clock_limit(
            &spec,
            &phi,
            Normaliser::SqrtPiTOver2,
            &x0,
            |_| 1.0,
            0.5,
            &[2.0, 4.0],
            RatioReference::Known(1.0),
            0.0,
            bridge(0.05),
            2000,
            1,
        )
        .unwrap();
        for p in r.quantity("ratio") {
            assert_eq!(p.estimate.mean, 1.0);
        }
        let clock = ClockSpec::Exponential {
            rates: vec![0.5, 0.25],
            normaliser: RateNormaliser { c: 1.0, exponent: -0.5 },
        };
        let r = exponential_clock_limit(
            &spec,
            &phi,
            &clock,
            &x0,
            |_| 1.0,
            0.5,
            RatioReference::Known(1.0),
            0.0,
            bridge(0.05),
            2000,
            1,
        )
        .unwrap();
        for p in r.quantity("ratio") {
            assert_eq!(p.estimate.mean, 1.0);
        }
    }

    #[test]
    fn exponential_clock_matches_brownian_local_time_transform() {
        // E₀[e^{−L_{e(q)}}] = √(2q)/(√(2q) + 1)
        let spec = WeightSpec::lt_f(Model::Brownian, WeightFn::exp_decay(1.0).unwrap(), f64::INFINITY).unwrap();
        let phi = build(&spec);
        let clock = ClockSpec::Exponential {
            rates: vec![0.5, 0.125],
            normaliser: RateNormaliser { c: 1.0, exponent: -0.5 },
        };
        let x0 = State::brownian(0.0, 0.0, 0.0);
        let r = exponential_clock_limit(
            &spec,
            &phi,
            &clock,
            &x0,
            |_| 1.0,
            0.0,
            RatioReference::Known(1.0),
            0.0,
            bridge(0.01),
            20_000,
            4,
        )
        .unwrap();
        for p in r.quantity("normalised") {
            let q = p.grid;
            let exact = (2.0 * q).sqrt() / ((2.0 * q).sqrt() + 1.0) / q.sqrt();
            assert!(p.estimate.within(exact, 4.0), "q = {q}: {:?} vs {exact}", p.estimate);
        }
    }

    #[test]
    fn lt_direction_reference() {
        let spec = WeightSpec::lt_f(Model::Brownian, WeightFn::exp_decay(1.0).unwrap(), f64::INFINITY).unwrap();
        let phi = build(&spec);
        let p = direction_reference(&phi, &State::brownian(1.0, 1.0, 0.0)).unwrap().unwrap();
        assert!((p - 0.25).abs() < 1e-15);
        let p = direction_reference(&phi, &State::brownian(0.0, 0.0, 0.0)).unwrap().unwrap();
        assert_eq!(p, 0.5);
        let kac = WeightSpec::kac(Potential::boxed(1.0, 1.0).unwrap()).unwrap();
        let p = direction_reference(&build(&kac), &State::brownian(0.0, 0.0, 0.0)).unwrap().unwrap();
        assert!((p - 0.5).abs() < 1e-9);
    }

    #[test]
    fn persistence_rejects_bad_starts() {
        assert!(persistence_exponent_langevin(&State::langevin(0.0, 1.0, 1.0), &[1.0, 2.0], 0.1, 10, 0, 4).is_err());
        assert!(persistence_exponent_langevin(&State::brownian(0.0, 0.0, 0.0), &[1.0, 2.0], 0.1, 10, 0, 4).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0];
        let y: Vec<MCEstimate> = x.iter().map(|t: &f64| MCEstimate::new(t.powf(-0.25), 0.01, 100, 100.0)).collect();
        assert!((log_log_slope(&x, &y).mean + 0.25).abs() < 1e-12);
    }
}
