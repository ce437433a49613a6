//! Penalised laws by martingale reweighting.
//!
//! Particles are advanced in lockstep between checkpoints. Every particle
//! draws its randomness from `keyed_rng(seed, domain, stream, step)`, where
//! `step` is the grid index at which the current stage starts, so results do
//! not depend on the number of worker threads or on how work is split.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, usage, Error, Result};
use crate::paths::{Dynamics, State, TimeGrid};
use crate::phi::PhiFn;
use crate::rng::{keyed_rng, Domain};
use crate::state::Model;
use crate::stats::{effective_sample_size, weighted_quantile, MCEstimate, Moments};
use crate::weights::{WeightSpec, WeightTracker};

/// Sentinel step index for "never exited".
const NEVER: u64 = u64::MAX;
const MIN_CHUNK: usize = 128;

/// φ at raw coordinates, with the convention φ = 0 outside its domain.
#[inline]
pub fn phi_or_zero(phi: &PhiFn<f64>, coords: [f64; 3]) -> Result<f64> {
    match phi.eval_coords(coords) {
        Ok(v) => Ok(v),
        Err(Error::Domain(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone)]
pub struct Particle<'a> {
    pub state: [f64; 3],
    pub trackers: [Option<WeightTracker<'a>>; 2],
    /// Grid index at which each tracked weight vanished.
    pub exit_step: [u64; 2],
    /// Factor `c` with `M_t = c · Γ'_t · φ(X_t)`, where `Γ'` is the first
    /// weight restarted at the last resampling event.
    pub mass: f64,
    /// Γ of the first weight at the last restart, so that `Γ = prefix · Γ'`.
    pub prefix: f64,
}

impl Particle<'_> {
    #[inline]
    fn frozen(&self) -> bool {
        self.trackers[0].is_some() && self.trackers.iter().flatten().all(|t| !t.alive())
    }

    #[inline]
    fn tracked(&self, w: usize) -> f64 {
        self.trackers[w].as_ref().map_or(1.0, |t| t.value(&self.state))
    }

    /// Current value of tracked weight `w` (1 if untracked).
    #[inline]
    pub fn gamma(&self, w: usize) -> f64 {
        if w == 0 {
            self.prefix * self.tracked(0)
        } else {
            self.tracked(w)
        }
    }
}

/// Particles sharing one dynamics and one random-stream layout.
#[derive(Debug, Clone)]
pub struct ParticleSystem<'a> {
    pub dynamics: Dynamics,
    pub domain: Domain,
    pub seed: u64,
    pub stream_base: u64,
    /// Current grid index.
    pub step: usize,
    pub particles: Vec<Particle<'a>>,
}

impl<'a> ParticleSystem<'a> {
    /// `n` particles at `x0`, each tracking the given weights.
    pub fn new(
        dynamics: Dynamics,
        x0: &State,
        specs: &[&'a WeightSpec<f64>],
        n: usize,
        seed: u64,
        domain: Domain,
        stream_base: u64,
    ) -> Result<Self> {
        if x0.model != dynamics.model() {
            return usage(format!("start state is {} but dynamics are {}", x0.model, dynamics.model()));
        }
        if specs.len() > 2 {
            return usage("at most two weights can be tracked");
        }
        let mut trackers = [None, None];
        for (slot, spec) in trackers.iter_mut().zip(specs) {
            *slot = Some(WeightTracker::start(spec, x0, dynamics.dt())?);
        }
        let exit_step = [0, 1].map(|w| match &trackers[w] {
            Some(t) if !t.alive() => 0,
            _ => NEVER,
        });
        let proto = Particle {
            state: x0.coords,
            trackers,
            exit_step,
            mass: 1.0,
            prefix: 1.0,
        };
        Ok(Self {
            dynamics,
            domain,
            seed,
            stream_base,
            step: 0,
            particles: vec![proto; n],
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dynamics.dt()
    }

    /// Advances every particle to grid index `target`. Particles whose
    /// weights have all vanished stay frozen.
    pub fn advance_to(&mut self, target: usize) {
        if target <= self.step {
            return;
        }
        let (start, dynamics, seed, domain, base) = (self.step, self.dynamics, self.seed, self.domain, self.stream_base);
        self.particles
            .par_iter_mut()
            .enumerate()
            .with_min_len(MIN_CHUNK)
            .for_each(|(i, p)| {
                if p.frozen() {
                    return;
                }
                let mut rng = keyed_rng(seed, domain, base + i as u64, start as u64);
                for k in start..target {
                    let prev = p.state;
                    let touched = dynamics.step(&mut p.state, &mut rng);
                    for (w, slot) in p.trackers.iter_mut().enumerate() {
                        if let Some(t) = slot {
                            let was = t.alive();
                            t.advance(&prev, &p.state, touched);
                            if was && !t.alive() {
                                p.exit_step[w] = (k + 1) as u64;
                            }
                        }
                    }
                    if p.frozen() {
                        break;
                    }
                }
            });
        self.step = target;
    }

    /// `M_t = c · Γ_t · φ(X_t)` for every particle, using the first tracked weight.
    pub fn martingale(&self, phi: &PhiFn<f64>) -> Result<Vec<f64>> {
        self.particles
            .par_iter()
            .with_min_len(MIN_CHUNK)
            .map(|p| {
                let g = p.tracked(0);
                if g == 0.0 {
                    Ok(0.0)
                } else {
                    Ok(p.mass * g * phi_or_zero(phi, p.state)?)
                }
            })
            .collect()
    }

    pub fn gammas(&self, w: usize) -> Vec<f64> {
        self.particles.iter().map(|p| p.gamma(w)).collect()
    }

    pub fn states(&self) -> Vec<[f64; 3]> {
        self.particles.iter().map(|p| p.state).collect()
    }
}

/// Parent indices drawn by systematic resampling proportional to `weights`.
pub fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut run = 0.0;
    let mut j = 0;
    for i in 0..n {
        let target = (i as f64 + u) / n as f64 * total;
        while j + 1 < n && run + weights[j] < target {
            run += weights[j];
            j += 1;
        }
        out.push(j);
    }
    out
}

/// Sampling settings shared by the ensemble-based operations.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub dynamics: Dynamics,
    pub horizon: f64,
    /// Additional grid times at which states and weights are stored.
    pub record: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    pub stream_base: u64,
    /// Systematic resampling when `n_eff` falls below this fraction of `n`.
    pub resample_below: Option<f64>,
    /// Number of equally spaced checkpoints at which resampling is considered.
    pub checkpoints: usize,
}

impl EnsembleConfig {
    pub fn new(dynamics: Dynamics, horizon: f64, n: usize, seed: u64) -> Self {
        Self {
            dynamics,
            horizon,
            record: Vec::new(),
            n,
            seed,
            stream_base: 0,
            resample_below: Some(0.1),
            checkpoints: 16,
        }
    }

    pub fn recording(mut self, times: &[f64]) -> Self {
        self.record = times.to_vec();
        self
    }

    pub fn without_resampling(mut self) -> Self {
        self.resample_below = None;
        self
    }

    pub fn streams_from(mut self, base: u64) -> Self {
        self.stream_base = base;
        self
    }

    fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.dynamics.dt())
    }
}

/// Weighted ensemble approximating `P^Γ_{x₀}` on grid-time functionals.
///
/// Row `k` of `states`, `weights` and `gammas` refers to `times[k]`; after a
/// resampling event earlier rows are re-indexed so that column `i` is always
/// one consistent path.
#[derive(Debug, Clone, Serialize)]
pub struct WeightedEnsemble {
    pub model: Model,
    pub weight: String,
    pub x0: [f64; 3],
    pub phi_x0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n: usize,
    pub seed: u64,
    pub times: Vec<f64>,
    #[serde(skip)]
    pub states: Vec<Vec<[f64; 3]>>,
    /// `M_t = Γ_t φ(X_t)/φ(x₀)` (times the resampling factor).
    #[serde(skip)]
    pub weights: Vec<Vec<f64>>,
    /// Raw Γ of each tracked weight: `gammas[w][k][i]`.
    #[serde(skip)]
    pub gammas: Vec<Vec<Vec<f64>>>,
    /// First exit time of the penalising weight, `INFINITY` if none by the horizon.
    #[serde(skip)]
    pub exit_times: Vec<f64>,
    pub resampled_at: Vec<f64>,
    pub n_eff: Vec<f64>,
    pub flags: Vec<String>,
}

fn check_start(spec: &WeightSpec<f64>, phi: &PhiFn<f64>, x0: &State) -> Result<f64> {
    if phi.spec != *spec {
        return usage(format!(
            "φ was built for {} but the ensemble penalises {}",
            phi.spec.name(),
            spec.name()
        ));
    }
    if !spec.membership(x0)? {
        return Err(Error::Domain(format!(
            "start state {:?} is outside the domain of {}",
            x0.coords,
            spec.name()
        )));
    }
    let v = phi.eval(x0)?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Domain(format!("φ({:?}) = {v} is not a positive number", x0.coords)));
    }
    Ok(v)
}

/// Ensemble whose weighted empirical law approximates `P^Γ_{x₀}` on `[0, T]`.
pub fn build_penalised_ensemble(spec: &WeightSpec<f64>, phi: &PhiFn<f64>, x0: &State, cfg: &EnsembleConfig) -> Result<WeightedEnsemble> {
    build_tracking(spec, phi, None, x0, cfg)
}

/// As [`build_penalised_ensemble`], additionally recording a second weight
/// along the same paths.
pub fn build_tracking(
    spec: &WeightSpec<f64>,
    phi: &PhiFn<f64>,
    other: Option<&WeightSpec<f64>>,
    x0: &State,
    cfg: &EnsembleConfig,
) -> Result<WeightedEnsemble> {
    let phi_x0 = check_start(spec, phi, x0)?;
    if cfg.n == 0 {
        return config("ensemble size must be positive");
    }
    if let Some(o) = other {
        if o.model() != spec.model() {
            return usage("both weights must belong to the same model");
        }
    }
    let grid = cfg.grid()?;
    let mut record: Vec<usize> = cfg.record.iter().map(|t| grid.index_of(*t)).collect::<Result<_>>()?;
    record.push(grid.steps);
    record.sort_unstable();
    record.dedup();
    let mut stops = record.clone();
    if cfg.resample_below.is_some() {
        let every = (grid.steps / cfg.checkpoints.max(1)).max(1);
        stops.extend((every..grid.steps).step_by(every));
        stops.sort_unstable();
        stops.dedup();
    }

    let specs: Vec<&WeightSpec<f64>> = std::iter::once(spec).chain(other).collect();
    let mut sys = ParticleSystem::new(cfg.dynamics, x0, &specs, cfg.n, cfg.seed, Domain::Path, cfg.stream_base)?;
    sys.particles.iter_mut().for_each(|p| p.mass = 1.0 / phi_x0);

    let mut out = WeightedEnsemble {
        model: spec.model(),
        weight: spec.name().to_string(),
        x0: x0.coords,
        phi_x0,
        horizon: grid.horizon(),
        dt: grid.dt,
        n: cfg.n,
        seed: cfg.seed,
        times: Vec::new(),
        states: Vec::new(),
        weights: Vec::new(),
        gammas: vec![Vec::new(); specs.len()],
        exit_times: Vec::new(),
        resampled_at: Vec::new(),
        n_eff: Vec::new(),
        flags: Vec::new(),
    };

    if record[0] == 0 {
        push_row(&mut out, &sys, phi, 0)?;
    }
    for &stop in stops.iter().filter(|s| **s > 0) {
        sys.advance_to(stop);
        let m = sys.martingale(phi)?;
        if record.binary_search(&stop).is_ok() {
            push_row(&mut out, &sys, phi, stop)?;
        }
        if let Some(frac) = cfg.resample_below {
            if stop < grid.steps && effective_sample_size(&m) < frac * cfg.n as f64 {
                resample(&mut sys, &mut out, spec, phi, &m, stop)?;
            }
        }
    }
    out.exit_times = sys
        .particles
        .iter()
        .map(|p| {
            if p.exit_step[0] == NEVER {
                f64::INFINITY
            } else {
                p.exit_step[0] as f64 * grid.dt
            }
        })
        .collect();
    if out.n_eff.iter().any(|e| *e < 10.0) {
        out.flags.push("degenerate: effective sample size below 10".into());
    }
    if !out.resampled_at.is_empty() {
        out.flags.push(format!(
            "resampled {} times; standard errors after the first event are naive",
            out.resampled_at.len()
        ));
    }
    Ok(out)
}

fn push_row(out: &mut WeightedEnsemble, sys: &ParticleSystem, phi: &PhiFn<f64>, step: usize) -> Result<()> {
    let m = sys.martingale(phi)?;
    out.times.push(step as f64 * sys.dynamics.dt());
    out.n_eff.push(effective_sample_size(&m));
    out.weights.push(m);
    out.states.push(sys.states());
    for (w, g) in out.gammas.iter_mut().enumerate() {
        g.push(sys.gammas(w));
    }
    Ok(())
}

fn resample<'a>(
    sys: &mut ParticleSystem<'a>,
    out: &mut WeightedEnsemble,
    spec: &'a WeightSpec<f64>,
    phi: &PhiFn<f64>,
    m: &[f64],
    step: usize,
) -> Result<()> {
    let total: f64 = m.iter().sum();
    if !(total > 0.0) {
        return Ok(());
    }
    let avg = total / m.len() as f64;
    let u: f64 = keyed_rng(sys.seed, Domain::Resample, sys.stream_base, step as u64).random();
    let parents = systematic_resample(m, u);
    let dt = sys.dynamics.dt();
    let old = std::mem::take(&mut sys.particles);
    let mut fresh = Vec::with_capacity(old.len());
    for &j in &parents {
        let mut p = old[j].clone();
        let here = State {
            model: spec.model(),
            coords: p.state,
        };
        p.prefix = p.gamma(0);
        p.trackers[0] = Some(WeightTracker::start(spec, &here, dt)?);
        p.mass = avg / phi.eval(&here)?;
        fresh.push(p);
    }
    sys.particles = fresh;
    let permute = |rows: &mut Vec<Vec<f64>>| {
        for row in rows.iter_mut() {
            *row = parents.iter().map(|&j| row[j]).collect();
        }
    };
    for row in out.states.iter_mut() {
        *row = parents.iter().map(|&j| row[j]).collect();
    }
    permute(&mut out.weights);
    for g in out.gammas.iter_mut() {
        permute(g);
    }
    out.resampled_at.push(step as f64 * dt);
    Ok(())
}

impl WeightedEnsemble {
    /// Row index of a recorded time.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.times
            .iter()
            .position(|s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::Usage(format!("time {t} was not recorded (recorded: {:?})", self.times)))
    }

    pub fn terminal(&self) -> usize {
        self.times.len() - 1
    }

    /// Estimate of `E^Γ[g]` from the per-path values `g(i)` and the weights at row `k`.
    pub fn expectation<G: Fn(usize) -> f64>(&self, k: usize, g: G) -> MCEstimate {
        let w = &self.weights[k];
        let mut acc = Moments::default();
        for (i, wi) in w.iter().enumerate() {
            acc.push(if *wi == 0.0 { 0.0 } else { wi * g(i) });
        }
        let mut e = acc.estimate();
        e.n_eff = self.n_eff[k];
        e
    }

    /// Mean of the weights at row `k`; estimates 1.
    pub fn mean_weight(&self, k: usize) -> MCEstimate {
        self.expectation(k, |_| 1.0)
    }

    /// Weighted `P^Γ(τ^Γ > t)` at row `k`.
    pub fn survival(&self, k: usize) -> MCEstimate {
        let t = self.times[k];
        self.expectation(k, |i| if self.exit_times[i] > t { 1.0 } else { 0.0 })
    }

    /// Weighted `p`-quantile of `h(state)` at row `k`.
    pub fn quantile<H: Fn(&[f64; 3]) -> f64>(&self, k: usize, p: f64, h: H) -> f64 {
        let v: Vec<f64> = self.states[k].iter().map(h).collect();
        weighted_quantile(&v, &self.weights[k], p)
    }

    /// Values of `h(state)` at row `k` with their weights.
    pub fn marginal<H: Fn(&[f64; 3]) -> f64>(&self, k: usize, h: H) -> (Vec<f64>, Vec<f64>) {
        (self.states[k].iter().map(h).collect(), self.weights[k].clone())
    }
}

/// Per-horizon weighted statistics of a penalised ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct LongTimeRow {
    pub time: f64,
    pub survival: MCEstimate,
    pub median_phi: f64,
    pub below: MCEstimate,
    pub above: MCEstimate,
    pub n_eff: f64,
    /// Langevin only: weighted median of `Z_t = (−B_t)³/(−A_t)` over states with both coordinates negative.
    pub median_z: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LongTimeReport {
    pub weight: String,
    pub threshold: f64,
    pub rows: Vec<LongTimeRow>,
    pub median_phi_increasing: bool,
    pub flags: Vec<String>,
}

/// Survival, φ growth and direction statistics of `P^Γ` over `times`;
/// `below`/`above` are the weighted probabilities of the position being
/// beyond `∓threshold`.
pub fn penalised_longtime_stats(
    spec: &WeightSpec<f64>,
    phi: &PhiFn<f64>,
    x0: &State,
    times: &[f64],
    threshold: f64,
    cfg: &EnsembleConfig,
) -> Result<LongTimeReport> {
    let horizon = times.iter().copied().fold(f64::NAN, f64::max);
    if !(horizon > 0.0) {
        return config("time grid must contain a positive time");
    }
    let cfg = EnsembleConfig {
        horizon,
        record: times.to_vec(),
        ..cfg.clone()
    };
    let ens = build_penalised_ensemble(spec, phi, x0, &cfg)?;
    let mut rows = Vec::with_capacity(times.len());
    for &t in times {
        let k = ens.index_of(t)?;
        let pos = |i: usize| ens.states[k][i][0];
        let phis: Vec<f64> = ens.states[k].iter().map(|s| phi_or_zero(phi, *s)).collect::<Result<_>>()?;
        let median_z = (spec.model() == Model::Langevin).then(|| {
            let (z, w): (Vec<f64>, Vec<f64>) = ens.states[k]
                .iter()
                .zip(&ens.weights[k])
                .filter(|(s, _)| s[0] < 0.0 && s[1] < 0.0)
                .map(|(s, w)| ((-s[0]).powi(3) / (-s[1]), *w))
                .unzip();
            weighted_quantile(&z, &w, 0.5)
        });
        rows.push(LongTimeRow {
            time: t,
            survival: ens.survival(k),
            median_phi: weighted_quantile(&phis, &ens.weights[k], 0.5),
            below: ens.expectation(k, |i| if pos(i) < -threshold { 1.0 } else { 0.0 }),
            above: ens.expectation(k, |i| if pos(i) > threshold { 1.0 } else { 0.0 }),
            n_eff: ens.n_eff[k],
            median_z,
        });
    }
    rows.sort_by(|a, b| a.time.total_cmp(&b.time));
    let median_phi_increasing = rows.windows(2).all(|w| w[1].median_phi > w[0].median_phi);
    Ok(LongTimeReport {
        weight: spec.name().into(),
        threshold,
        rows,
        median_phi_increasing,
        flags: ens.flags,
    })
}

/// Both sides of the restarting identity
/// `φ(x₀)·E^Γ[F(X_t)·g(X_H)] = E[F(X_t)·Γ_t·φ(X_t)·E^Γ_{X_t}[g(X_{H−t})]]`.
#[derive(Debug, Clone, Serialize)]
pub struct MarkovCheck {
    pub t: f64,
    pub horizon: f64,
    pub inner: usize,
    pub lhs: MCEstimate,
    pub rhs: MCEstimate,
    /// `|lhs − rhs|` in combined standard errors.
    pub z: f64,
    /// Surviving outer paths whose inner ensemble carried no weight.
    pub degenerate_inner: usize,
    pub flags: Vec<String>,
}

/// Estimates both sides of the restarting identity. The left side comes
/// from a weighted ensemble to `H`; the right side from `n` unweighted paths
/// to `t`, each survivor followed by `inner` fresh penalised paths to `H`.
#[allow(clippy::too_many_arguments)]
pub fn subsequent_markov_check<F, G>(
    spec: &WeightSpec<f64>,
    phi: &PhiFn<f64>,
    x0: &State,
    t: f64,
    horizon: f64,
    functional: F,
    g: G,
    dynamics: Dynamics,
    n: usize,
    inner: usize,
    seed: u64,
) -> Result<MarkovCheck>
where
    F: Fn(&[f64; 3]) -> f64 + Sync,
    G: Fn(&[f64; 3]) -> f64 + Sync,
{
    if !(t > 0.0 && t < horizon) {
        return config(format!("need 0 < t < H, got t = {t}, H = {horizon}"));
    }
    if inner == 0 {
        return config("inner ensemble size must be positive");
    }
    let phi_x0 = check_start(spec, phi, x0)?;
    let grid = TimeGrid::new(horizon, dynamics.dt())?;
    let kt = grid.index_of(t)?;

    let cfg = EnsembleConfig::new(dynamics, horizon, n, seed).recording(&[t]).without_resampling();
    let ens = build_penalised_ensemble(spec, phi, x0, &cfg)?;
    let (it, ih) = (ens.index_of(t)?, ens.terminal());
    let lhs = ens
        .expectation(ih, |i| functional(&ens.states[it][i]) * g(&ens.states[ih][i]))
        .scaled(phi_x0);

    let mut outer = ParticleSystem::new(dynamics, x0, &[spec], n, seed, Domain::Path, n as u64)?;
    outer.advance_to(kt);
    let rest = grid.steps - kt;
    let results: Vec<Result<(f64, bool)>> = outer
        .particles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let gamma = p.gamma(0);
            let f = functional(&p.state);
            if gamma == 0.0 || f == 0.0 {
                return Ok((0.0, false));
            }
            let here = State {
                model: spec.model(),
                coords: p.state,
            };
            let mut sub = ParticleSystem::new(dynamics, &here, &[spec], inner, seed, Domain::Inner, (i * inner) as u64)?;
            sub.advance_to(rest);
            let mut sum = 0.0;
            for q in &sub.particles {
                let gq = q.gamma(0);
                if gq > 0.0 {
                    sum += gq * phi_or_zero(phi, q.state)? * g(&q.state);
                }
            }
            let weightless = sub.particles.iter().all(|q| q.gamma(0) == 0.0);
            Ok((f * gamma * sum / inner as f64, weightless))
        })
        .collect();
    let mut acc = Moments::default();
    let mut degenerate_inner = 0;
    for r in results {
        let (v, d) = r?;
        acc.push(v);
        degenerate_inner += d as usize;
    }
    let rhs = acc.estimate();
    let z = lhs.difference(&rhs).z_score(0.0);
    let mut flags = ens.flags.clone();
    if degenerate_inner > 0 {
        flags.push(format!("{degenerate_inner} inner ensembles carried no weight"));
    }
    Ok(MarkovCheck {
        t,
        horizon,
        inner,
        lhs,
        rhs,
        z,
        degenerate_inner,
        flags,
    })
}

/// Weighted statistics of `r = φ^num(X_T)/φ^den(X_T)` under one ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct RatioRow {
    pub time: f64,
    pub median: f64,
    pub mean: MCEstimate,
    /// Median over paths with negative position.
    pub median_negative: f64,
    /// Median over paths with positive position.
    pub median_positive: f64,
    /// Weighted probability of a negative position.
    pub negative: MCEstimate,
    pub n_eff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    pub s: f64,
    pub t: f64,
    /// `P^E[F_s R_T/(1+R_T+E_T)]`.
    pub lhs: MCEstimate,
    /// `(φ^Γ(x)/φ^E(x))·P^Γ[F_s E_T/(1+R_T+E_T)]`.
    pub rhs: MCEstimate,
    pub z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniversalityReport {
    pub gamma: String,
    pub other: String,
    /// Ratios under `P^Γ`.
    pub under_gamma: Vec<RatioRow>,
    /// Ratios under `P^E`.
    pub under_other: Vec<RatioRow>,
    pub identity: Option<IdentityCheck>,
    pub flags: Vec<String>,
}

pub fn ratio_statistics(ens: &WeightedEnsemble, num: &PhiFn<f64>, den: &PhiFn<f64>, times: &[f64]) -> Result<Vec<RatioRow>> {
    times
        .iter()
        .map(|&t| {
            let k = ens.index_of(t)?;
            let w = &ens.weights[k];
            let mut r = Vec::with_capacity(ens.n);
            for s in &ens.states[k] {
                let a = phi_or_zero(num, *s)?;
                let b = phi_or_zero(den, *s)?;
                r.push(if a == 0.0 { 0.0 } else { a / b });
            }
            let side = |neg: bool| {
                let ws: Vec<f64> = w
                    .iter()
                    .zip(&ens.states[k])
                    .map(|(wi, s)| if (s[0] < 0.0) == neg { *wi } else { 0.0 })
                    .collect();
                weighted_quantile(&r, &ws, 0.5)
            };
            Ok(RatioRow {
                time: t,
                median: weighted_quantile(&r, w, 0.5),
                mean: ens.expectation(k, |i| r[i]),
                median_negative: side(true),
                median_positive: side(false),
                negative: ens.expectation(k, |i| if ens.states[k][i][0] < 0.0 { 1.0 } else { 0.0 }),
                n_eff: ens.n_eff[k],
            })
        })
        .collect()
}

/// Ratio diagnostics for two weights and, when `identity` is given as
/// `(s, t, F)`, both sides of the finite-horizon ratio identity. Each
/// ensemble tracks both weights along the same paths; the two ensembles use
/// disjoint random streams.
#[allow(clippy::too_many_arguments)]
pub fn universality_ratio_test<F>(
    gamma: (&WeightSpec<f64>, &PhiFn<f64>),
    other: (&WeightSpec<f64>, &PhiFn<f64>),
    x0: &State,
    times: &[f64],
    identity: Option<(f64, f64, F)>,
    cfg: &EnsembleConfig,
) -> Result<UniversalityReport>
where
    F: Fn(&[f64; 3]) -> f64,
{
    let (sg, pg) = gamma;
    let (se, pe) = other;
    let phi_g = check_start(sg, pg, x0)?;
    let phi_e = check_start(se, pe, x0)?;
    let mut record = times.to_vec();
    if let Some((s, t, _)) = &identity {
        if !(*s >= 0.0 && s <= t) {
            return config(format!("need 0 ≤ s ≤ t, got s = {s}, t = {t}"));
        }
        record.extend([*s, *t]);
    }
    let horizon = record.iter().copied().fold(f64::NAN, f64::max);
    let base = EnsembleConfig {
        horizon,
        record,
        ..cfg.clone()
    };
    let ens_g = build_tracking(sg, pg, Some(se), x0, &base)?;
    let ens_e = build_tracking(se, pe, Some(sg), x0, &base.clone().streams_from(cfg.stream_base + cfg.n as u64))?;

    let identity = match identity {
        None => None,
        Some((s, t, f)) => {
            // Under P^E the tracked weights are [E, Γ]; under P^Γ they are [Γ, E].
            let term = |ens: &WeightedEnsemble, g_slot: usize, e_slot: usize, numerator_r: bool| -> Result<MCEstimate> {
                let (ks, kt) = (ens.index_of(s)?, ens.index_of(t)?);
                let mut vals = Vec::with_capacity(ens.n);
                for i in 0..ens.n {
                    if ens.weights[kt][i] == 0.0 {
                        vals.push(0.0);
                        continue;
                    }
                    let st = ens.states[kt][i];
                    let (gt, et) = (ens.gammas[g_slot][kt][i], ens.gammas[e_slot][kt][i]);
                    let fe = phi_or_zero(pe, st)?;
                    let r = if gt == 0.0 { 0.0 } else { gt * phi_or_zero(pg, st)? / fe };
                    let v = if numerator_r {
                        r / (1.0 + r + et)
                    } else if r.is_infinite() {
                        0.0
                    } else {
                        et / (1.0 + r + et)
                    };
                    vals.push(f(&ens.states[ks][i]) * v);
                }
                Ok(ens.expectation(kt, |i| vals[i]))
            };
            let lhs = term(&ens_e, 1, 0, true)?;
            let rhs = term(&ens_g, 0, 1, false)?.scaled(phi_g / phi_e);
            Some(IdentityCheck {
                s,
                t,
                z: lhs.difference(&rhs).z_score(0.0),
                lhs,
                rhs,
            })
        }
    };
    let mut flags = ens_g.flags.iter().map(|f| format!("P^{}: {f}", sg.name())).collect::<Vec<_>>();
    flags.extend(ens_e.flags.iter().map(|f| format!("P^{}: {f}", se.name())));
    Ok(UniversalityReport {
        gamma: sg.name().into(),
        other: se.name().into(),
        under_gamma: ratio_statistics(&ens_g, pg, pe, times)?,
        under_other: ratio_statistics(&ens_e, pg, pe, times)?,
        identity,
        flags,
    })
}
