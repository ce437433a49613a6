//! Path samplers on uniform time grids.
//!
//! Each sampler is a pure function of `(configuration, seed, stream)`. The
//! one-step kernels ([`Dynamics`]) are exposed as well so that ensemble code
//! can stream paths without materialising them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, usage, Error, Result};
use crate::rng::{normal, open01, stream_rng, Domain, StreamRng};
use crate::stable::{CmsConstants, StableParams};
use crate::state::{Model, ModelState};

pub type State = ModelState<f64>;

/// Uniform grid `0, Δ, 2Δ, …, T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Grid with step `dt` reaching `horizon`; `horizon` must be a multiple of `dt`.
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return config(format!("time step must be positive, got {dt}"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return config(format!("horizon must be positive, got {horizon}"));
        }
        let ratio = horizon / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return config(format!("horizon {horizon} is not a multiple of the step {dt}"));
        }
        Ok(Self { dt, steps: steps as usize })
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    /// Grid index of time `t`, or a usage error if `t` is off the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let r = t / self.dt;
        let k = r.round();
        if !(t >= 0.0) || (r - k).abs() > 1e-9 * r.max(1.0) || k as usize > self.steps {
            return usage(format!("time {t} is not on the grid (Δ = {}, T = {})", self.dt, self.horizon()));
        }
        Ok(k as usize)
    }

    pub fn halved(&self) -> Self {
        Self {
            dt: self.dt / 2.0,
            steps: self.steps * 2,
        }
    }
}

/// How the running supremum of a Brownian position is recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupremumScheme {
    /// Maximum over grid points.
    Grid,
    /// Exact draw of the Brownian-bridge maximum on every step.
    BrownianBridge,
}

/// How local time at zero is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalTimeScheme {
    /// `(1/2ε) ∫ 1{|X_s| ≤ ε} ds`, left-endpoint quadrature on the grid.
    Occupation { bandwidth: f64 },
    /// Exact draw of the Brownian-bridge local time given both endpoints
    /// (Brownian model only).
    BrownianBridge,
}

impl LocalTimeScheme {
    pub fn bandwidth(&self) -> Option<f64> {
        match self {
            LocalTimeScheme::Occupation { bandwidth } => Some(*bandwidth),
            LocalTimeScheme::BrownianBridge => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let LocalTimeScheme::Occupation { bandwidth } = self {
            if !(*bandwidth > 0.0 && bandwidth.is_finite()) {
                return config(format!("local-time bandwidth must be positive, got {bandwidth}"));
            }
        }
        Ok(())
    }

    /// Same scheme with the bandwidth scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            LocalTimeScheme::Occupation { bandwidth } => LocalTimeScheme::Occupation {
                bandwidth: bandwidth * factor,
            },
            other => *other,
        }
    }
}

/// One-step kernels of the three reference processes.
///
/// `step` advances `[c0, c1, c2]` in place (layout as in [`ModelState`]) and
/// returns whether the monitored line coordinate touched zero during the
/// step (position for line models, velocity for Langevin).
#[derive(Debug, Clone, Copy)]
pub enum Dynamics {
    Brownian {
        dt: f64,
        sqrt_dt: f64,
        supremum: SupremumScheme,
        local_time: LocalTimeScheme,
    },
    Stable {
        dt: f64,
        step_scale: f64,
        cms: CmsConstants,
        bandwidth: f64,
    },
    Langevin {
        dt: f64,
        sqrt_dt: f64,
        dt_three_halves: f64,
    },
}

/// Probability that a Brownian bridge of duration `dt` between two points of
/// the same sign touches zero.
#[inline]
fn bridge_touch_probability(x0: f64, x1: f64, dt: f64) -> f64 {
    (-2.0 * x0 * x1 / dt).exp()
}

#[inline]
fn bridge_touches_zero<R: Rng + ?Sized>(x0: f64, x1: f64, dt: f64, rng: &mut R) -> bool {
    if x0 * x1 <= 0.0 {
        return true;
    }
    let exponent = 2.0 * x0 * x1 / dt;
    // exp(-745) underflows; skip the draw when the probability is nil.
    exponent < 745.0 && open01(rng) < bridge_touch_probability(x0, x1, dt)
}

impl Dynamics {
    pub fn brownian(dt: f64, supremum: SupremumScheme, local_time: LocalTimeScheme) -> Result<Self> {
        if !(dt > 0.0) {
            return config(format!("time step must be positive, got {dt}"));
        }
        local_time.validate()?;
        Ok(Dynamics::Brownian {
            dt,
            sqrt_dt: dt.sqrt(),
            supremum,
            local_time,
        })
    }

    pub fn stable(params: &StableParams<f64>, dt: f64, bandwidth: f64) -> Result<Self> {
        StableParams::new(params.alpha, params.beta, params.scale)?;
        if !(dt > 0.0) {
            return config(format!("time step must be positive, got {dt}"));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return config(format!("local-time bandwidth must be positive, got {bandwidth}"));
        }
        Ok(Dynamics::Stable {
            dt,
            step_scale: (params.scale * dt).powf(1.0 / params.alpha),
            cms: params.cms_constants(),
            bandwidth,
        })
    }

    pub fn langevin(dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return config(format!("time step must be positive, got {dt}"));
        }
        Ok(Dynamics::Langevin {
            dt,
            sqrt_dt: dt.sqrt(),
            dt_three_halves: dt.powf(1.5),
        })
    }

    pub fn model(&self) -> Model {
        match self {
            Dynamics::Brownian { .. } => Model::Brownian,
            Dynamics::Stable { .. } => Model::Stable,
            Dynamics::Langevin { .. } => Model::Langevin,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Dynamics::Brownian { dt, .. } | Dynamics::Stable { dt, .. } | Dynamics::Langevin { dt, .. } => *dt,
        }
    }

    pub fn bandwidth(&self) -> Option<f64> {
        match self {
            Dynamics::Brownian { local_time, .. } => local_time.bandwidth(),
            Dynamics::Stable { bandwidth, .. } => Some(*bandwidth),
            Dynamics::Langevin { .. } => None,
        }
    }

    /// Same dynamics with the step (and any bandwidth) refined.
    pub fn with_dt(&self, new_dt: f64, bandwidth_factor: f64) -> Result<Self> {
        match self {
            Dynamics::Brownian { supremum, local_time, .. } => Dynamics::brownian(new_dt, *supremum, local_time.scaled(bandwidth_factor)),
            Dynamics::Stable {
                dt,
                step_scale,
                cms,
                bandwidth,
            } => Ok(Dynamics::Stable {
                dt: new_dt,
                step_scale: step_scale * (new_dt / dt).powf(cms.inv_alpha),
                cms: *cms,
                bandwidth: bandwidth * bandwidth_factor,
            }),
            Dynamics::Langevin { .. } => Dynamics::langevin(new_dt),
        }
    }

    #[inline]
    pub fn step<R: Rng + ?Sized>(&self, s: &mut [f64; 3], rng: &mut R) -> bool {
        match *self {
            Dynamics::Brownian {
                dt,
                sqrt_dt,
                supremum,
                local_time,
            } => {
                let x = s[0];
                let xn = x + sqrt_dt * normal(rng);
                let (touched, dl) = match local_time {
                    LocalTimeScheme::BrownianBridge => {
                        // P(L > l | x, xn) = exp(-((|x|+|xn|+l)² - (xn-x)²) / (2Δ))
                        let d = xn - x;
                        let r = (d * d - 2.0 * dt * open01(rng).ln()).sqrt();
                        let gap = x.abs() + xn.abs();
                        (r > gap || x * xn <= 0.0, (r - gap).max(0.0))
                    }
                    LocalTimeScheme::Occupation { bandwidth } => {
                        let dl = if x.abs() <= bandwidth { dt / (2.0 * bandwidth) } else { 0.0 };
                        (bridge_touches_zero(x, xn, dt, rng), dl)
                    }
                };
                let top = match supremum {
                    SupremumScheme::Grid => xn,
                    SupremumScheme::BrownianBridge => {
                        let d = xn - x;
                        0.5 * (x + xn + (d * d - 2.0 * dt * open01(rng).ln()).sqrt())
                    }
                };
                s[0] = xn;
                s[1] = s[1].max(top);
                s[2] += dl;
                touched
            }
            Dynamics::Stable {
                dt,
                step_scale,
                ref cms,
                bandwidth,
            } => {
                let x = s[0];
                let xn = x + step_scale * cms.draw(rng);
                if x.abs() <= bandwidth {
                    s[2] += dt / (2.0 * bandwidth);
                }
                s[0] = xn;
                s[1] = s[1].max(xn);
                x * xn <= 0.0
            }
            Dynamics::Langevin {
                dt,
                sqrt_dt,
                dt_three_halves,
            } => {
                let z1 = normal(rng);
                let z2 = normal(rng);
                let b = s[0];
                // (ΔB, ∫(B_u - B_0) du): variances Δ, Δ³/3 and covariance Δ²/2
                let bn = b + sqrt_dt * z1;
                let an = s[1] + b * dt + dt_three_halves * (0.5 * z1 + z2 / (2.0 * 3f64.sqrt()));
                s[0] = bn;
                s[1] = an;
                s[2] = s[2].max(an);
                bridge_touches_zero(b, bn, dt, rng)
            }
        }
    }
}

/// One simulated trajectory on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub model: Model,
    pub dt: f64,
    pub steps: usize,
    /// Local-time bandwidth, when the occupation estimator is in use.
    pub bandwidth: Option<f64>,
    pub seed: u64,
    pub stream: u64,
    /// Coordinate columns, each of length `steps + 1`.
    pub columns: [Vec<f64>; 3],
    /// `zero_touch[k]`: the monitored line coordinate touched zero during
    /// step `k - 1 → k` (entry 0 is always false).
    pub zero_touch: Vec<bool>,
}

impl PathSample {
    pub fn empty(model: Model) -> Self {
        Self {
            model,
            dt: 0.0,
            steps: 0,
            bandwidth: None,
            seed: 0,
            stream: 0,
            columns: [Vec::new(), Vec::new(), Vec::new()],
            zero_touch: Vec::new(),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            dt: self.dt,
            steps: self.steps,
        }
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        self.columns[0].is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.dt * k as f64
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.grid().index_of(t)
    }

    pub fn state(&self, k: usize) -> State {
        ModelState {
            model: self.model,
            coords: [self.columns[0][k], self.columns[1][k], self.columns[2][k]],
        }
    }

    pub fn initial(&self) -> State {
        self.state(0)
    }

    pub fn terminal(&self) -> State {
        self.state(self.steps)
    }

    /// Position (line models) or velocity (Langevin) column.
    pub fn position(&self) -> &[f64] {
        &self.columns[0]
    }

    pub fn supremum(&self) -> &[f64] {
        match self.model {
            Model::Brownian | Model::Stable => &self.columns[1],
            Model::Langevin => &self.columns[2],
        }
    }

    /// Local-time column (line models).
    pub fn local_time(&self) -> &[f64] {
        &self.columns[2]
    }

    /// Integrated position column (Langevin).
    pub fn integral(&self) -> &[f64] {
        &self.columns[1]
    }

    /// The path restarted at grid index `s`: columns from `s` on, with the
    /// aggregates carried over (supremum based at `y_s`, local time at `l_s`).
    pub fn shifted(&self, s: usize) -> Result<PathSample> {
        if s > self.steps {
            return usage(format!("shift index {s} beyond path length {}", self.steps));
        }
        let mut zero_touch = self.zero_touch[s..].to_vec();
        zero_touch[0] = false;
        Ok(PathSample {
            model: self.model,
            dt: self.dt,
            steps: self.steps - s,
            bandwidth: self.bandwidth,
            seed: self.seed,
            stream: self.stream,
            columns: [
                self.columns[0][s..].to_vec(),
                self.columns[1][s..].to_vec(),
                self.columns[2][s..].to_vec(),
            ],
            zero_touch,
        })
    }

    /// Checks the running-aggregate invariants; `exact_grid_supremum` also
    /// requires the supremum to equal the prefix maximum of grid positions.
    pub fn check_invariants(&self, exact_grid_supremum: bool) -> Result<()> {
        let n = self.len();
        if self.columns.iter().any(|c| c.len() != n) || self.zero_touch.len() != n {
            return Err(Error::Usage("column lengths disagree".into()));
        }
        let (pos, sup): (&[f64], &[f64]) = match self.model {
            Model::Brownian | Model::Stable => (&self.columns[0], &self.columns[1]),
            Model::Langevin => (&self.columns[1], &self.columns[2]),
        };
        let mut run = sup[0];
        for k in 0..n {
            run = run.max(pos[k]);
            let ok = if exact_grid_supremum { sup[k] == run } else { sup[k] >= run };
            if !ok || (k > 0 && sup[k] < sup[k - 1]) {
                return Err(Error::Numerical(format!("supremum invariant broken at index {k}")));
            }
        }
        if self.model != Model::Langevin {
            let lt = &self.columns[2];
            if lt[0] < 0.0 || lt.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Numerical("local time is not nondecreasing".into()));
            }
        }
        Ok(())
    }
}

/// Simulates `dynamics` from `x0` over `grid` into `out`, reusing its buffers.
pub fn simulate_into(dynamics: &Dynamics, x0: &State, grid: TimeGrid, seed: u64, stream: u64, out: &mut PathSample) -> Result<()> {
    if x0.model != dynamics.model() {
        return usage(format!("initial state is {} but dynamics are {}", x0.model, dynamics.model()));
    }
    if (grid.dt - dynamics.dt()).abs() > 1e-15 * grid.dt {
        return usage("grid step differs from the dynamics step");
    }
    x0.validate()?;
    let n = grid.steps + 1;
    out.model = x0.model;
    out.dt = grid.dt;
    out.steps = grid.steps;
    out.bandwidth = dynamics.bandwidth();
    out.seed = seed;
    out.stream = stream;
    for c in out.columns.iter_mut() {
        c.clear();
        c.reserve(n);
    }
    out.zero_touch.clear();
    out.zero_touch.reserve(n);

    let mut rng = stream_rng(seed, Domain::Path, stream);
    let mut s = x0.coords;
    push(out, &s, false);
    for _ in 0..grid.steps {
        let touched = dynamics.step(&mut s, &mut rng);
        push(out, &s, touched);
    }
    Ok(())
}

#[inline]
fn push(out: &mut PathSample, s: &[f64; 3], touched: bool) {
    out.columns[0].push(s[0]);
    out.columns[1].push(s[1]);
    out.columns[2].push(s[2]);
    out.zero_touch.push(touched);
}

pub fn simulate(dynamics: &Dynamics, x0: &State, grid: TimeGrid, seed: u64, stream: u64) -> Result<PathSample> {
    let mut out = PathSample::empty(x0.model);
    simulate_into(dynamics, x0, grid, seed, stream, &mut out)?;
    Ok(out)
}

/// Brownian sampler configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianConfig {
    pub grid: TimeGrid,
    pub supremum: SupremumScheme,
    pub local_time: LocalTimeScheme,
}

impl BrownianConfig {
    /// Grid supremum and occupation local time with bandwidth `ε`.
    pub fn occupation(horizon: f64, dt: f64, bandwidth: f64) -> Result<Self> {
        let cfg = Self {
            grid: TimeGrid::new(horizon, dt)?,
            supremum: SupremumScheme::Grid,
            local_time: LocalTimeScheme::Occupation { bandwidth },
        };
        cfg.local_time.validate()?;
        Ok(cfg)
    }

    /// Exact bridge draws for both supremum and local time.
    pub fn bridge(horizon: f64, dt: f64) -> Result<Self> {
        Ok(Self {
            grid: TimeGrid::new(horizon, dt)?,
            supremum: SupremumScheme::BrownianBridge,
            local_time: LocalTimeScheme::BrownianBridge,
        })
    }

    pub fn dynamics(&self) -> Result<Dynamics> {
        Dynamics::brownian(self.grid.dt, self.supremum, self.local_time)
    }
}

pub fn sample_brownian_triple(x0: &State, cfg: &BrownianConfig, seed: u64, stream: u64) -> Result<PathSample> {
    simulate(&cfg.dynamics()?, x0, cfg.grid, seed, stream)
}

pub fn sample_stable_triple(
    params: &StableParams<f64>,
    x0: &State,
    grid: TimeGrid,
    bandwidth: f64,
    seed: u64,
    stream: u64,
) -> Result<PathSample> {
    simulate(&Dynamics::stable(params, grid.dt, bandwidth)?, x0, grid, seed, stream)
}

pub fn sample_langevin(x0: &State, grid: TimeGrid, seed: u64, stream: u64) -> Result<PathSample> {
    simulate(&Dynamics::langevin(grid.dt)?, x0, grid, seed, stream)
}

/// Norm of a three-dimensional Brownian motion started at `(x0, 0, 0)`,
/// sampled exactly on the grid.
pub fn sample_bessel3(x0: f64, grid: TimeGrid, seed: u64, stream: u64) -> Result<Vec<f64>> {
    let mut rng = stream_rng(seed, Domain::Bessel, stream);
    bessel3_with(x0, grid, &mut rng)
}

pub(crate) fn bessel3_with(x0: f64, grid: TimeGrid, rng: &mut StreamRng) -> Result<Vec<f64>> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return config(format!("Bessel(3) start must be positive, got {x0}"));
    }
    let sd = grid.dt.sqrt();
    let mut v = [x0, 0.0, 0.0];
    let mut out = Vec::with_capacity(grid.steps + 1);
    out.push(x0);
    for _ in 0..grid.steps {
        for c in v.iter_mut() {
            *c += sd * normal(rng);
        }
        out.push((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt());
    }
    Ok(out)
}
