//! Experiment configuration files.
//!
//! A configuration is a TOML document with the sections described in
//! `CONFIG.md`. Unknown keys are rejected.

use penal_core::experiments::{ClockSpec, Normaliser};
use penal_core::paths::{LocalTimeScheme, SupremumScheme};
use penal_core::state::Model;
use penal_core::weights::WeightSpec;
use penal_core::{Dynamics, Error, Phi, PhiOptions, Result, Stable, State};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    MartingaleIdentitySuite,
    ConstantClockLimit,
    ExponentialClockLimit,
    PersistenceExponentLangevin,
    DirectionStatistics,
    BuildPenalisedEnsemble,
    PenalisedLongtimeStats,
    SubsequentMarkovCheck,
    UniversalityRatioTest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Brownian {
        #[serde(default = "bridge")]
        supremum: Scheme,
        #[serde(default = "bridge")]
        local_time: Scheme,
        /// Occupation bandwidth ε; defaults to `√Δ`.
        #[serde(default)]
        bandwidth: Option<f64>,
    },
    Stable {
        alpha: f64,
        beta: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        bandwidth: Option<f64>,
    },
    Langevin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Bridge,
    Grid,
    Occupation,
}

fn bridge() -> Scheme {
    Scheme::Bridge
}

fn one() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn model(&self) -> Model {
        match self {
            ModelConfig::Brownian { .. } => Model::Brownian,
            ModelConfig::Stable { .. } => Model::Stable,
            ModelConfig::Langevin => Model::Langevin,
        }
    }

    pub fn stable(&self) -> Result<Option<Stable>> {
        match *self {
            ModelConfig::Stable { alpha, beta, scale, .. } => Ok(Some(Stable::new(alpha, beta, scale)?)),
            _ => Ok(None),
        }
    }

    pub fn dynamics(&self, dt: f64) -> Result<Dynamics> {
        match *self {
            ModelConfig::Brownian {
                supremum,
                local_time,
                bandwidth,
            } => {
                let sup = match supremum {
                    Scheme::Bridge => SupremumScheme::BrownianBridge,
                    Scheme::Grid => SupremumScheme::Grid,
                    Scheme::Occupation => return Err(Error::Config("the supremum scheme is bridge or grid".into())),
                };
                let lt = match local_time {
                    Scheme::Bridge => LocalTimeScheme::BrownianBridge,
                    Scheme::Occupation => LocalTimeScheme::Occupation {
                        bandwidth: bandwidth.unwrap_or(dt.sqrt()),
                    },
                    Scheme::Grid => return Err(Error::Config("the local-time scheme is bridge or occupation".into())),
                };
                Dynamics::brownian(dt, sup, lt)
            }
            ModelConfig::Stable { bandwidth, .. } => {
                let p = self.stable()?.expect("stable model");
                Dynamics::stable(&p, dt, bandwidth.unwrap_or(dt.sqrt()))
            }
            ModelConfig::Langevin => Dynamics::langevin(dt),
        }
    }
}

/// φ settings other than the stable parameters, which come from the model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiConfig {
    #[serde(default)]
    pub stable_lt_constant: Option<f64>,
    #[serde(default)]
    pub kac_half_width: Option<f64>,
    #[serde(default)]
    pub kac_intervals: Option<usize>,
}

/// A bounded functional of one state: `1{lower ≤ coords[coordinate] ≤ upper}` or 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Functional {
    #[default]
    One,
    Indicator {
        #[serde(default)]
        coordinate: usize,
        #[serde(default = "neg_inf")]
        lower: f64,
        #[serde(default = "pos_inf")]
        upper: f64,
    },
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

impl Functional {
    pub fn eval(&self, s: &[f64; 3]) -> f64 {
        match *self {
            Functional::One => 1.0,
            Functional::Indicator { coordinate, lower, upper } => {
                let v = s[coordinate];
                if v >= lower && v <= upper {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Functional::Indicator { coordinate, lower, upper } = *self {
            if coordinate > 2 || !(lower <= upper) {
                return Err(Error::Config(format!(
                    "indicator needs coordinate 0..=2 and lower ≤ upper, got {coordinate}, [{lower}, {upper}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sampling {
    pub dt: f64,
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Time grid (`t` values) for the experiment.
    #[serde(default)]
    pub times: Vec<f64>,
    /// Start states; the first one is used where a single start is needed.
    #[serde(default)]
    pub starts: Vec<[f64; 3]>,
    pub n: usize,
    /// Conditioning time `s` of functionals `F_s`.
    #[serde(default)]
    pub s: Option<f64>,
    /// Direction threshold `K`.
    #[serde(default = "five")]
    pub threshold: f64,
    /// Inner ensemble size `m`.
    #[serde(default = "thirty_two")]
    pub inner: usize,
    #[serde(default = "yes")]
    pub halving: bool,
    #[serde(default = "two_hundred")]
    pub bootstrap: usize,
    /// Resampling threshold as a fraction of `n`; 0 disables resampling.
    #[serde(default = "tenth")]
    pub resample_below: f64,
    /// Relative tolerance added to the 3-SE check of convergence experiments.
    #[serde(default)]
    pub rel_tol: f64,
    /// Known value of `E^Γ[F_s]`; estimated from a weighted ensemble otherwise.
    #[serde(default)]
    pub ratio_reference: Option<f64>,
    /// Identity time pair `(s, t)` for the universality experiment.
    #[serde(default)]
    pub identity: Option<[f64; 2]>,
    /// Accepted band for `--check`: the persistence slope, or the
    /// universality ratio median over negative positions at the last time.
    #[serde(default)]
    pub band: Option<[f64; 2]>,
}

impl Sampling {
    fn placeholder() -> Self {
        Sampling {
            dt: 0.01,
            horizon: None,
            times: Vec::new(),
            starts: Vec::new(),
            n: 1,
            s: None,
            threshold: five(),
            inner: thirty_two(),
            halving: yes(),
            bootstrap: two_hundred(),
            resample_below: tenth(),
            rel_tol: 0.0,
            ratio_reference: None,
            identity: None,
            band: None,
        }
    }

    /// The last configured time, or the explicit horizon.
    pub fn horizon(&self) -> Result<f64> {
        let h = self.horizon.or_else(|| self.times.iter().copied().reduce(f64::max));
        match h {
            Some(h) if h > 0.0 => Ok(h),
            _ => Err(Error::Config("sampling needs a positive horizon or a non-empty times grid".into())),
        }
    }
}

fn five() -> f64 {
    5.0
}
fn thirty_two() -> usize {
    32
}
fn yes() -> bool {
    true
}
fn two_hundred() -> usize {
    200
}
fn tenth() -> f64 {
    0.1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default)]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    #[serde(default)]
    pub weight: Option<WeightSpec<f64>>,
    /// Second weight for the universality experiment.
    #[serde(default)]
    pub other_weight: Option<WeightSpec<f64>>,
    #[serde(default)]
    pub phi: PhiConfig,
    #[serde(default)]
    pub clock: Option<ClockSpec>,
    pub sampling: Sampling,
    #[serde(default)]
    pub functional: Functional,
    #[serde(default)]
    pub test_function: Functional,
    #[serde(default)]
    pub output: Output,
}

/// The blocks needed to evaluate φ alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiSelection {
    pub model: ModelConfig,
    pub weight: WeightSpec<f64>,
    #[serde(default)]
    pub phi: PhiConfig,
}

impl PhiSelection {
    pub fn build(&self) -> Result<Phi> {
        let cfg = ExperimentConfig {
            experiment: Experiment::BuildPenalisedEnsemble,
            seed: 0,
            model: self.model,
            weight: Some(self.weight.clone()),
            other_weight: None,
            phi: self.phi.clone(),
            clock: None,
            sampling: Sampling::placeholder(),
            functional: Functional::One,
            test_function: Functional::One,
            output: Output::default(),
        };
        Ok(cfg.build_weight(&self.weight)?.1)
    }
}

/// Reads a φ selection from either a selection file or a full experiment
/// configuration.
pub fn parse_selection(text: &str) -> Result<PhiSelection> {
    if let Ok(c) = parse(text) {
        if let Some(weight) = c.weight {
            return Ok(PhiSelection {
                model: c.model,
                weight,
                phi: c.phi,
            });
        }
    }
    toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
}

/// Everything an experiment needs, built and checked before sampling.
pub struct Resolved {
    pub weight: Option<(WeightSpec<f64>, Phi)>,
    pub other: Option<(WeightSpec<f64>, Phi)>,
    pub dynamics: Dynamics,
    pub starts: Vec<State>,
}

impl ExperimentConfig {
    pub fn phi_options(&self) -> Result<PhiOptions> {
        let mut o = PhiOptions {
            stable: self.model.stable()?,
            stable_lt_constant: self.phi.stable_lt_constant,
            ..PhiOptions::default()
        };
        if let Some(m) = self.phi.kac_half_width {
            o.kac_half_width = m;
        }
        if let Some(k) = self.phi.kac_intervals {
            o.kac_intervals = k;
        }
        Ok(o)
    }

    fn build_weight(&self, spec: &WeightSpec<f64>) -> Result<(WeightSpec<f64>, Phi)> {
        if spec.model() != self.model.model() {
            return Err(Error::Config(format!(
                "weight {} belongs to the {} model but the model block is {}",
                spec.name(),
                spec.model(),
                self.model.model()
            )));
        }
        let phi = Phi::build(spec, &self.phi_options()?)?;
        Ok((spec.clone(), phi))
    }

    pub fn validate(&self) -> Result<Resolved> {
        self.resolve(true)
    }

    /// Validation for path dumps, which need only the model and sampling blocks.
    pub fn validate_paths(&self) -> Result<Resolved> {
        self.resolve(false)
    }

    fn resolve(&self, experiment: bool) -> Result<Resolved> {
        let weight = self.weight.as_ref().map(|w| self.build_weight(w)).transpose()?;
        let other = self.other_weight.as_ref().map(|w| self.build_weight(w)).transpose()?;
        let dynamics = self.model.dynamics(self.sampling.dt)?;
        let model = self.model.model();
        let starts: Vec<State> = self.sampling.starts.iter().map(|c| State { model, coords: *c }).collect();
        for s in &starts {
            s.validate()?;
            if let Some((spec, _)) = &weight {
                if !spec.membership(s)? {
                    return Err(Error::Domain(format!(
                        "start state {:?} is outside the domain of {}",
                        s.coords,
                        spec.name()
                    )));
                }
            }
        }
        self.functional.validate()?;
        self.test_function.validate()?;
        if self.sampling.n == 0 {
            return Err(Error::Config("sampling.n must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.sampling.resample_below) {
            return Err(Error::Config("sampling.resample_below must lie in [0, 1)".into()));
        }
        if let Some(c) = &self.clock {
            c.validate()?;
        }
        if !experiment {
            return Ok(Resolved {
                weight,
                other,
                dynamics,
                starts,
            });
        }
        let needs_weight = !matches!(self.experiment, Experiment::PersistenceExponentLangevin);
        if needs_weight && weight.is_none() {
            return Err(Error::Config("this experiment needs a [weight] block".into()));
        }
        if self.experiment == Experiment::UniversalityRatioTest && other.is_none() {
            return Err(Error::Config("the universality experiment needs an [other_weight] block".into()));
        }
        if starts.is_empty() {
            return Err(Error::Config("sampling.starts needs at least one state".into()));
        }
        Ok(Resolved {
            weight,
            other,
            dynamics,
            starts,
        })
    }

    pub fn constant_normaliser(&self) -> Result<Normaliser> {
        match &self.clock {
            Some(ClockSpec::Constant { normaliser }) => Ok(*normaliser),
            None => Ok(Normaliser::SqrtPiTOver2),
            Some(_) => Err(Error::Config("constant_clock_limit needs a constant clock".into())),
        }
    }
}
