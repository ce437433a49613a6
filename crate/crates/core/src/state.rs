//! Points of the augmented state space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which reference process a state, path or weight belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Brownian,
    Stable,
    Langevin,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::Brownian => "brownian",
            Model::Stable => "stable",
            Model::Langevin => "langevin",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Model::Brownian => 0,
            Model::Stable => 1,
            Model::Langevin => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Model::Brownian),
            1 => Some(Model::Stable),
            2 => Some(Model::Langevin),
            _ => None,
        }
    }

    /// Names of the three coordinates, in storage order.
    pub fn coordinate_names(self) -> [&'static str; 3] {
        match self {
            Model::Brownian | Model::Stable => ["x", "y", "l"],
            Model::Langevin => ["b", "a", "y"],
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A point `(x, y, l)` for Brownian/stable models or `(b, a, y)` for the
/// Langevin model.
///
/// For line models `x` is the position, `y ≥ x` the recorded supremum and
/// `l ≥ 0` the accumulated local time at zero. For the Langevin model `b` is
/// the velocity, `a` the integrated position and `y ≥ a` its supremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelState<T> {
    pub model: Model,
    pub coords: [T; 3],
}

impl<T: Real> ModelState<T> {
    pub fn brownian(x: T, y: T, l: T) -> Self {
        Self {
            model: Model::Brownian,
            coords: [x, y, l],
        }
    }

    pub fn stable(x: T, y: T, l: T) -> Self {
        Self {
            model: Model::Stable,
            coords: [x, y, l],
        }
    }

    pub fn langevin(b: T, a: T, y: T) -> Self {
        Self {
            model: Model::Langevin,
            coords: [b, a, y],
        }
    }

    /// Starting state with the supremum equal to the position and no local time.
    pub fn fresh(model: Model, position: T) -> Self {
        match model {
            Model::Brownian | Model::Stable => Self {
                model,
                coords: [position, position, T::zero()],
            },
            Model::Langevin => Self::langevin(T::zero(), position, position),
        }
    }

    /// Position on the line (`x`), or the velocity `b` for Langevin states.
    pub fn position(&self) -> T {
        self.coords[0]
    }

    /// Recorded supremum: `y` for every model.
    pub fn supremum(&self) -> T {
        match self.model {
            Model::Brownian | Model::Stable => self.coords[1],
            Model::Langevin => self.coords[2],
        }
    }

    /// Local time (line models only; zero for Langevin).
    pub fn local_time(&self) -> T {
        match self.model {
            Model::Brownian | Model::Stable => self.coords[2],
            Model::Langevin => T::zero(),
        }
    }

    pub fn velocity(&self) -> T {
        self.coords[0]
    }

    /// Integrated position `a` (Langevin only).
    pub fn integral(&self) -> T {
        self.coords[1]
    }

    /// Checks `y ≥ x` (resp. `y ≥ a`) and `l ≥ 0`.
    pub fn validate(&self) -> Result<()> {
        let finite_or_inf = |v: T| !v.is_nan();
        if !self.coords.iter().all(|&c| finite_or_inf(c)) {
            return Err(Error::Config(format!("state {:?} has NaN coordinates", self.coords)));
        }
        match self.model {
            Model::Brownian | Model::Stable => {
                let [x, y, l] = self.coords;
                if y < x {
                    return Err(Error::Config(format!("state requires y >= x, got x = {x}, y = {y}")));
                }
                if l < T::zero() {
                    return Err(Error::Config(format!("state requires l >= 0, got l = {l}")));
                }
            }
            Model::Langevin => {
                let [_, a, y] = self.coords;
                if y < a {
                    return Err(Error::Config(format!("state requires y >= a, got a = {a}, y = {y}")));
                }
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            model: self.model,
            coords: self.coords.map(|c| U::lit(c.as_f64())),
        }
    }
}
