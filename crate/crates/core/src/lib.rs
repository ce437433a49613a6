//! Penalisation of Markov processes by multiplicative weights.
//!
//! Samplers for Brownian motion, strictly stable Lévy processes and the
//! Langevin (integrated Brownian) process together with their supremum,
//! local time and integral; multiplicative weights Γ and their invariant
//! functions φ; penalised laws realised by martingale reweighting; and the
//! limit experiments built on top of them.
//!
//! The numerical core is generic over [`Real`] where it does not sample;
//! simulation runs in `f64`, and the aliases below name the `f64` versions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bvp;
pub mod dump;
pub mod error;
pub mod experiments;
pub mod functions;
pub mod measure;
pub mod paths;
pub mod phi;
pub mod rng;
pub mod scalar;
pub mod special;
pub mod stable;
pub mod state;
pub mod stats;
pub mod weights;

pub use error::{Error, Result};
pub use measure::{EnsembleConfig, WeightedEnsemble};
pub use paths::{Dynamics, PathSample, State, TimeGrid};
pub use scalar::Real;
pub use stats::MCEstimate;

pub type Weight = weights::WeightSpec<f64>;
pub type Phi = phi::PhiFn<f64>;
pub type PhiOptions = phi::PhiOptions<f64>;
pub type Stable = stable::StableParams<f64>;
pub type WeightFn = functions::WeightFn<f64>;
pub type Potential = functions::Potential<f64>;
pub type Table = functions::Table<f64>;
