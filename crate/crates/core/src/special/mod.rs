//! Special functions and quadrature used by the invariant functions.

pub mod gamma;
pub mod hypergeometric;
pub mod langevin;
pub mod quadrature;

pub use gamma::gamma;
pub use hypergeometric::hypergeometric_u;
pub use langevin::{langevin_h, langevin_h_dx};
pub use quadrature::{integrate, integrate_to_infinity, QuadOptions, Quadrature};
