//! Detection and characterisation of delay-induced uncertainty (DIU) in
//! kicked oscillators.
//!
//! The crate simulates the Ultradian glucose-insulin model under pulsatile
//! nutritional forcing and a delay linear shear flow on the cylinder, and
//! estimates maximal Lyapunov exponents per kick-relaxation cycle.
//!
//! Module map:
//!
//! - [`model`]: Ultradian state, parameters and vector field.
//! - [`forcing`]: kick schedules, meal drive signals, reproducible RNG streams.
//! - [`integrate`]: adaptive integrators and the hybrid kick-relaxation runner.
//! - [`lyapunov`]: two-trajectory maximal Lyapunov exponent and ensembles.
//! - [`shearflow`]: the kicked delay linear shear flow and its characteristic equation.
//! - [`analysis`]: Hopf scans, exponent sweeps and empirical glucose distributions.

pub mod analysis;
pub mod error;
pub mod forcing;
pub mod integrate;
pub mod lyapunov;
pub mod model;
pub mod shearflow;

pub use error::{Error, Result};
