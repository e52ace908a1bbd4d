//! Boltzmann dynamics in the whole space near global Maxwellians.
//!
//! The crate evaluates the global-Maxwellian family, discretizes the cutoff
//! collision integral, computes the smallness constants that control the
//! mild-solution fixed point, and builds the wave and scattering operators on
//! top of a Picard solver in the comoving frame.

pub mod bounds;
pub mod cli;
pub mod collision;
pub mod error;
pub mod maxwellian;
pub mod par;
pub mod phase_field;
pub mod quad;
pub mod scattering;
pub mod solver;

pub use error::{Error, Result};
