//! Fermionic Gaudin–Gillespie–Ripka cluster expansion for spin-½ Jastrow–Slater
//! trial states on a periodic box.

pub mod diagrams;
pub mod energy;
pub mod error;
pub mod evaluation;
pub mod expansion;
pub mod numerics;
pub mod oracle;
pub mod polyhedron;
pub mod scattering;
pub mod torus;

pub use error::{GgrError, Result};
