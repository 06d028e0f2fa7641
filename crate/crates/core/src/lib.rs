//! Boundary element solver for time-harmonic electromagnetic scattering by
//! one or more homogeneous, possibly absorbing, dielectric particles.
//!
//! The surface traces of the scattered field are found from the PMCHWT
//! system, discretised with Rao-Wilton-Glisson functions for the Dirichlet
//! component and Buffa-Christiansen functions for the Neumann component, and
//! solved by restarted GMRES in one of six weak/strong formulations.

pub mod error;
pub mod mesh;
pub mod mie;
pub mod quadrature;
pub mod solver;
pub mod operators;
pub mod pmchwt;
pub mod postprocess;
pub mod spaces;

pub use error::{BemError, Result};
pub use num_complex::Complex64;
