//! Numerical laboratory for local minimizers of the vectorial Alt-Caffarelli
//! functional `J(U) = int |grad U|^2 + Lambda |{|U| > 0}|` on uniform grids.
//!
//! The crate computes discrete minimizers with prescribed boundary data and
//! the diagnostics used to study their free boundaries: the Weiss energy and
//! its monotonicity, the Alt-Caffarelli-Friedman functional, Lebesgue
//! densities, linear blow-ups and their rank, quantitative symmetry strata,
//! and Jones beta numbers of measures supported on singular sets.

pub mod blowup;
pub mod energy;
pub mod error;
pub mod field_io;
pub mod grid;
pub mod minimizer;
pub mod model;
pub mod monotonicity;
pub mod quadrature;
pub mod stratification;

pub use error::{Error, Result};
