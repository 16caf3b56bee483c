//! Numerical laboratory for sphere-valued maps minimizing convex gradient
//! energies of the form `∫ F(x, u, |∇u|²) dx`.
//!
//! The crate discretizes such maps on regular grids, minimizes the energy by
//! projected gradient descent, and analyzes the resulting (near-)stationary
//! maps: monotone density profiles with their integral correction, singular
//! point detection via density thresholds, symmetry defects and quantitative
//! strata, Jones β₂ numbers of weighted point clouds, covering refinement and
//! Minkowski content estimates.

pub mod error;
pub mod fields;
pub mod integrand;
pub mod monotone;
pub mod quad;
pub mod solver;
pub mod strata;

pub use error::{Error, Result};
pub use fields::{DomainShape, EnergyField, GridDomain, SphereMap};
pub use integrand::{AssumptionReport, IntegrandKind, IntegrandModel};
pub use monotone::MonotoneProfile;
pub use solver::{SolveConfig, SolveReport};
pub use strata::{CoverReport, MeasureCloud, StratumReport, ThresholdConfig};
