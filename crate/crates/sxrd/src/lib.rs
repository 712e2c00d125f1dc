//! Structural extrapolation of regression-discontinuity effects for
//! school-spending referenda.
//!
//! The crate simulates a spatial-equilibrium economy with majority-rule
//! voting, estimates cutoff-specific RDD effects, recovers the structural
//! preference and housing-supply parameters from those estimates, fits a
//! selective-turnout model by maximum likelihood, and extrapolates average
//! arc elasticities away from the approval threshold.

pub mod model;
pub mod equilibrium;
pub mod voting;
pub mod dgp;
pub mod rdd;
pub mod ident;
pub mod mle;
pub mod extrap;
