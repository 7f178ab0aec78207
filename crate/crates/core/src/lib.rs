//! Diffuse-interface solvers and checks of the Gibbs–Thomson law in the
//! sharp-interface limit: double-well profiles, Cahn–Hilliard and
//! Ohta–Kawasaki stationary states, interface extraction and curvature,
//! diffuse surface measures, and profile-based comparison functions.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod comparison;
pub mod error;
pub mod field;
pub mod harness;
pub mod interface;
pub mod interp;
pub mod krylov;
pub mod measure;
pub mod potential;
pub mod solve;
pub mod spectral;

pub use error::{Error, Result};
pub use field::{Grid, ScalarField};
pub use harness::{run_study, StudyConfig, StudyKind, StudyReport};
pub use potential::{DoubleWell, ProfileTable};
pub use solve::{NewtonSettings, SolveReport};
