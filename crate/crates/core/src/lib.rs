//! Pseudospectral simulation of simultaneous macrophase and microphase
//! separation in a polymer blend: a Cahn-Hilliard equation for the
//! blend order parameter `u` coupled to a Cahn-Hilliard-Oono equation
//! for the copolymer order parameter `v`, on a rectangle with
//! homogeneous Neumann boundary conditions.
//!
//! The crate is organized around four pieces:
//!
//! - [`potential`]: the bivariate free-energy density (Flory-Huggins
//!   mixing entropy plus polynomial coupling), its global fourth-order
//!   Taylor regularization, derivatives, and coercivity certificates.
//! - [`spectral`]: cell-centered cosine discretization of the Neumann
//!   Laplacian, the inverse operator on zero-mean fields, the dual
//!   norms built from it, and diagonal Helmholtz-type solves.
//! - [`dynamics`]: a stabilized first-order IMEX stepper that is
//!   diagonal in cosine space, with exact discrete mass laws and an
//!   energy-dissipation guard.
//! - [`diagnostics`]: energies, mass trajectories against closed
//!   forms, separation margins, stationarity detection, and a
//!   linearized growth-rate oracle.

pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod potential;
pub mod selftest;
pub mod spectral;

pub use diagnostics::{
    linear_growth_rates, DiagnosticsRecord, EnergyBreakdown, StationarityReport,
};
pub use dynamics::{InitKind, Mode, ModelParams, RunOutcome, State, Stepper, StepperConfig, StopReason};
pub use error::{Error, Result};
pub use potential::{Component, Partial, PotentialParams};
pub use spectral::{Field, Grid, SpectralField, Workspace};
