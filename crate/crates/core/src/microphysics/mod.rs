//! Cloud microphysics on the strip: dry air `rho` and vapour `pi` carried by
//! the gas velocity, droplet and crystal mass spectra `sigma(t, m, x)` and
//! `nu(t, m, x)` falling through the column while they condense, freeze,
//! melt, activate on aerosols and coalesce.
//!
//! The four equations become a coupled system with `y = (rho, pi)` and
//! `w = (sigma, nu)` over the coordinates `(m, x)`. The spectrum sources
//! depend on whole columns through mass integrals, which the solver supplies
//! via lattice access.

mod kernels;
mod params;
mod system;

pub use kernels::{
    column_moments, eval_coagulation, eval_f, eval_p, gas_terms, nu_terms, riming_budget, sigma_terms, Column,
    ColumnMoments, MassGrid, NuTerms, RimingBudget, SigmaTerms,
};
pub use params::{Kernel, MicrophysicsParams, Profile, Rate, VapourExchange};
pub use system::{
    assemble_gas_rhs, assemble_nu_rhs, assemble_sigma_rhs, build_system, diagnostics, fd_divergence, water_budget,
    AtmosphereDiagnostics, AtmosphereModel, AtmosphereSource, AtmosphereState, AtmosphereSystem, ColumnData,
    DivergenceFallback, WaterBudget, STATE_SLACK,
};

use crate::field::FieldError;
use thiserror::Error;

#[derive(Debug, Error, Clone)]
pub enum MicroError {
    #[error("particle speeds leave the falling cone: {}", .0.join("; "))]
    ConeViolation(Vec<String>),
    #[error("support or sign violation: {}", .0.join("; "))]
    SupportViolation(Vec<String>),
    #[error("invalid atmosphere setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}
