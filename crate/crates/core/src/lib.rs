//! Characteristic-based solver for quasilinear hyperbolic initial-boundary
//! value problems on the strip `R^{d-1} x (0, 1)`.
//!
//! The solution of every transport equation is written as an integral along
//! backward characteristics, seeded on the inflow surface (the initial time
//! slice plus the top face `x_d = 1`). Coupled systems are solved by nested
//! fixed-point iterations on slabs whose length is certified from norm
//! estimates of the data.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod characteristics;
pub mod field;
pub mod geometry;
pub mod lattice;
pub mod microphysics;
pub mod oracle;
pub mod quasilinear;
pub mod scenario;
pub mod transport;
