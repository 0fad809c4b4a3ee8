//! Desk-scale numerical laboratory for generalized incompressible flows on
//! the flat torus: exact and entropic minimization of the kinetic action
//! over discrete path measures, pressure fields as incompressibility duals,
//! constructive flow surgery with certified action budgets, a spectral
//! Dacorogna-Moser rearrangement, and the stability experiments built on
//! top of them.

pub mod brenier;
pub mod coupling;
pub mod dacmoser;
pub mod error;
pub mod experiments;
pub mod extended;
pub mod fields;
pub mod io;
pub mod lp;
pub mod surgery;
pub mod torus;
pub mod transport;

pub use error::{Error, Result};
