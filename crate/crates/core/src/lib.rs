//! Legendre duality between a coupling matrix and the Green's function of a
//! Gaussian-plus-interaction Gibbs measure, with the self-energy functional,
//! its weak-coupling series, exact transformation rules and Dyson solvers.
//!
//! Integrals are computed numerically in dimension `N <= 6`: Gauss-Hermite
//! or adaptive box cubature for `N <= 3`, seeded Monte Carlo above that.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod duality;
pub mod dyson;
pub mod error;
pub mod integrate;
pub mod linalg;
pub mod model;
pub mod modelfile;
pub mod quadrature;
pub mod reproduce;
pub mod rules;
pub mod series;

pub use error::{LwError, Result};
pub use integrate::IntegrationSpec;
pub use linalg::SymMatrix;
pub use model::{GibbsModel, Interaction};
