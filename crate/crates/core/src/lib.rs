//! Banded rational approximation of fractional powers of discrete Laplacians
//! and method-of-lines solvers for fractional-in-space reaction-diffusion.

pub mod banded;
pub mod commands;
pub mod config;
pub mod error;
pub mod integrator;
pub mod operators;
pub mod oracle;
pub mod problems;
pub mod quadrature;
pub mod rational;
pub mod special;

pub use error::{Error, Result};
