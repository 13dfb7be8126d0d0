//! Deep Ritz solver for the spectral fractional Laplacian on hypercubes,
//! posed on the Caffarelli–Silvestre extension.

pub mod ad;
pub mod ansatz;
pub mod cli;
pub mod config;
pub mod domain;
pub mod error;
mod linalg;
pub mod quadrature;
pub mod reference;
pub mod sum;
pub mod training;

pub use error::{Error, Result};
