//! Adaptive-multilevel BDDC laboratory for 2D linear elasticity.
//!
//! The crate assembles Q1 plane-strain problems on the unit square,
//! decomposes them into a hierarchy of substructures, builds the
//! multilevel BDDC preconditioner with either fixed (corner / corner +
//! edge-average) or adaptively enriched coarse spaces, and drives
//! preconditioned conjugate gradients with a Lanczos condition-number
//! estimate. The adaptive enrichment solves a generalized eigenvalue
//! problem per pair of adjacent substructures and turns the offending
//! eigenvectors into new coarse degrees of freedom until all retained
//! eigenvalues fall below a target threshold.

pub mod adaptive;
pub mod bddc;
pub mod decomposition;
pub mod error;
pub mod fem;
pub mod harness;
pub mod krylov;
pub mod linalg;
pub mod setup;
pub mod sparse;

pub use error::{Error, Result};
