//! Optimal recovery of Stokes flows from linear measurements when the
//! velocity boundary data is partially or completely unknown.
//!
//! The crate builds Taylor-Hood Q2/Q1 discretizations on quadrilateral
//! meshes, computes Riesz representers of Gaussian measurement functionals
//! in the space of Stokes solutions normed by a fractional trace norm, and
//! assembles the recovered field from a regularized Gram system.

pub mod assembly;
pub mod element;
pub mod femspace;
pub mod linalg;
pub mod measurements;
pub mod mesh;
pub mod recovery;
pub mod riesz;

pub use mesh::{Mesh, MeshError, Point};
pub use recovery::{ExactSolution, RecoveryParams, RecoveryResult, Session};

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
