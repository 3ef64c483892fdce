//! Accelerated sketch-and-project methods.
//!
//! * [`solver`]: randomized projections for `Ax = b`, plain and accelerated.
//! * [`inverter`]: symmetric matrix inversion by sketched BFGS-style updates.
//! * [`bfgs`]: quasi-Newton optimization with the accelerated inverse-Hessian update.
//! * [`oracle`]: brute-force spectral constants on small instances.
//! * [`data`]: LIBSVM ingestion and synthetic test matrices.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bfgs;
pub mod data;
pub mod error;
pub mod inverter;
pub mod linalg;
pub mod oracle;
pub mod params;
pub mod record;
pub mod sketch;
pub mod solver;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, SymMatrix, Vector};
pub use params::{derive_params, params_from_s, AccelParams};
pub use sketch::{SketchSample, SketchSpec, SketchStrategy, Sketcher};
