//! Image-set collaborative representation classification.
//!
//! A query image set is modeled as a hull `Y a` (with `sum(a) = 1`) and
//! represented jointly over all compressed gallery dictionaries `D`. The
//! query is assigned to the class whose slice of the representation leaves
//! the smallest residual.
//!
//! Two engines are provided:
//!
//! * [`rh`]: regularized hulls with l2 (closed form) or l1 (augmented
//!   Lagrangian with alternating lasso steps) penalties.
//! * [`kch`]: kernelized convex hulls, solved as a two-block QP over
//!   capped simplices.

pub mod compression;
pub mod error;
pub mod harness;
pub mod kch;
pub mod model;
pub mod rh;
pub mod solvers;

pub use error::{Error, ErrorKind, Result};
pub use model::{
    classify, residual_per_class, ClassResidual, ClassificationResult, CompressedGalleryCollection,
    FeatureMatrix, GalleryClass, HullSolution, ImageSet, KernelSpec, Residuals, SolverConfig,
};
