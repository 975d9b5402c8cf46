//! Locally A-optimal experimental designs under generalized linear models.
//!
//! Two solvers cover the two kinds of design problem:
//!
//! - [`liftone`] optimizes the weights of a fixed finite candidate set by
//!   coordinate ascent with an analytic one-dimensional maximizer, including
//!   the closed-form solution for saturated designs.
//! - [`forlion`] searches mixed continuous/discrete design spaces by
//!   alternating point merging, lift-one weight optimization, and a
//!   box-constrained ascent of the sensitivity function, stopping on the
//!   general-equivalence-theorem certificate.
//!
//! [`rounding`] converts approximate weights into exact unit allocations and
//! [`evaluation`] provides efficiency ratios, GLM refitting, and the
//! stratified-sampling study harness.

pub mod design;
pub mod error;
pub mod evaluation;
pub mod forlion;
pub mod glm;
pub mod liftone;
pub mod rounding;

mod boxopt;

pub use design::{
    build_model_matrix, f_minor, fisher_info, h_value, ApproximateDesign, DesignSpace,
    ExactDesign, Factor, InfoDecomposition,
};
pub use error::{Error, Result};
pub use glm::{BasisTerm, CustomTerm, Family, GlmModel, Link, PredictorBasis};
