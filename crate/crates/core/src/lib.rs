//! Numerical special functions, matrix-variate distributions and
//! Selberg-type eigenvalue integrals over the real (β = 1), complex (β = 2)
//! and quaternion (β = 4) division algebras. The octonion tag (β = 8) is
//! accepted by every closed-form evaluator and rejected by every routine
//! that needs concrete matrices.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod algebra;
pub mod ensembles;
pub mod error;
pub mod hypergeom;
pub mod jack;
pub mod quadrature;
pub mod rng;
pub mod selberg;
pub mod specfun;
pub mod stats;

pub use algebra::{AlgebraTag, DAMatrix, HermitianMatrix, Scalar, UnitaryMatrix};
pub use error::{Error, Result};
pub use ensembles::{Density, EnsembleSpec, ParamMatrix, Sampler, SupportRegion};
pub use hypergeom::HypSeriesResult;
pub use jack::JackTable;
pub use selberg::{Convention, IdentityCase, VerificationReport};
pub use specfun::{LogValue, Partition};
pub use stats::{McConfig, McEstimate};
