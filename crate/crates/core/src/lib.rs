//! Low-rank Kronecker solvers with guaranteed error certificates for
//! divergence-form elliptic problems with oscillating separable coefficients.

// `!(x > 0)` also rejects NaN, which is the intent wherever it appears.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficients;
pub mod error;
pub mod error_bounds;
pub mod kron_fem;
pub mod lowrank;
pub mod operator_bounds;
pub mod precond;
pub mod problem;
pub mod quadrature;
pub mod scalar;
pub mod sinc_inv;
pub mod solver;

pub use error::{Error, ErrorCategory, Result};
pub use scalar::Scalar;

pub type Coefficient = coefficients::SeparableCoefficient<f64>;
pub type Rhs = coefficients::SeparableRhs<f64>;
pub type Function = coefficients::SeparableFunction<f64>;
pub type Factor1d = coefficients::UnivariateFactor<f64>;
pub type KronMatrix = kron_fem::KroneckerMatrix<f64>;
pub type Vector = lowrank::LowRankVector<f64>;
pub type Truncation = lowrank::TruncationPolicy<f64>;
pub type Problem = problem::DiscreteProblem<f64>;
pub type Config = solver::SolveConfig<f64>;
pub type Certificate = error_bounds::ErrorCertificate<f64>;
pub type Spectral = operator_bounds::SpectralReport<f64>;
