//! Sparse multivariate polynomials: arithmetic, calculus, substitution,
//! monomial bases and the text grammar used by configs.

mod basis;
mod monomial;
mod parse;
mod polynomial;
mod scalar;

pub use basis::{basis_size, MonomialBasis};
pub use monomial::{monomials_up_to, Monomial};
pub use parse::{parse, render};
pub use polynomial::{union_vars, Polynomial};
pub use scalar::Scalar;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolyError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("dimension mismatch: expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}
