//! Polynomial constraints `p(v, Δ(v)) ≥ 0` on scalar nonlinearities.

mod constraint;
mod delta;
mod verify;

pub use constraint::{
    box_validity, hand_constraints, pade_approximant, pade_constraint, sector_constraint, taylor_constraint,
    to_f64_coeffs, CatalogEntry, PolynomialConstraint, Provenance, Validity, ValidityKind, VW,
};
pub use delta::{taylor_coefficients, DeltaOperator, DeltaTag, Series, MAX_SERIES_DEGREE};
pub use verify::{max_valid_interval, render_csv, verify_constraint, VerifyReport, Violation, VERIFY_TOL};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstraintError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("[{m}/{n}] Padé system is singular")]
    SingularPade { m: usize, n: usize },
    #[error("denominator is not positive at v = {at}")]
    DenominatorRoot { at: f64 },
}
