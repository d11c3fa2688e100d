//! Sum-of-squares programs: symbolic construction, compilation to a PSD-cone
//! problem, an interior-point backend, and certificate checking.

mod certificate;
mod compile;
mod ipm;
mod param;
mod program;

pub use certificate::{
    check_certificate, min_eigenvalue, project_gram, solve_program, solve_with, ConstraintGram, ResidualReport, SosCertificate,
};
pub use compile::{
    compile, compile_with, gram_parameterize, newton_box_basis, BlockInfo, CompileOptions, ConicProblem, EqRow,
    GramVar,
};
pub use ipm::{ConicBackend, ConicSolution, InteriorPoint, SolveStatus, SolverTolerances};
pub use param::{LinExpr, ParamPoly};
pub use program::{
    ConstraintId, ConstraintKind, DecisionKind, PolyDecisionVar, PolyHandle, ProgramConstraint, ScalarHandle,
    ScalarVar, SosProgram,
};

use thiserror::Error;

use crate::poly::PolyError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SosError {
    #[error("constraint `{constraint}`: monomial {monomial} has a fixed nonzero coefficient that no Gram product reaches")]
    DegreeInconsistency { constraint: String, monomial: String },
    #[error("constraint `{constraint}`: coefficient of {monomial} is fixed at {value}, cannot vanish")]
    InconsistentEquality { constraint: String, monomial: String, value: f64 },
    #[error("sos polynomial `{name}` needs an even degree, got {degree}")]
    OddSosDegree { name: String, degree: u32 },
    #[error(transparent)]
    Poly(#[from] PolyError),
}
