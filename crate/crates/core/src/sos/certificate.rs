use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};

use super::compile::{compile_with, CompileOptions, ConicProblem, VarRef};
use super::ipm::{ConicBackend, ConicSolution, InteriorPoint, SolveStatus, SolverTolerances};
use super::program::{ConstraintKind, PolyHandle, ScalarHandle, SosProgram};
use super::SosError;
use crate::poly::{MonomialBasis, Polynomial};

/// Gram matrix certifying one SOS constraint.
#[derive(Clone, Debug)]
pub struct ConstraintGram {
    pub name: String,
    pub basis: MonomialBasis,
    pub gram: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct SosCertificate {
    pub status: SolveStatus,
    pub grams: Vec<ConstraintGram>,
    /// Resolved decision polynomials, in declaration order.
    pub decisions: Vec<(String, Polynomial<f64>)>,
    pub scalars: Vec<(String, f64)>,
    /// Shared Gram margin `t` of the feasibility phase.
    pub margin: Option<f64>,
    pub objective: Option<f64>,
    /// Largest coefficient mismatch over every constraint, recomputed from the
    /// resolved polynomials and the Gram matrices.
    pub max_residual: f64,
    pub min_eigenvalue: f64,
    pub iterations: usize,
    values: Vec<f64>,
}

impl SosCertificate {
    pub fn is_feasible(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn poly(&self, h: PolyHandle) -> &Polynomial<f64> {
        &self.decisions[h.0].1
    }

    pub fn scalar(&self, h: ScalarHandle) -> f64 {
        self.scalars[h.0].1
    }

    pub fn atom_values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualReport {
    /// `‖p − zᵀQz‖∞` over coefficients.
    pub max_residual: f64,
    pub min_eigenvalue: f64,
}

/// Recompute `zᵀQz` from scratch and compare it with `p`.
pub fn check_certificate(p: &Polynomial<f64>, basis: &MonomialBasis, gram: &DMatrix<f64>) -> ResidualReport {
    let mut zqz = Polynomial::zero(&basis.vars);
    let n = basis.len();
    for a in 0..n {
        for b in 0..n {
            let m = basis.monomials[a].mul(&basis.monomials[b]);
            let term = Polynomial::from_terms(&basis.vars, [(m, gram[(a, b)])]).expect("basis monomials fit");
            zqz = &zqz + &term;
        }
    }
    let asym = (gram - gram.transpose()).amax();
    ResidualReport {
        max_residual: p.max_coeff_diff(&zqz).max(asym),
        min_eigenvalue: min_eigenvalue(gram),
    }
}

/// Orthogonal projection of `gram` onto `{Q : zᵀQz = p}`: each monomial's
/// mismatch is spread evenly over the entries that produce it. Interior-point
/// iterates meet the coefficient equations only to solver accuracy; with a
/// positive eigenvalue margin the projected matrix stays PSD and matches `p`
/// to rounding.
pub fn project_gram(p: &Polynomial<f64>, basis: &MonomialBasis, gram: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.len();
    let mut groups: std::collections::BTreeMap<crate::poly::Monomial, Vec<(usize, usize)>> = Default::default();
    for a in 0..n {
        for b in 0..n {
            groups.entry(basis.monomials[a].mul(&basis.monomials[b])).or_default().push((a, b));
        }
    }
    let p = p.align_to(&basis.vars).unwrap_or_else(|_| p.clone());
    let mut out = sym(gram);
    for (m, entries) in &groups {
        let current: f64 = entries.iter().map(|&(a, b)| out[(a, b)]).sum();
        let delta = (p.coeff(m) - current) / entries.len() as f64;
        for &(a, b) in entries {
            out[(a, b)] += delta;
        }
    }
    out
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min()
}

pub fn solve_program(program: &SosProgram, tol: &SolverTolerances) -> Result<SosCertificate, SosError> {
    solve_with(program, tol, &InteriorPoint)
}

/// Feasibility first, in margin form; then, if the program has an objective
/// and is feasible, the objective without the margin.
pub fn solve_with(
    program: &SosProgram,
    tol: &SolverTolerances,
    backend: &dyn ConicBackend,
) -> Result<SosCertificate, SosError> {
    let phase1 = compile_with(program, CompileOptions { margin: true })?;
    let sol = backend.solve(&phase1, tol);
    let margin = phase1.feasibility_margin.map(|i| sol.free[i]);
    let mut iterations = sol.iterations;
    let status = match (sol.status, margin) {
        (SolveStatus::Infeasible, _) => SolveStatus::Infeasible,
        (SolveStatus::Optimal, Some(t)) if t < tol.min_margin - tol.feas => SolveStatus::Infeasible,
        (SolveStatus::Optimal, _) => SolveStatus::Optimal,
        (st, Some(t)) if t >= tol.min_margin && sol.primal_infeasibility <= 1e2 * tol.feas => {
            warn!("feasibility solve ended with {st:?} at a primal feasible point with margin {t:.3e}");
            SolveStatus::Optimal
        }
        (st, _) => st,
    };

    if status == SolveStatus::Optimal && program.objective.is_some() {
        let phase2 = compile_with(program, CompileOptions { margin: false })?;
        let sol2 = backend.solve(&phase2, tol);
        iterations += sol2.iterations;
        return Ok(build(program, &phase2, &sol2, sol2.status, None, iterations, tol));
    }
    Ok(build(program, &phase1, &sol, status, margin, iterations, tol))
}

fn build(
    program: &SosProgram,
    problem: &ConicProblem,
    sol: &ConicSolution,
    mut status: SolveStatus,
    margin: Option<f64>,
    iterations: usize,
    tol: &SolverTolerances,
) -> SosCertificate {
    let values: Vec<f64> = problem
        .layout
        .atom_map
        .iter()
        .map(|r| match *r {
            VarRef::Free(i) => sol.free[i],
            VarRef::Psd { block, row, col } => sol.blocks[block][(row, col)],
        })
        .collect();
    let shift = margin.unwrap_or(0.0);

    let mut grams = Vec::new();
    let mut max_residual: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    for (c, slot) in program.constraints.iter().zip(&problem.layout.constraint_blocks) {
        let p = c.expr.resolve(&values);
        match (c.kind, slot) {
            (ConstraintKind::Zero, _) => {
                max_residual = max_residual.max(p.max_abs_coeff());
            }
            (ConstraintKind::Sos, None) => {
                max_residual = max_residual.max(p.max_abs_coeff());
            }
            (ConstraintKind::Sos, Some(cb)) => {
                let x = &sol.blocks[cb.block];
                let mut gram = sym(x) + DMatrix::identity(x.nrows(), x.ncols()) * shift;
                let mut report = check_certificate(&p, &cb.basis, &gram);
                if report.max_residual > 0.0 {
                    let fixed = project_gram(&p, &cb.basis, &gram);
                    let r = check_certificate(&p, &cb.basis, &fixed);
                    if r.max_residual < report.max_residual && r.min_eigenvalue >= -tol.feas {
                        gram = fixed;
                        report = r;
                    }
                }
                max_residual = max_residual.max(report.max_residual);
                min_eig = min_eig.min(report.min_eigenvalue);
                grams.push(ConstraintGram { name: c.name.clone(), basis: cb.basis.clone(), gram });
            }
        }
    }
    for d in program.decisions.iter().filter(|d| d.kind == super::DecisionKind::SosPolynomial) {
        let n = d.monomials.len();
        if n == 0 {
            continue;
        }
        let q = DMatrix::from_fn(n, n, |a, b| {
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            values[d.first_atom + super::program::tri_index(n, a, b)]
        });
        min_eig = min_eig.min(min_eigenvalue(&q));
    }
    if !min_eig.is_finite() {
        min_eig = 0.0;
    }

    if status == SolveStatus::Optimal && (max_residual > tol.residual || min_eig < -tol.feas) {
        warn!("solver reported success but the independent check found residual {max_residual:.3e}, λmin {min_eig:.3e}");
        status = SolveStatus::NumericalFailure;
    }

    let decisions = (0..program.decisions.len())
        .map(|k| (program.decisions[k].name.clone(), program.poly(PolyHandle(k)).resolve(&values)))
        .collect();
    let scalars = program.scalars.iter().map(|s| (s.name.clone(), values[s.atom])).collect();
    let objective = program.objective.map(|h| values[program.scalars[h.0].atom]);
    SosCertificate {
        status,
        grams,
        decisions,
        scalars,
        margin,
        objective,
        max_residual,
        min_eigenvalue: min_eig,
        iterations,
        values,
    }
}

fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}
