use serde::{Deserialize, Serialize};

use super::param::{LinExpr, ParamPoly};
use super::SosError;
use crate::poly::{monomials_up_to, Monomial, MonomialBasis, Polynomial};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionKind {
    FreePolynomial,
    SosPolynomial,
}

/// A polynomial unknown of an [`SosProgram`].
#[derive(Clone, Debug)]
pub struct PolyDecisionVar {
    pub name: String,
    pub vars: Vec<String>,
    pub max_degree: u32,
    pub kind: DecisionKind,
    pub vanish_at_origin: bool,
    /// Free kind: the coefficient monomials. Sos kind: the Gram basis.
    pub monomials: Vec<Monomial>,
    pub(crate) first_atom: usize,
}

impl PolyDecisionVar {
    pub fn num_atoms(&self) -> usize {
        match self.kind {
            DecisionKind::FreePolynomial => self.monomials.len(),
            DecisionKind::SosPolynomial => tri_len(self.monomials.len()),
        }
    }

    pub fn basis(&self) -> MonomialBasis {
        MonomialBasis::from_monomials(&self.vars, self.monomials.clone())
    }
}

#[derive(Clone, Debug)]
pub struct ScalarVar {
    pub name: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub(crate) atom: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    /// Expression must be a sum of squares.
    Sos,
    /// Expression must vanish identically.
    Zero,
}

#[derive(Clone, Debug)]
pub struct ProgramConstraint {
    pub name: String,
    pub kind: ConstraintKind,
    pub expr: ParamPoly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PolyHandle(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScalarHandle(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConstraintId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Atom {
    Free,
    Gram { decision: usize, row: usize, col: usize },
}

pub(crate) fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Index of entry `(a, b)`, `a <= b`, in row-major upper-triangular order.
pub(crate) fn tri_index(n: usize, a: usize, b: usize) -> usize {
    debug_assert!(a <= b && b < n);
    a * n - a * (a + 1) / 2 + b
}

/// Symbolic SOS feasibility program: polynomial and scalar unknowns, SOS and
/// zero constraints affine in those unknowns, and an optional scalar to maximize.
#[derive(Clone, Debug, Default)]
pub struct SosProgram {
    pub(crate) atoms: Vec<Atom>,
    pub(crate) decisions: Vec<PolyDecisionVar>,
    pub(crate) scalars: Vec<ScalarVar>,
    pub(crate) constraints: Vec<ProgramConstraint>,
    pub(crate) objective: Option<ScalarHandle>,
}

impl SosProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn decisions(&self) -> &[PolyDecisionVar] {
        &self.decisions
    }

    pub fn scalars(&self) -> &[ScalarVar] {
        &self.scalars
    }

    pub fn constraints(&self) -> &[ProgramConstraint] {
        &self.constraints
    }

    pub fn objective(&self) -> Option<ScalarHandle> {
        self.objective
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Free polynomial with the given coefficient monomials.
    pub fn new_free_poly<S: AsRef<str>>(&mut self, name: &str, vars: &[S], monomials: Vec<Monomial>) -> PolyHandle {
        let vars: Vec<String> = vars.iter().map(|s| s.as_ref().to_string()).collect();
        let first_atom = self.atoms.len();
        self.atoms.extend(std::iter::repeat_n(Atom::Free, monomials.len()));
        let max_degree = monomials.iter().map(Monomial::degree).max().unwrap_or(0);
        let vanish_at_origin = !monomials.iter().any(Monomial::is_one);
        self.decisions.push(PolyDecisionVar {
            name: name.to_string(),
            vars,
            max_degree,
            kind: DecisionKind::FreePolynomial,
            vanish_at_origin,
            monomials,
            first_atom,
        });
        PolyHandle(self.decisions.len() - 1)
    }

    /// Free polynomial spanning every monomial with degree in `[min_degree, max_degree]`.
    pub fn new_free_poly_degrees<S: AsRef<str>>(
        &mut self,
        name: &str,
        vars: &[S],
        min_degree: u32,
        max_degree: u32,
    ) -> PolyHandle {
        let monomials = monomials_up_to(vars.len(), min_degree, max_degree);
        self.new_free_poly(name, vars, monomials)
    }

    /// SOS polynomial `z(x)ᵀ Q z(x)` with `z` all monomials up to `degree / 2`.
    /// `vanish_at_origin` drops the constant from `z`.
    pub fn new_sos_poly<S: AsRef<str>>(
        &mut self,
        name: &str,
        vars: &[S],
        degree: u32,
        vanish_at_origin: bool,
    ) -> Result<PolyHandle, SosError> {
        if degree % 2 != 0 {
            return Err(SosError::OddSosDegree { name: name.to_string(), degree });
        }
        let lo = if vanish_at_origin { 1 } else { 0 };
        let basis = monomials_up_to(vars.len(), lo, degree / 2);
        Ok(self.new_sos_poly_with_basis(name, vars, basis))
    }

    pub fn new_sos_poly_with_basis<S: AsRef<str>>(&mut self, name: &str, vars: &[S], mut basis: Vec<Monomial>) -> PolyHandle {
        basis.sort();
        basis.dedup();
        let vars: Vec<String> = vars.iter().map(|s| s.as_ref().to_string()).collect();
        let decision = self.decisions.len();
        let first_atom = self.atoms.len();
        let n = basis.len();
        for row in 0..n {
            for col in row..n {
                self.atoms.push(Atom::Gram { decision, row, col });
            }
        }
        let max_degree = 2 * basis.iter().map(Monomial::degree).max().unwrap_or(0);
        let vanish_at_origin = !basis.iter().any(Monomial::is_one);
        self.decisions.push(PolyDecisionVar {
            name: name.to_string(),
            vars,
            max_degree,
            kind: DecisionKind::SosPolynomial,
            vanish_at_origin,
            monomials: basis,
            first_atom,
        });
        PolyHandle(decision)
    }

    pub fn new_scalar(&mut self, name: &str, lower: Option<f64>, upper: Option<f64>) -> ScalarHandle {
        let atom = self.atoms.len();
        self.atoms.push(Atom::Free);
        self.scalars.push(ScalarVar { name: name.to_string(), lower, upper, atom });
        ScalarHandle(self.scalars.len() - 1)
    }

    pub fn decision(&self, h: PolyHandle) -> &PolyDecisionVar {
        &self.decisions[h.0]
    }

    /// The decision polynomial as an affine expression in its atoms.
    pub fn poly(&self, h: PolyHandle) -> ParamPoly {
        let d = &self.decisions[h.0];
        let mut terms = std::collections::BTreeMap::new();
        match d.kind {
            DecisionKind::FreePolynomial => {
                for (k, m) in d.monomials.iter().enumerate() {
                    terms.insert(m.clone(), LinExpr::atom(d.first_atom + k, 1.0));
                }
            }
            DecisionKind::SosPolynomial => {
                let n = d.monomials.len();
                for a in 0..n {
                    for b in a..n {
                        let m = d.monomials[a].mul(&d.monomials[b]);
                        let w = if a == b { 1.0 } else { 2.0 };
                        let slot: &mut LinExpr = terms.entry(m).or_default();
                        slot.add_scaled(&LinExpr::atom(d.first_atom + tri_index(n, a, b), w), 1.0);
                    }
                }
            }
        }
        ParamPoly::from_terms(d.vars.clone(), terms)
    }

    pub fn scalar(&self, h: ScalarHandle) -> LinExpr {
        LinExpr::atom(self.scalars[h.0].atom, 1.0)
    }

    pub fn add_sos_constraint(&mut self, name: &str, expr: ParamPoly) -> ConstraintId {
        self.constraints.push(ProgramConstraint { name: name.to_string(), kind: ConstraintKind::Sos, expr });
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn add_eq_constraint(&mut self, name: &str, expr: ParamPoly) -> ConstraintId {
        self.constraints.push(ProgramConstraint { name: name.to_string(), kind: ConstraintKind::Zero, expr });
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn maximize(&mut self, h: ScalarHandle) {
        self.objective = Some(h);
    }

    /// Decision polynomial evaluated at atom values.
    pub fn resolve_poly(&self, h: PolyHandle, values: &[f64]) -> Polynomial<f64> {
        self.poly(h).resolve(values)
    }
}
