use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::json;

use super::param::{LinExpr, ParamPoly};
use super::program::{tri_index, tri_len, Atom, ConstraintKind, DecisionKind, SosProgram};
use super::SosError;
use crate::poly::{monomials_up_to, Monomial, MonomialBasis};

/// Symmetric matrix unknown of dimension `dim`, stored as its upper triangle
/// in row-major order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GramVar {
    pub dim: usize,
}

impl GramVar {
    pub fn num_entries(&self) -> usize {
        tri_len(self.dim)
    }

    pub fn index(&self, a: usize, b: usize) -> usize {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        tri_index(self.dim, a, b)
    }

    /// `z(x)ᵀ Q z(x)` as an affine expression in atoms `offset..offset + num_entries()`.
    pub fn expression(&self, basis: &MonomialBasis, offset: usize) -> ParamPoly {
        let mut terms: BTreeMap<Monomial, LinExpr> = BTreeMap::new();
        for a in 0..self.dim {
            for b in a..self.dim {
                let m = basis.monomials[a].mul(&basis.monomials[b]);
                let w = if a == b { 1.0 } else { 2.0 };
                terms.entry(m).or_default().add_scaled(&LinExpr::atom(offset + self.index(a, b), w), 1.0);
            }
        }
        ParamPoly::from_terms(basis.vars.clone(), terms)
    }
}

/// Gram parameterization of a degree-`degree` polynomial. With `structure`
/// (the target's support) the basis is cut down to the Newton box of that
/// support; otherwise it is every monomial up to `degree / 2`.
pub fn gram_parameterize<S: AsRef<str>>(
    vars: &[S],
    degree: u32,
    structure: Option<&[Monomial]>,
) -> Result<(MonomialBasis, GramVar), SosError> {
    if degree % 2 != 0 {
        return Err(SosError::OddSosDegree { name: "gram".into(), degree });
    }
    let basis = match structure {
        Some(support) => {
            let mut b = newton_box_basis(vars, support);
            b.monomials.retain(|m| 2 * m.degree() <= degree);
            b
        }
        None => MonomialBasis::full(vars, degree / 2),
    };
    let dim = basis.len();
    Ok((basis, GramVar { dim }))
}

/// Monomials `m` such that `2m` lies in the bounding box of the support's
/// exponents and between its minimum and maximum total degree.
pub fn newton_box_basis<S: AsRef<str>>(vars: &[S], support: &[Monomial]) -> MonomialBasis {
    let n = vars.len();
    if support.is_empty() {
        return MonomialBasis::from_monomials(vars, Vec::new());
    }
    let mut lo = vec![u32::MAX; n];
    let mut hi = vec![0u32; n];
    let mut dmin = u32::MAX;
    let mut dmax = 0;
    for m in support {
        for (i, &e) in m.exponents().iter().enumerate() {
            lo[i] = lo[i].min(e);
            hi[i] = hi[i].max(e);
        }
        dmin = dmin.min(m.degree());
        dmax = dmax.max(m.degree());
    }
    let monomials = monomials_up_to(n, dmin.div_ceil(2), dmax / 2)
        .into_iter()
        .filter(|m| m.exponents().iter().enumerate().all(|(i, &e)| lo[i].div_ceil(2) <= e && e <= hi[i] / 2))
        .collect();
    MonomialBasis::from_monomials(vars, monomials)
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockInfo {
    pub dim: usize,
    pub label: String,
}

/// One linear equality `Σ free·u + Σ value·X_block[row, col] = rhs`, with
/// `row <= col` and `X` symmetric (an off-diagonal entry appears once).
#[derive(Clone, Debug, Default, Serialize)]
pub struct EqRow {
    pub free: Vec<(usize, f64)>,
    pub psd: Vec<(usize, usize, usize, f64)>,
    pub rhs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum VarRef {
    Free(usize),
    Psd { block: usize, row: usize, col: usize },
}

#[derive(Clone, Debug)]
pub(crate) struct ConstraintBlock {
    pub block: usize,
    pub basis: MonomialBasis,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct Layout {
    pub atom_map: Vec<VarRef>,
    pub constraint_blocks: Vec<Option<ConstraintBlock>>,
}

/// PSD-cone problem: minimize `objectiveᵀ u` over free variables `u` and PSD
/// blocks `X_k` subject to the equality rows.
#[derive(Clone, Debug)]
pub struct ConicProblem {
    pub n_free: usize,
    pub blocks: Vec<BlockInfo>,
    pub rows: Vec<EqRow>,
    pub objective: Vec<(usize, f64)>,
    /// Free variable whose sign decides feasibility in margin form. A backend
    /// may stop once it is nonnegative at a primal feasible point.
    pub feasibility_margin: Option<usize>,
    pub(crate) layout: Layout,
}

impl ConicProblem {
    /// `(label, dimension)` for every PSD block.
    pub fn census(&self) -> Vec<(String, usize)> {
        self.blocks.iter().map(|b| (b.label.clone(), b.dim)).collect()
    }

    /// Sparse-triplet dump: `{blocks, eq_rows, objective}`.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "n_free": self.n_free,
            "blocks": self.blocks,
            "eq_rows": self.rows.iter().map(|r| json!({
                "free": r.free.iter().map(|&(i, v)| json!([i, v])).collect::<Vec<_>>(),
                "psd": r.psd.iter().map(|&(b, i, j, v)| json!([b, i, j, v])).collect::<Vec<_>>(),
                "rhs": r.rhs,
            })).collect::<Vec<_>>(),
            "objective": self.objective.iter().map(|&(i, v)| json!([i, v])).collect::<Vec<_>>(),
            "feasibility_margin": self.feasibility_margin,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct CompileOptions {
    /// Write each SOS constraint's Gram as `Q' + t·I` with `Q' ⪰ 0`, one shared
    /// free `t ≤ 1`, and maximize `t`. Feasible iff `t* ≥ 0`. This keeps the
    /// conic problem strictly feasible whether or not the SOS program is.
    pub margin: bool,
}

/// Constants below this fraction of a constraint's largest coefficient are
/// treated as cancellation noise.
const NOISE: f64 = 1e-13;

pub fn compile(program: &SosProgram) -> Result<ConicProblem, SosError> {
    compile_with(program, CompileOptions::default())
}

pub fn compile_with(program: &SosProgram, opts: CompileOptions) -> Result<ConicProblem, SosError> {
    let mut blocks = Vec::new();
    let mut decision_block = vec![usize::MAX; program.decisions.len()];
    for (k, d) in program.decisions.iter().enumerate() {
        if d.kind == DecisionKind::SosPolynomial && !d.monomials.is_empty() {
            decision_block[k] = blocks.len();
            blocks.push(BlockInfo { dim: d.monomials.len(), label: format!("decision {}", d.name) });
        }
    }
    let mut n_free = 0;
    let mut atom_map = Vec::with_capacity(program.atoms.len());
    for atom in &program.atoms {
        atom_map.push(match *atom {
            Atom::Free => {
                n_free += 1;
                VarRef::Free(n_free - 1)
            }
            Atom::Gram { decision, row, col } => VarRef::Psd { block: decision_block[decision], row, col },
        });
    }

    let mut rows = Vec::new();
    let has_sos = program.constraints.iter().any(|c| c.kind == ConstraintKind::Sos);
    let margin = if opts.margin && has_sos {
        let t = n_free;
        n_free += 1;
        let slack = blocks.len();
        blocks.push(BlockInfo { dim: 1, label: "margin cap".into() });
        rows.push(EqRow { free: vec![(t, 1.0)], psd: vec![(slack, 0, 0, 1.0)], rhs: 1.0 });
        Some(t)
    } else {
        None
    };

    for s in &program.scalars {
        let VarRef::Free(u) = atom_map[s.atom] else { unreachable!() };
        for (bound, sign) in [(s.lower, -1.0), (s.upper, 1.0)] {
            if let Some(value) = bound {
                let slack = blocks.len();
                blocks.push(BlockInfo { dim: 1, label: format!("bound {}", s.name) });
                rows.push(EqRow { free: vec![(u, 1.0)], psd: vec![(slack, 0, 0, sign)], rhs: value });
            }
        }
    }

    let mut constraint_blocks = Vec::with_capacity(program.constraints.len());
    for c in &program.constraints {
        let scale = c.expr.terms().map(|(_, e)| e.scale()).fold(0.0, f64::max);
        let support: Vec<(&Monomial, &LinExpr)> = c
            .expr
            .terms()
            .filter(|(_, e)| e.has_atoms() || e.constant.abs() > NOISE * scale)
            .collect();
        let mut acc: BTreeMap<Monomial, EqRow> = BTreeMap::new();
        for (m, e) in &support {
            acc.insert((*m).clone(), linexpr_row(e, &atom_map));
        }
        match c.kind {
            ConstraintKind::Zero => {
                constraint_blocks.push(None);
                for (m, row) in acc {
                    if row.free.is_empty() && row.psd.is_empty() {
                        return Err(SosError::InconsistentEquality {
                            constraint: c.name.clone(),
                            monomial: format!("{:?}", m.exponents()),
                            value: -row.rhs,
                        });
                    }
                    rows.push(row);
                }
            }
            ConstraintKind::Sos => {
                let monos: Vec<Monomial> = support.iter().map(|(m, _)| (*m).clone()).collect();
                let basis = newton_box_basis(c.expr.vars(), &monos);
                if basis.is_empty() && monos.is_empty() {
                    constraint_blocks.push(None);
                    continue;
                }
                let block = blocks.len();
                if !basis.is_empty() {
                    blocks.push(BlockInfo { dim: basis.len(), label: format!("constraint {}", c.name) });
                }
                let mut products: BTreeSet<Monomial> = BTreeSet::new();
                for a in 0..basis.len() {
                    for b in a..basis.len() {
                        let m = basis.monomials[a].mul(&basis.monomials[b]);
                        let v = if a == b { 1.0 } else { 2.0 };
                        let row = acc.entry(m.clone()).or_default();
                        row.psd.push((block, a, b, -v));
                        if a == b {
                            if let Some(t) = margin {
                                match row.free.iter_mut().find(|(i, _)| *i == t) {
                                    Some(entry) => entry.1 -= 1.0,
                                    None => row.free.push((t, -1.0)),
                                }
                            }
                        }
                        products.insert(m);
                    }
                }
                for (m, row) in acc {
                    if !products.contains(&m) && row.free.is_empty() && row.psd.is_empty() {
                        return Err(SosError::DegreeInconsistency {
                            constraint: c.name.clone(),
                            monomial: format!("{:?}", m.exponents()),
                        });
                    }
                    rows.push(row);
                }
                constraint_blocks.push(if basis.is_empty() { None } else { Some(ConstraintBlock { block, basis }) });
            }
        }
    }

    let objective = match (margin, program.objective) {
        (Some(t), _) => vec![(t, -1.0)],
        (None, Some(h)) => {
            let VarRef::Free(u) = atom_map[program.scalars[h.0].atom] else { unreachable!() };
            vec![(u, -1.0)]
        }
        (None, None) => Vec::new(),
    };

    Ok(ConicProblem {
        n_free,
        blocks,
        rows,
        objective,
        feasibility_margin: margin,
        layout: Layout { atom_map, constraint_blocks },
    })
}

fn linexpr_row(e: &LinExpr, atom_map: &[VarRef]) -> EqRow {
    let mut row = EqRow { rhs: -e.constant, ..Default::default() };
    for (&atom, &v) in &e.coeffs {
        match atom_map[atom] {
            VarRef::Free(i) => row.free.push((i, v)),
            VarRef::Psd { block, row: a, col: b } => row.psd.push((block, a, b, v)),
        }
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{parse, Polynomial};

    #[test]
    fn gram_sizes() {
        let (b, g) = gram_parameterize(&["x"], 2, None).unwrap();
        assert_eq!(b.monomials, vec![Monomial::new(vec![0]), Monomial::new(vec![1])]);
        assert_eq!(g.dim, 2);
        let (b, _) = gram_parameterize(&["x", "w"], 4, None).unwrap();
        assert_eq!(b.len(), 6);
        assert!(gram_parameterize(&["x"], 3, None).is_err());
    }

    #[test]
    fn gram_expression_matches_matrix_form() {
        let (basis, g) = gram_parameterize(&["x", "y"], 2, None).unwrap();
        let values: Vec<f64> = (0..g.num_entries()).map(|k| k as f64 + 1.0).collect();
        let p = g.expression(&basis, 0).resolve(&values);
        let mut q = vec![vec![0.0; 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                q[a][b] = values[g.index(a, b)];
            }
        }
        for pt in [[0.3, -1.2], [2.0, 0.5]] {
            let z: Vec<f64> = basis.monomials.iter().map(|m| m.eval(&pt)).collect();
            let quad: f64 = (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).map(|(a, b)| z[a] * q[a][b] * z[b]).sum();
            assert!((p.eval(&pt) - quad).abs() < 1e-12);
        }
    }

    #[test]
    fn newton_box_trims_structured_supports() {
        // x^4 y^2 + x^2 + 1: box exponents x in [0,4], y in [0,2].
        let p: Polynomial<f64> = parse("x^4*y^2 + x^2 + 1", &["x", "y"]).unwrap();
        let support: Vec<Monomial> = p.terms().map(|(m, _)| m.clone()).collect();
        let b = newton_box_basis(&["x", "y"], &support);
        assert!(b.monomials.iter().all(|m| m.exponents()[0] <= 2 && m.exponents()[1] <= 1 && m.degree() <= 3));
        assert!(b.monomials.contains(&Monomial::new(vec![2, 1])));
        // Quartic with no constant or linear part: the constant leaves the basis.
        let q: Polynomial<f64> = parse("x^4 + x^2*y^2 + y^2", &["x", "y"]).unwrap();
        let support: Vec<Monomial> = q.terms().map(|(m, _)| m.clone()).collect();
        let b = newton_box_basis(&["x", "y"], &support);
        assert!(!b.monomials.iter().any(Monomial::is_one));
    }

    #[test]
    fn fixed_monomial_outside_every_product_is_rejected() {
        let mut prog = SosProgram::new();
        let p: Polynomial<f64> = parse("x^3 + 1", &["x"]).unwrap();
        prog.add_sos_constraint("odd", ParamPoly::from_poly(&p));
        assert!(matches!(compile(&prog), Err(SosError::DegreeInconsistency { .. })));
    }

    #[test]
    fn debug_dump_has_documented_keys() {
        let mut prog = SosProgram::new();
        let p: Polynomial<f64> = parse("x^2 + 1", &["x"]).unwrap();
        prog.add_sos_constraint("c", ParamPoly::from_poly(&p));
        let cp = compile(&prog).unwrap();
        let j = cp.to_json();
        for key in ["blocks", "eq_rows", "objective"] {
            assert!(j.get(key).is_some(), "{key}");
        }
        assert_eq!(cp.blocks[0].dim, 2);
        assert_eq!(cp.rows.len(), 3);
    }
}
