//! The expansion and reshape SOS programs, and their conditions evaluated on
//! fixed polynomials for independent re-checking.

use log::debug;
use serde::{Deserialize, Serialize};

use super::model::SystemModel;
use super::RoaError;
use crate::constraints::{DeltaOperator, PolynomialConstraint, ValidityKind, VW};
use crate::poly::{Monomial, Polynomial};
use crate::sos::{solve_program, ParamPoly, PolyHandle, SolverTolerances, SosCertificate, SosProgram};

/// A constraint on channel `channel` of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoaConstraint {
    pub name: String,
    #[serde(default)]
    pub channel: usize,
    pub constraint: PolynomialConstraint,
}

/// A constraint rewritten in the model's variables.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposedConstraint {
    pub name: String,
    /// `p(g(x), w)` over `(x, w)`.
    pub p: Polynomial<f64>,
    /// Output-box validities `q(w) ≥ 0` over `(x, w)`, used as extra S-procedure terms.
    pub boxes: Vec<Polynomial<f64>>,
    /// Input validities `q(g(x)) ≥ 0` over `x`, enforced by set containment.
    pub regions: Vec<Polynomial<f64>>,
    /// Input intervals after intersecting with the output boxes.
    pub intervals: Vec<(f64, f64)>,
}

/// Largest interval around 0 inside `[lo, hi]` on which `Δ(v)` stays in every box.
pub fn effective_interval(delta: &DeltaOperator, (lo, hi): (f64, f64), boxes: &[(f64, f64)]) -> Result<(f64, f64), RoaError> {
    let inside = |v: f64| {
        let w = delta.eval(v);
        boxes.iter().all(|&(a, b)| w >= a && w <= b)
    };
    if !inside(0.0) || lo > 0.0 || hi < 0.0 {
        return Err(RoaError::Validity("validity region excludes the origin".into()));
    }
    let edge = |end: f64| {
        let n = 20_000;
        let mut last = 0.0;
        for k in 1..=n {
            let v = end * k as f64 / n as f64;
            if !inside(v) {
                let (mut a, mut b) = (last, v);
                for _ in 0..80 {
                    let m = 0.5 * (a + b);
                    if inside(m) {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                return a;
            }
            last = v;
        }
        end
    };
    Ok((edge(lo), edge(hi)))
}

pub fn compose(model: &SystemModel, rc: &RoaConstraint) -> Result<ComposedConstraint, RoaError> {
    let j = rc.channel;
    if j >= model.inputs.len() {
        return Err(RoaError::Model(format!("constraint `{}` names channel {j}", rc.name)));
    }
    let xw = model.xw_vars();
    let g = model.g[j].align_to(&xw)?;
    let w = Polynomial::var(&xw, &model.inputs[j])?;
    let sub = |q: &Polynomial<f64>| -> Result<Polynomial<f64>, RoaError> {
        let q = q.align_to(&VW)?.with_var_names(&["__v", "__w"])?;
        Ok(q.substitute(&[("__v", &g), ("__w", &w)])?.align_to(&xw)?)
    };
    let mut boxes = Vec::new();
    let mut box_bounds = Vec::new();
    for val in &rc.constraint.validity {
        if let ValidityKind::OutputBox { lo, hi } = val.kind {
            boxes.push(sub(&val.q)?);
            box_bounds.push((lo, hi));
        }
    }
    let mut regions = Vec::new();
    let mut intervals = Vec::new();
    let gx = model.g[j].clone();
    let v_of = |c: f64| -> Polynomial<f64> { &gx - &Polynomial::constant(&model.states, c) };
    for val in &rc.constraint.validity {
        match val.kind {
            ValidityKind::OutputBox { .. } => {}
            ValidityKind::Interval { lo, hi } => {
                let (a, b) = effective_interval(&model.delta[j], (lo, hi), &box_bounds)?;
                intervals.push((a, b));
                // (v − a)(b − v)
                let q = &v_of(a) * &(-&v_of(b));
                regions.push(q);
            }
            ValidityKind::Other => {
                if val.depends_on_output() {
                    return Err(RoaError::Validity(format!(
                        "constraint `{}`: validity polynomials mixing v and w are not supported",
                        rc.name
                    )));
                }
                let q = sub(&val.q)?;
                regions.push(q.align_to(&xw)?.trim_to(&model.states)?);
            }
        }
    }
    Ok(ComposedConstraint { name: rc.name.clone(), p: sub(&rc.constraint.p)?, boxes, regions, intervals })
}

trait TrimTo: Sized {
    fn trim_to(&self, vars: &[String]) -> Result<Self, RoaError>;
}

impl TrimTo for Polynomial<f64> {
    /// Drop trailing variables that do not occur.
    fn trim_to(&self, vars: &[String]) -> Result<Self, RoaError> {
        let idx: Vec<usize> = vars.iter().map(|v| self.index_of(v).expect("subset of variables")).collect();
        let n = self.nvars();
        for (m, _) in self.terms() {
            if (0..n).any(|i| !idx.contains(&i) && m.exponents()[i] > 0) {
                return Err(RoaError::Validity("validity polynomial depends on an input".into()));
            }
        }
        Ok(Polynomial::from_terms(
            vars,
            self.terms().map(|(m, &c)| (Monomial::new(idx.iter().map(|&i| m.exponents()[i]).collect()), c)),
        )?)
    }
}

/// Distinct region polynomials across constraints (coefficientwise equal ones merged).
pub fn distinct_regions(composed: &[ComposedConstraint]) -> Vec<Polynomial<f64>> {
    let mut out: Vec<Polynomial<f64>> = Vec::new();
    for q in composed.iter().flat_map(|c| &c.regions) {
        if !out.iter().any(|r| r.max_coeff_diff(q) <= 1e-12 * q.max_abs_coeff()) {
            out.push(q.clone());
        }
    }
    out
}

/// Largest even integer ≤ `d`, clamped at 0.
pub fn even_floor(d: i64) -> u32 {
    if d <= 0 {
        0
    } else {
        (d as u32) & !1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degrees {
    pub n_v: u32,
    pub n_total: u32,
    /// Degree budget for multipliers of fixed polynomials; at most `n_total`.
    pub cap: u32,
}

impl Degrees {
    pub fn new(n_v: u32, n_total: u32) -> Self {
        Degrees { n_v, n_total, cap: n_total }
    }

    /// Budget for an expansion with a fixed `V` of degree `v_degree`: no
    /// product may exceed what `s_c·V` reaches, or its top-degree Gram rows
    /// are forced to zero and the program loses its interior.
    pub fn for_expansion(&self, v_degree: u32) -> Self {
        Degrees { cap: self.n_total.min(self.s_c() + v_degree), ..*self }
    }

    pub fn s_c(&self) -> u32 {
        even_floor(self.n_total as i64 - self.n_v as i64)
    }

    pub fn for_fixed(&self, fixed_degree: u32) -> u32 {
        even_floor(self.cap as i64 - fixed_degree as i64)
    }
}

/// Multipliers in numeric form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub s_c: Polynomial<f64>,
    /// One per constraint.
    pub s_psi: Vec<Polynomial<f64>>,
    /// Per constraint, one per output box.
    pub s_box: Vec<Vec<Polynomial<f64>>>,
    /// One per distinct region.
    pub s_d: Vec<Polynomial<f64>>,
    pub s_n: Vec<Polynomial<f64>>,
}

impl Multipliers {
    pub fn named(&self) -> Vec<(String, Polynomial<f64>)> {
        let mut out = vec![("s_c".to_string(), self.s_c.clone())];
        for (i, s) in self.s_psi.iter().enumerate() {
            out.push((format!("s_psi[{i}]"), s.clone()));
        }
        for (i, bs) in self.s_box.iter().enumerate() {
            for (k, s) in bs.iter().enumerate() {
                out.push((format!("s_box[{i}][{k}]"), s.clone()));
            }
        }
        for (i, s) in self.s_d.iter().enumerate() {
            out.push((format!("s_d[{i}]"), s.clone()));
        }
        for (i, s) in self.s_n.iter().enumerate() {
            out.push((format!("s_n[{i}]"), s.clone()));
        }
        out
    }
}

fn norm_sq(vars: &[String]) -> Polynomial<f64> {
    let n = vars.len();
    Polynomial::from_terms(
        vars,
        (0..n).map(|i| {
            let mut e = vec![0; n];
            e[i] = 2;
            (Monomial::new(e), 1.0)
        }),
    )
    .expect("square terms")
}

fn lie_derivative(model: &SystemModel, v: &Polynomial<f64>) -> Result<Polynomial<f64>, RoaError> {
    let xw = model.xw_vars();
    let v = v.align_to(&xw)?;
    let mut out = Polynomial::zero(&xw);
    for (i, f) in model.f.iter().enumerate() {
        out = &out + &(&v.partial(i) * f);
    }
    Ok(out)
}

fn lie_derivative_param(model: &SystemModel, v: &ParamPoly) -> ParamPoly {
    let xw = model.xw_vars();
    let v = v.align_to(&xw);
    let mut out = ParamPoly::zero(&xw);
    for (i, f) in model.f.iter().enumerate() {
        out = out + v.partial(i).mul_poly(f);
    }
    out
}

/// `−∇V·f − ε(|x|² + |w|²) − s_c(c − V) − Σ s·q` over `(x, w)`, where the
/// pairs `(s, q)` cover both the constraints and the output boxes.
pub fn roa_condition(
    model: &SystemModel,
    v: &Polynomial<f64>,
    c: f64,
    s_c: &Polynomial<f64>,
    terms: &[(&Polynomial<f64>, &Polynomial<f64>)],
    epsilon: f64,
) -> Result<Polynomial<f64>, RoaError> {
    let xw = model.xw_vars();
    let v = v.align_to(&xw)?;
    let level = &Polynomial::constant(&xw, c) - &v;
    let mut e = -&lie_derivative(model, &v)?;
    e = &e - &norm_sq(&xw).scale(&epsilon);
    e = &e - &(&s_c.align_to(&xw)? * &level);
    for (s, q) in terms {
        e = &e - &(&s.align_to(&xw)? * &q.align_to(&xw)?);
    }
    Ok(e)
}

/// `(1 + s_d)·q − s_n·(c − V)` for each region.
pub fn validity_conditions(
    v: &Polynomial<f64>,
    c: f64,
    regions: &[Polynomial<f64>],
    s_d: &[Polynomial<f64>],
    s_n: &[Polynomial<f64>],
) -> Result<Vec<Polynomial<f64>>, RoaError> {
    let vars = v.vars().to_vec();
    let level = &Polynomial::constant(&vars, c) - v;
    regions
        .iter()
        .zip(s_d.iter().zip(s_n))
        .map(|(q, (sd, sn))| {
            let q = q.align_to(&vars)?;
            let one_sd = &Polynomial::constant(&vars, 1.0) + &sd.align_to(&vars)?;
            Ok(&(&one_sd * &q) - &(&sn.align_to(&vars)? * &level))
        })
        .collect()
}

struct Handles {
    s_c: PolyHandle,
    s_psi: Vec<PolyHandle>,
    s_box: Vec<Vec<PolyHandle>>,
    s_d: Vec<PolyHandle>,
    s_n: Vec<PolyHandle>,
}

/// Multipliers attached to every constraint and output box in the condition.
fn add_s_procedure(
    prog: &mut SosProgram,
    model: &SystemModel,
    composed: &[ComposedConstraint],
    deg: Degrees,
) -> Result<(ParamPoly, Vec<PolyHandle>, Vec<Vec<PolyHandle>>), RoaError> {
    let xw = model.xw_vars();
    let mut sum = ParamPoly::zero(&xw);
    let mut s_psi = Vec::new();
    let mut s_box = Vec::new();
    for (i, cc) in composed.iter().enumerate() {
        let h = prog.new_sos_poly(&format!("s_psi[{i}]"), &xw, deg.for_fixed(cc.p.degree()), false)?;
        sum = sum + prog.poly(h).mul_poly(&cc.p);
        s_psi.push(h);
        let mut hb = Vec::new();
        for (k, q) in cc.boxes.iter().enumerate() {
            let h = prog.new_sos_poly(&format!("s_box[{i}][{k}]"), &xw, deg.for_fixed(q.degree()), true)?;
            sum = sum + prog.poly(h).mul_poly(q);
            hb.push(h);
        }
        s_box.push(hb);
    }
    Ok((sum, s_psi, s_box))
}

fn expansion_program(
    model: &SystemModel,
    v: &Polynomial<f64>,
    c: f64,
    composed: &[ComposedConstraint],
    regions: &[Polynomial<f64>],
    deg: Degrees,
    epsilon: f64,
) -> Result<(SosProgram, Handles), RoaError> {
    let xw = model.xw_vars();
    let x = &model.states;
    let mut prog = SosProgram::new();
    let s_c = prog.new_sos_poly("s_c", &xw, deg.s_c(), true)?;
    let (s_sum, s_psi, s_box) = add_s_procedure(&mut prog, model, composed, deg)?;
    let vxw = v.align_to(&xw)?;
    let level = &Polynomial::constant(&xw, c) - &vxw;
    let fixed = &(-&lie_derivative(model, &vxw)?) - &norm_sq(&xw).scale(&epsilon);
    let e = ParamPoly::from_poly(&fixed) - prog.poly(s_c).mul_poly(&level) - s_sum;
    prog.add_sos_constraint("roa", e.align_to(&xw));

    let vx = v.align_to(x)?;
    let level_x = &Polynomial::constant(x, c) - &vx;
    let mut s_d = Vec::new();
    let mut s_n = Vec::new();
    for (k, q) in regions.iter().enumerate() {
        let hd = prog.new_sos_poly(&format!("s_d[{k}]"), x, deg.for_fixed(q.degree()), false)?;
        let hn = prog.new_sos_poly(&format!("s_n[{k}]"), x, deg.s_c(), false)?;
        let expr = ParamPoly::from_poly(q) + prog.poly(hd).mul_poly(q) - prog.poly(hn).mul_poly(&level_x);
        prog.add_sos_constraint(&format!("validity[{k}]"), expr.align_to(x));
        s_d.push(hd);
        s_n.push(hn);
    }
    Ok((prog, Handles { s_c, s_psi, s_box, s_d, s_n }))
}

fn extract(cert: &SosCertificate, h: &Handles) -> Multipliers {
    Multipliers {
        s_c: cert.poly(h.s_c).clone(),
        s_psi: h.s_psi.iter().map(|&k| cert.poly(k).clone()).collect(),
        s_box: h.s_box.iter().map(|hs| hs.iter().map(|&k| cert.poly(k).clone()).collect()).collect(),
        s_d: h.s_d.iter().map(|&k| cert.poly(k).clone()).collect(),
        s_n: h.s_n.iter().map(|&k| cert.poly(k).clone()).collect(),
    }
}

/// Outcome of one SOS solve at a fixed level.
pub struct LevelSolve {
    pub c: f64,
    pub multipliers: Multipliers,
    pub certificate: SosCertificate,
}

/// Feasibility of the expansion program at level `c`.
pub fn expansion_at(
    model: &SystemModel,
    v: &Polynomial<f64>,
    c: f64,
    composed: &[ComposedConstraint],
    regions: &[Polynomial<f64>],
    deg: Degrees,
    epsilon: f64,
    tol: &SolverTolerances,
) -> Result<Option<LevelSolve>, RoaError> {
    let deg = deg.for_expansion(v.degree());
    let (prog, h) = expansion_program(model, v, c, composed, regions, deg, epsilon)?;
    let cert = solve_program(&prog, tol)?;
    debug!("expansion c = {c:.6e}: {:?}, margin {:?}, {} iterations", cert.status, cert.margin, cert.iterations);
    if !cert.is_feasible() {
        return Ok(None);
    }
    Ok(Some(LevelSolve { c, multipliers: extract(&cert, &h), certificate: cert }))
}

/// Block sizes of the compiled expansion program at level `c`, without solving.
pub fn expansion_census(
    model: &SystemModel,
    v: &Polynomial<f64>,
    c: f64,
    composed: &[ComposedConstraint],
    regions: &[Polynomial<f64>],
    deg: Degrees,
    epsilon: f64,
) -> Result<Vec<(String, usize)>, RoaError> {
    let deg = deg.for_expansion(v.degree());
    let (prog, _) = expansion_program(model, v, c, composed, regions, deg, epsilon)?;
    Ok(crate::sos::compile(&prog)?.census())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectionOptions {
    /// Stop when `(hi − lo) ≤ rel_tol · lo`.
    pub rel_tol: f64,
    /// Upper bracket cap is `c_seed · 2^max_doublings`.
    pub max_doublings: u32,
    /// Floor as a fraction of the upper bracket.
    pub floor: f64,
    pub c_seed: f64,
}

impl Default for BisectionOptions {
    fn default() -> Self {
        BisectionOptions { rel_tol: 1e-3, max_doublings: 20, floor: 1e-9, c_seed: 1.0 }
    }
}

pub struct ExpansionResult {
    pub c: f64,
    pub multipliers: Multipliers,
    pub certificate: SosCertificate,
    pub solves: usize,
}

/// Largest `c` for which the expansion program is feasible, by doubling then
/// bisection.
#[allow(clippy::too_many_arguments)]
pub fn expansion_step(
    model: &SystemModel,
    v: &Polynomial<f64>,
    composed: &[ComposedConstraint],
    regions: &[Polynomial<f64>],
    deg: Degrees,
    epsilon: f64,
    bis: &BisectionOptions,
    tol: &SolverTolerances,
) -> Result<ExpansionResult, RoaError> {
    let mut solves = 0;
    let mut at = |c: f64| {
        solves += 1;
        expansion_at(model, v, c, composed, regions, deg, epsilon, tol)
    };
    let cap = bis.c_seed * 2f64.powi(bis.max_doublings as i32);
    let (mut best, mut hi) = match at(bis.c_seed)? {
        Some(s) => {
            let mut best = s;
            let mut hi = None;
            while best.c < cap {
                let c = (2.0 * best.c).min(cap);
                match at(c)? {
                    Some(s) => best = s,
                    None => {
                        hi = Some(c);
                        break;
                    }
                }
            }
            (best, hi)
        }
        None => {
            let floor = bis.floor * bis.c_seed;
            let mut c = bis.c_seed;
            let mut found = None;
            let mut upper = c;
            while c > floor {
                upper = c;
                c *= 0.5;
                if let Some(s) = at(c)? {
                    found = Some(s);
                    break;
                }
            }
            (found.ok_or(RoaError::NoCertifiableSet)?, Some(upper))
        }
    };
    while let Some(h) = hi {
        if h - best.c <= bis.rel_tol * best.c {
            break;
        }
        let mid = 0.5 * (best.c + h);
        match at(mid)? {
            Some(s) => best = s,
            None => hi = Some(mid),
        }
    }
    Ok(ExpansionResult { c: best.c, multipliers: best.multipliers, certificate: best.certificate, solves })
}

pub struct ReshapeResult {
    pub v: Polynomial<f64>,
    /// Level `c` of the previous `V` contained in `{V_new ≤ 1}`.
    pub level: f64,
    pub s_e: Polynomial<f64>,
    pub certificate: SosCertificate,
    pub solves: usize,
}

#[allow(clippy::too_many_arguments)]
fn reshape_at(
    model: &SystemModel,
    v_star: &Polynomial<f64>,
    c_star: f64,
    level: f64,
    fixed: &Multipliers,
    composed: &[ComposedConstraint],
    regions: &[Polynomial<f64>],
    deg: Degrees,
    epsilon: f64,
    tol: &SolverTolerances,
) -> Result<Option<ReshapeResult>, RoaError> {
    let xw = model.xw_vars();
    let x = &model.states;
    let mut prog = SosProgram::new();
    let hv = prog.new_free_poly_degrees("V", x, 2, deg.n_v);
    let v = prog.poly(hv);
    prog.add_sos_constraint("lyapunov", v.sub_poly(&norm_sq(x).scale(&epsilon)));

    let (s_sum, _, _) = add_s_procedure(&mut prog, model, composed, deg)?;
    let s_c = fixed.s_c.align_to(&xw)?;
    // s_c·(1 − V) with s_c fixed.
    let sc_term = ParamPoly::from_poly(&s_c) - v.mul_poly(&s_c);
    let e = -lie_derivative_param(model, &v) - ParamPoly::from_poly(&norm_sq(&xw).scale(&epsilon)) - sc_term - s_sum;
    prog.add_sos_constraint("roa", e.align_to(&xw));

    let hs = prog.new_sos_poly("s_e", x, deg.s_c(), false)?;
    let vs = v_star.align_to(x)?;
    let shrink = &Polynomial::constant(x, level) - &vs;
    let cont = ParamPoly::from_poly(&Polynomial::constant(x, 1.0)) - v.clone() - prog.poly(hs).mul_poly(&shrink);
    prog.add_sos_constraint("containment", cont.align_to(x));

    for (k, q) in regions.iter().enumerate() {
        let hd = prog.new_sos_poly(&format!("s_d[{k}]"), x, deg.for_fixed(q.degree()), false)?;
        // (1 + s_d)q − S_n(1 − V) with S_n = c*·s_n*, so V*/c* stays feasible.
        let sn = fixed.s_n[k].align_to(x)?.scale(&c_star);
        let expr = ParamPoly::from_poly(&(q - &sn)) + prog.poly(hd).mul_poly(q) + v.mul_poly(&sn);
        prog.add_sos_constraint(&format!("validity[{k}]"), expr.align_to(x));
    }
    let cert = solve_program(&prog, tol)?;
    debug!("reshape level {level:.6e}: {:?}, margin {:?}", cert.status, cert.margin);
    if !cert.is_feasible() {
        return Ok(None);
    }
    Ok(Some(ReshapeResult {
        v: cert.poly(hv).prune(0.0),
        level,
        s_e: cert.poly(hs).clone(),
        certificate: cert,
        solves: 1,
    }))
}

/// Search `V` with `{V ≤ 1} ⊇ {V* ≤ c}` for the largest `c` in
/// `[lo·c*, hi·c*]`, the expansion multiplier `s_c*` held fixed.
#[allow(clippy::too_many_arguments)]
pub fn reshape_step(
    model: &SystemModel,
    v_star: &Polynomial<f64>,
    c_star: f64,
    fixed: &Multipliers,
    composed: &[ComposedConstraint],
    regions: &[Polynomial<f64>],
    deg: Degrees,
    epsilon: f64,
    range: (f64, f64),
    rel_tol: f64,
    tol: &SolverTolerances,
) -> Result<Option<ReshapeResult>, RoaError> {
    // A reshape accepted at a vanishing margin leaves the next expansion on
    // the edge of feasibility at level 1.
    let tol = &SolverTolerances { min_margin: tol.min_margin.max(1e2 * tol.feas), ..tol.clone() };
    let mut solves = 0;
    let mut at = |level: f64| {
        solves += 1;
        reshape_at(model, v_star, c_star, level, fixed, composed, regions, deg, epsilon, tol)
    };
    let (lo, hi) = (range.0 * c_star, range.1 * c_star);
    if let Some(mut r) = at(hi)? {
        r.solves = solves;
        return Ok(Some(r));
    }
    let Some(mut best) = at(lo)? else {
        return Ok(None);
    };
    let mut upper = hi;
    while upper - best.level > rel_tol * best.level {
        let mid = 0.5 * (best.level + upper);
        match at(mid)? {
            Some(r) => best = r,
            None => upper = mid,
        }
    }
    best.solves = solves;
    Ok(Some(best))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn even_floor_clamps() {
        assert_eq!(even_floor(-3), 0);
        assert_eq!(even_floor(5), 4);
        assert_eq!(even_floor(4), 4);
    }
}
