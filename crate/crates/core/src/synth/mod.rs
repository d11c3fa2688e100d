//! Numerical synthesis of polynomial constraints: maximize tightness on
//! weighted test points near the graph of `Δ` while keeping `p(x, Δ(x)) ≥ 0`
//! at constraint points and the coefficient vector on the unit sphere.

mod nlp;
mod points;

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use nlp::{solve as solve_nlp, NlpOptions, NlpProblem, NlpResult};
pub use points::{generate_test_points, Neighborhood, TestPoint, TestPointConfig, Weight};

use crate::constraints::{
    box_validity, pade_approximant, pade_constraint, sector_constraint, verify_constraint, DeltaOperator,
    PolynomialConstraint, Provenance, VerifyReport, VW,
};
use crate::poly::{monomials_up_to, parse, Monomial, Polynomial};

/// Margin used in place of strict monotonicity of `h₁` along the graph.
pub const MONOTONE_MARGIN: f64 = 1e-6;
pub const DEFAULT_CONSTRAINT_POINTS: usize = 401;
pub const DEFAULT_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("initial polynomial has monomial {0} outside the template")]
    OutsideTemplate(String),
    #[error("no feasible iterate: worst constraint value {0:e}")]
    NoFeasibleIterate(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Every monomial in `(v, w)` of total degree `min_degree..=degree`.
pub fn default_template(min_degree: u32, degree: u32) -> Vec<Monomial> {
    monomials_up_to(2, min_degree, degree)
}

pub fn uniform_points(interval: (f64, f64), n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5 * (interval.0 + interval.1)];
    }
    (0..n).map(|i| interval.0 + (interval.1 - interval.0) * i as f64 / (n - 1) as f64).collect()
}

fn features(template: &[Monomial], v: f64, w: f64) -> Vec<f64> {
    template.iter().map(|m| m.eval(&[v, w])).collect()
}

/// `Σ w_o · tanh(s · p(v, w))` over the test points.
pub fn objective(p: &Polynomial<f64>, points: &[TestPoint], s: f64) -> f64 {
    points.iter().map(|t| t.weight * (s * p.eval(&[t.v, t.w])).tanh()).sum()
}

/// The objective as a function of the coefficients on a fixed template.
#[derive(Clone, Debug)]
pub struct Objective {
    k: usize,
    rows: Vec<f64>,
    weights: Vec<f64>,
    pub s: f64,
}

impl Objective {
    pub fn new(template: &[Monomial], points: &[TestPoint], s: f64) -> Self {
        let rows = points.iter().flat_map(|t| features(template, t.v, t.w)).collect();
        Objective { k: template.len(), rows, weights: points.iter().map(|t| t.weight).collect(), s }
    }

    pub fn value(&self, c: &[f64]) -> f64 {
        self.rows
            .chunks(self.k)
            .zip(&self.weights)
            .map(|(r, w)| w * (self.s * dot(r, c)).tanh())
            .sum()
    }

    /// `Σ w_o · s · sech²(s·p) · φ`.
    pub fn gradient(&self, c: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.k];
        for (r, w) in self.rows.chunks(self.k).zip(&self.weights) {
            let t = (self.s * dot(r, c)).tanh();
            let f = w * self.s * (1.0 - t * t);
            for (gk, rk) in g.iter_mut().zip(r) {
                *gk += f * rk;
            }
        }
        g
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn median_abs(mut xs: Vec<f64>) -> f64 {
    for x in xs.iter_mut() {
        *x = x.abs();
    }
    xs.sort_by(f64::total_cmp);
    if xs.is_empty() {
        return 0.0;
    }
    xs[xs.len() / 2]
}

#[derive(Clone, Debug)]
pub struct TransformTemplates {
    pub h1: Vec<Monomial>,
    pub h2: Vec<Monomial>,
}

#[derive(Clone, Debug)]
pub struct SynthesisProblem {
    pub delta: DeltaOperator,
    /// Monomials of `p` in `(v, w)`; the direct mode optimizes these coefficients.
    pub template: Vec<Monomial>,
    pub constraint_points: Vec<f64>,
    pub test_points: Vec<TestPoint>,
    pub s: Option<f64>,
    /// Interval handed to the root-scan verification.
    pub interval: (f64, f64),
    pub options: NlpOptions,
    /// Extra rounds that add root-scan violations as constraint points.
    pub restarts: usize,
    /// The optimizer asks for `p(x_i, Δ(x_i)) ≥ margin · x_i²`, so the result
    /// does not merely touch zero between constraint points.
    pub margin: f64,
    pub transform: Option<TransformTemplates>,
}

impl SynthesisProblem {
    pub fn new(delta: DeltaOperator, degree: u32, interval: (f64, f64), test_points: Vec<TestPoint>) -> Self {
        SynthesisProblem {
            delta,
            template: default_template(2, degree),
            constraint_points: uniform_points(interval, DEFAULT_CONSTRAINT_POINTS),
            test_points,
            s: None,
            interval,
            options: NlpOptions::default(),
            restarts: 3,
            margin: DEFAULT_MARGIN,
            transform: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub s: f64,
    pub objective_init: f64,
    pub objective_final: f64,
    pub objective_trace: Vec<f64>,
    /// `min_i p(x_i, Δ(x_i))` over the constraint points.
    pub min_constraint_value: f64,
    pub norm_error: f64,
    pub converged: bool,
    pub restarts_used: usize,
    pub constraint_points: usize,
    pub verify: VerifyReport,
    #[serde(default)]
    pub warning: Option<String>,
}

#[derive(Clone, Debug)]
pub struct Synthesized {
    pub constraint: PolynomialConstraint,
    pub report: SynthReport,
    /// `(h₁, h₂)` in transformed mode.
    pub graph_map: Option<(Polynomial<f64>, Polynomial<f64>)>,
}

fn coefficients_on(template: &[Monomial], p: &Polynomial<f64>) -> Result<Vec<f64>, SynthError> {
    let p = p.align_to(&VW).map_err(|e| SynthError::Config(e.to_string()))?;
    let index: BTreeMap<&Monomial, usize> = template.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let mut c = vec![0.0; template.len()];
    for (m, &x) in p.terms() {
        match index.get(m) {
            Some(&i) => c[i] = x,
            None => return Err(SynthError::OutsideTemplate(format!("{m:?}"))),
        }
    }
    Ok(c)
}

fn to_poly(template: &[Monomial], c: &[f64]) -> Polynomial<f64> {
    Polynomial::from_terms(&VW, template.iter().cloned().zip(c.iter().copied())).expect("template over (v, w)")
}

struct Direct {
    obj: Objective,
    total_weight: f64,
    /// Constraint rows scaled to unit norm; all-zero rows dropped.
    rows: Vec<f64>,
    /// Required value of each scaled row.
    offsets: Vec<f64>,
    k: usize,
}

impl NlpProblem for Direct {
    fn dim(&self) -> usize {
        self.k
    }

    fn objective(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let g = self.obj.gradient(z);
        for (o, x) in grad.iter_mut().zip(g) {
            *o = x / self.total_weight;
        }
        self.obj.value(z) / self.total_weight
    }

    fn num_ineq(&self) -> usize {
        self.rows.len() / self.k
    }

    fn ineq(&self, z: &[f64], values: &mut [f64], jac: &mut [f64]) {
        for (i, r) in self.rows.chunks(self.k).enumerate() {
            values[i] = dot(r, z) - self.offsets[i];
        }
        jac.copy_from_slice(&self.rows);
    }

    fn eq(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        for (g, x) in grad.iter_mut().zip(z) {
            *g = 2.0 * x;
        }
        dot(z, z) - 1.0
    }
}

struct Rows {
    raw: Vec<Vec<f64>>,
    scaled: Vec<f64>,
    offsets: Vec<f64>,
}

fn constraint_rows(template: &[Monomial], delta: &DeltaOperator, xs: &[f64], margin: f64) -> Rows {
    let mut rows = Rows { raw: Vec::new(), scaled: Vec::new(), offsets: Vec::new() };
    for &x in xs {
        let r = features(template, x, delta.eval(x));
        let n = norm2(&r);
        if n > 0.0 {
            rows.scaled.extend(r.iter().map(|v| v / n));
            rows.offsets.push(margin * x * x / n);
            rows.raw.push(r);
        }
    }
    // Near a fixed point p(x, Δ(x)) starts at order x², so also ask for
    // half its curvature there to be at least the margin.
    if let Some(r) = origin_curvature_row(template, delta, xs) {
        let n = norm2(&r);
        rows.scaled.extend(r.iter().map(|v| v / n));
        rows.offsets.push(margin / n);
        rows.raw.push(r);
    }
    rows
}

/// `½ d²/dx² φ(x, Δ(x))` at `x = 0` for a template of degree ≥ 2 monomials,
/// when `Δ(0) = 0` and the constraint points straddle the origin.
fn origin_curvature_row(template: &[Monomial], delta: &DeltaOperator, xs: &[f64]) -> Option<Vec<f64>> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo < 0.0 && hi > 0.0) || delta.eval(0.0) != 0.0 || template.iter().any(|m| m.degree() < 2) {
        return None;
    }
    let d1 = delta.derivative(0.0);
    let r: Vec<f64> =
        template.iter().map(|m| if m.degree() == 2 { d1.powi(m.exponents()[1] as i32) } else { 0.0 }).collect();
    (norm2(&r) > 0.0).then_some(r)
}

/// Direct-mode synthesis starting from `init` (any positive multiple works;
/// it is normalized first).
pub fn synthesize(problem: &SynthesisProblem, init: &Polynomial<f64>) -> Result<Synthesized, SynthError> {
    if problem.transform.is_some() {
        return Err(SynthError::Config("use synthesize_transformed for graph-map templates".into()));
    }
    let template = &problem.template;
    let k = template.len();
    let mut c0 = coefficients_on(template, init)?;
    let n0 = norm2(&c0);
    if n0 == 0.0 {
        return Err(SynthError::Config("initial polynomial is zero".into()));
    }
    c0.iter_mut().for_each(|x| *x /= n0);
    let p0 = to_poly(template, &c0);
    let s = match problem.s {
        Some(s) => s,
        None => {
            let m = median_abs(problem.test_points.iter().map(|t| p0.eval(&[t.v, t.w])).collect());
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        }
    };
    let obj = Objective::new(template, &problem.test_points, s);
    let total_weight = problem.test_points.iter().map(|t| t.weight).sum::<f64>().max(f64::MIN_POSITIVE);
    let f_init = obj.value(&c0);

    let mut xs = problem.constraint_points.clone();
    let mut restarts_used = 0;
    loop {
        let Rows { raw, scaled, offsets } = constraint_rows(template, &problem.delta, &xs, problem.margin);
        let nlp = Direct { obj: obj.clone(), total_weight, rows: scaled, offsets, k };
        let res = solve_nlp(&nlp, &c0, &problem.options);

        let mut c = res.z.clone();
        let nc = norm2(&c);
        c.iter_mut().for_each(|x| *x /= nc);
        let mut warning = (!res.converged).then(|| "augmented Lagrangian did not converge".to_string());

        // Restore exact feasibility at the constraint points by moving toward the
        // (feasible) initial point: g is linear in c, so the mix stays feasible.
        let g: Vec<f64> = raw.iter().map(|r| dot(r, &c)).collect();
        let g0: Vec<f64> = raw.iter().map(|r| dot(r, &c0)).collect();
        let mut theta: f64 = 0.0;
        for (gi, g0i) in g.iter().zip(&g0) {
            if *gi < 0.0 && *g0i > *gi {
                theta = theta.max(-gi / (g0i - gi));
            }
        }
        if theta > 0.0 {
            let theta = (theta * 1.01).min(1.0);
            for (x, x0) in c.iter_mut().zip(&c0) {
                *x = (1.0 - theta) * *x + theta * x0;
            }
            let nc = norm2(&c);
            c.iter_mut().for_each(|x| *x /= nc);
        }
        let mut min_g = raw.iter().map(|r| dot(r, &c)).fold(f64::INFINITY, f64::min);
        let mut f_final = obj.value(&c);
        if f_final > f_init + 1e-9 {
            warning = Some("no improvement over the initial constraint; returning it".into());
            c = c0.clone();
            f_final = f_init;
            min_g = g0.iter().copied().fold(f64::INFINITY, f64::min);
        }
        if min_g < -1e-8 {
            return Err(SynthError::NoFeasibleIterate(min_g));
        }
        let p = to_poly(template, &c);
        let verify = verify_constraint(&p, &problem.delta, problem.interval, 10_000);
        if !verify.ok && restarts_used < problem.restarts {
            restarts_used += 1;
            for v in &verify.violations {
                for d in -5..=5 {
                    let x = v.v + d as f64 * 1e-3;
                    if x >= problem.interval.0 && x <= problem.interval.1 {
                        xs.push(x);
                    }
                }
            }
            warn!("synthesized constraint fails the root scan; restart {restarts_used} with {} constraint points", xs.len());
            continue;
        }
        if let Some(w) = &warning {
            warn!("{w}");
        }
        let norm_error = (norm2(&c) - 1.0).abs();
        let report = SynthReport {
            s,
            objective_init: f_init,
            objective_final: f_final,
            objective_trace: res.trace.iter().map(|f| f * total_weight).collect(),
            min_constraint_value: min_g,
            norm_error,
            converged: res.converged,
            restarts_used,
            constraint_points: xs.len(),
            verify,
            warning,
        };
        let constraint =
            PolynomialConstraint::new(p, Provenance::Synthesized).with_interval(problem.interval.0, problem.interval.1);
        return Ok(Synthesized { constraint, report, graph_map: None });
    }
}

/// `p = h₂(h₁ − h₂)` with `h₁`, `h₂` on their own templates.
struct Transformed {
    obj_points: Vec<(Vec<f64>, Vec<f64>, f64)>,
    s: f64,
    total_weight: f64,
    /// `(φ₁, φ₂, row norm, required value)` at constraint points.
    cons: Vec<(Vec<f64>, Vec<f64>, f64, f64)>,
    /// `∂φ₁/∂v + Δ′ ∂φ₁/∂w`, scaled to unit norm.
    slopes: Vec<Vec<f64>>,
    n1: usize,
    n2: usize,
    /// Index into the coefficient vector of `p` of `m1_j · m2_k` and `m2_k · m2_l`.
    idx12: Vec<Vec<usize>>,
    idx22: Vec<Vec<usize>>,
    ncoef: usize,
}

impl Transformed {
    fn split<'a>(&self, z: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        z.split_at(self.n1)
    }

    fn coefs(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.ncoef];
        for j in 0..self.n1 {
            for k in 0..self.n2 {
                c[self.idx12[j][k]] += a[j] * b[k];
            }
        }
        for k in 0..self.n2 {
            for l in 0..self.n2 {
                c[self.idx22[k][l]] -= b[k] * b[l];
            }
        }
        c
    }
}

impl NlpProblem for Transformed {
    fn dim(&self) -> usize {
        self.n1 + self.n2
    }

    fn objective(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let (a, b) = self.split(z);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut val = 0.0;
        for (f1, f2, w) in &self.obj_points {
            let (h1, h2) = (dot(f1, a), dot(f2, b));
            let t = (self.s * h2 * (h1 - h2)).tanh();
            val += w * t;
            let d = w * self.s * (1.0 - t * t) / self.total_weight;
            for j in 0..self.n1 {
                grad[j] += d * h2 * f1[j];
            }
            for k in 0..self.n2 {
                grad[self.n1 + k] += d * (h1 - 2.0 * h2) * f2[k];
            }
        }
        val / self.total_weight
    }

    fn num_ineq(&self) -> usize {
        self.cons.len() + self.slopes.len()
    }

    fn ineq(&self, z: &[f64], values: &mut [f64], jac: &mut [f64]) {
        let (a, b) = self.split(z);
        let n = self.dim();
        jac.iter_mut().for_each(|x| *x = 0.0);
        for (i, (f1, f2, scale, offset)) in self.cons.iter().enumerate() {
            let (h1, h2) = (dot(f1, a), dot(f2, b));
            values[i] = h2 * (h1 - h2) / scale - offset;
            let row = &mut jac[i * n..(i + 1) * n];
            for j in 0..self.n1 {
                row[j] = h2 * f1[j] / scale;
            }
            for k in 0..self.n2 {
                row[self.n1 + k] = (h1 - 2.0 * h2) * f2[k] / scale;
            }
        }
        let off = self.cons.len();
        for (i, s) in self.slopes.iter().enumerate() {
            values[off + i] = dot(s, a) - MONOTONE_MARGIN;
            jac[(off + i) * n..(off + i) * n + self.n1].copy_from_slice(s);
        }
    }

    fn eq(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let (a, b) = self.split(z);
        let c = self.coefs(a, b);
        for j in 0..self.n1 {
            grad[j] = 2.0 * (0..self.n2).map(|k| c[self.idx12[j][k]] * b[k]).sum::<f64>();
        }
        for k in 0..self.n2 {
            let from_a: f64 = (0..self.n1).map(|j| c[self.idx12[j][k]] * a[j]).sum();
            let from_b: f64 = (0..self.n2).map(|l| c[self.idx22[k][l]] * b[l]).sum();
            grad[self.n1 + k] = 2.0 * (from_a - 2.0 * from_b);
        }
        dot(&c, &c) - 1.0
    }
}

fn graph_slope_row(template: &[Monomial], delta: &DeltaOperator, x: f64) -> Vec<f64> {
    let (w, dw) = (delta.eval(x), delta.derivative(x));
    template
        .iter()
        .map(|m| {
            let e = m.exponents();
            let (i, j) = (e[0] as i32, e[1] as i32);
            let dv = if i > 0 { i as f64 * x.powi(i - 1) * w.powi(j) } else { 0.0 };
            let dwp = if j > 0 { j as f64 * x.powi(i) * w.powi(j - 1) } else { 0.0 };
            dv + dwp * dw
        })
        .collect()
}

/// Transformed-mode synthesis: optimize `h₁`, `h₂` and build
/// `p = h₂·(h₁ − h₂)` by multiplication, with `d/dx h₁(x, Δ(x)) ≥ 1e-6` at
/// every constraint point.
pub fn synthesize_transformed(
    problem: &SynthesisProblem,
    h1_init: &Polynomial<f64>,
    h2_init: &Polynomial<f64>,
) -> Result<Synthesized, SynthError> {
    let t = problem
        .transform
        .as_ref()
        .ok_or_else(|| SynthError::Config("transformed mode needs h1/h2 templates".into()))?;
    let (n1, n2) = (t.h1.len(), t.h2.len());
    let a0 = coefficients_on(&t.h1, h1_init)?;
    let b0 = coefficients_on(&t.h2, h2_init)?;

    let mut support: BTreeMap<Monomial, usize> = BTreeMap::new();
    let mut idx = |m: Monomial| {
        let next = support.len();
        *support.entry(m).or_insert(next)
    };
    let idx12: Vec<Vec<usize>> = t.h1.iter().map(|m1| t.h2.iter().map(|m2| idx(m1.mul(m2))).collect()).collect();
    let idx22: Vec<Vec<usize>> = t.h2.iter().map(|m2| t.h2.iter().map(|m3| idx(m2.mul(m3))).collect()).collect();
    let ncoef = support.len();

    let build = |a: &[f64], b: &[f64]| {
        let h1 = to_poly(&t.h1, a);
        let h2 = to_poly(&t.h2, b);
        let p = &h2 * &(&h1 - &h2);
        (h1, h2, p)
    };
    let total_weight = problem.test_points.iter().map(|t| t.weight).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut tr = Transformed {
        obj_points: problem
            .test_points
            .iter()
            .map(|p| (features(&t.h1, p.v, p.w), features(&t.h2, p.v, p.w), p.weight))
            .collect(),
        s: 1.0,
        total_weight,
        cons: Vec::new(),
        slopes: Vec::new(),
        n1,
        n2,
        idx12,
        idx22,
        ncoef,
    };
    // Normalize the initial point so that ‖coef(p)‖ = 1 (p is quadratic in z).
    let c0 = tr.coefs(&a0, &b0);
    let nc0 = norm2(&c0);
    if nc0 == 0.0 {
        return Err(SynthError::Config("initial h2·(h1 − h2) is zero".into()));
    }
    let sig = nc0.sqrt().recip();
    let z0: Vec<f64> = a0.iter().chain(&b0).map(|x| x * sig).collect();
    let (_, _, p0) = build(&z0[..n1], &z0[n1..]);
    tr.s = match problem.s {
        Some(s) => s,
        None => {
            let m = median_abs(problem.test_points.iter().map(|t| p0.eval(&[t.v, t.w])).collect());
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        }
    };
    for &x in &problem.constraint_points {
        let (v, w) = (x, problem.delta.eval(x));
        let (f1, f2) = (features(&t.h1, v, w), features(&t.h2, v, w));
        let scale = (norm2(&f1) * norm2(&f2)).max(1e-300);
        if norm2(&f1) > 0.0 && norm2(&f2) > 0.0 {
            tr.cons.push((f1, f2, scale, problem.margin * x * x / scale));
        }
        let sr = graph_slope_row(&t.h1, &problem.delta, x);
        let ns = norm2(&sr);
        if ns > 0.0 {
            tr.slopes.push(sr.iter().map(|x| x / ns).collect());
        }
    }
    let constant_free = |tpl: &[Monomial]| tpl.iter().all(|m| m.degree() >= 1);
    let straddles = problem.constraint_points.iter().any(|&x| x < 0.0) && problem.constraint_points.iter().any(|&x| x > 0.0);
    if constant_free(&t.h1) && constant_free(&t.h2) && straddles && problem.delta.eval(0.0) == 0.0 {
        // h₁, h₂ vanish at the origin, so ½ d²/dx² [h₂(h₁ − h₂)] there is
        // h₂′(h₁′ − h₂′) with graph slopes h′; same bilinear shape as a point row.
        let (s1, s2) = (graph_slope_row(&t.h1, &problem.delta, 0.0), graph_slope_row(&t.h2, &problem.delta, 0.0));
        let scale = (norm2(&s1) * norm2(&s2)).max(1e-300);
        if norm2(&s1) > 0.0 && norm2(&s2) > 0.0 {
            tr.cons.push((s1, s2, scale, problem.margin / scale));
        }
    }
    let obj_value = |z: &[f64]| {
        let mut g = vec![0.0; n1 + n2];
        tr.objective(z, &mut g) * total_weight
    };
    let f_init = obj_value(&z0);
    let res = solve_nlp(&tr, &z0, &problem.options);
    let mut z = res.z.clone();
    let c = tr.coefs(&z[..n1], &z[n1..]);
    let sig = norm2(&c).sqrt().recip();
    z.iter_mut().for_each(|x| *x *= sig);

    let worst = |z: &[f64]| -> (f64, f64) {
        let (a, b) = z.split_at(n1);
        let pmin = problem
            .constraint_points
            .iter()
            .map(|&x| {
                let (v, w) = (x, problem.delta.eval(x));
                let h1 = dot(&features(&t.h1, v, w), a);
                let h2 = dot(&features(&t.h2, v, w), b);
                h2 * (h1 - h2)
            })
            .fold(f64::INFINITY, f64::min);
        let smin = problem
            .constraint_points
            .iter()
            .map(|&x| dot(&graph_slope_row(&t.h1, &problem.delta, x), a))
            .fold(f64::INFINITY, f64::min);
        (pmin, smin)
    };
    let (mut pmin, mut smin) = worst(&z);
    let mut f_final = obj_value(&z);
    let mut warning = (!res.converged).then(|| "augmented Lagrangian did not converge".to_string());
    let feasible = |pmin: f64, smin: f64| pmin >= -1e-8 && smin >= MONOTONE_MARGIN * (1.0 - 1e-6);
    if !feasible(pmin, smin) || f_final > f_init + 1e-9 {
        let (p0min, s0min) = worst(&z0);
        if !feasible(p0min, s0min) {
            return Err(SynthError::NoFeasibleIterate(pmin.min(p0min)));
        }
        warning = Some("optimized iterate infeasible or worse than the start; returning the start".into());
        z = z0.clone();
        (pmin, smin, f_final) = (p0min, s0min, f_init);
    }
    debug_assert!(smin >= MONOTONE_MARGIN * (1.0 - 1e-6));
    let (h1, h2, p) = build(&z[..n1], &z[n1..]);
    let verify = verify_constraint(&p, &problem.delta, problem.interval, 10_000);
    let norm_error = (p.coeff_norm2() - 1.0).abs();
    let report = SynthReport {
        s: tr.s,
        objective_init: f_init,
        objective_final: f_final,
        objective_trace: res.trace.iter().map(|f| f * total_weight).collect(),
        min_constraint_value: pmin,
        norm_error,
        converged: res.converged,
        restarts_used: 0,
        constraint_points: problem.constraint_points.len(),
        verify,
        warning,
    };
    let constraint =
        PolynomialConstraint::new(p, Provenance::Synthesized).with_interval(problem.interval.0, problem.interval.1);
    Ok(Synthesized { constraint, report, graph_map: Some((h1, h2)) })
}

/// Initial constraint for a synthesis run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// Polynomial text in `v`, `w`.
    Polynomial { text: String },
    /// Padé constraint built from the series of `Δ`.
    Pade { m: usize, n: usize, k: u32, eps1: f64, eps2: f64 },
    Sector { alpha: f64, beta: f64 },
}

/// JSON configuration for a direct-mode synthesis run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub delta: String,
    pub degree: u32,
    #[serde(default = "two")]
    pub min_degree: u32,
    pub interval: (f64, f64),
    #[serde(default)]
    pub constraint_points: Option<usize>,
    pub test_points: TestPointConfig,
    pub seed: u64,
    pub init: InitSpec,
    /// Output box recorded as a validity polynomial of the result.
    #[serde(default)]
    pub output_box: Option<(f64, f64)>,
    #[serde(default = "three")]
    pub restarts: usize,
    #[serde(default)]
    pub margin: Option<f64>,
}

fn two() -> u32 {
    2
}

fn three() -> usize {
    3
}

impl SynthConfig {
    pub fn delta_operator(&self) -> Result<DeltaOperator, SynthError> {
        DeltaOperator::from_tag(&self.delta).ok_or_else(|| SynthError::Config(format!("unknown delta tag `{}`", self.delta)))
    }

    pub fn init_polynomial(&self, delta: &DeltaOperator) -> Result<Polynomial<f64>, SynthError> {
        let cfg = |e: String| SynthError::Config(e);
        match &self.init {
            InitSpec::Polynomial { text } => parse(text, &VW).map_err(|e| cfg(e.to_string())),
            InitSpec::Sector { alpha, beta } => Ok(sector_constraint(*alpha, *beta).map_err(|e| cfg(e.to_string()))?.p),
            InitSpec::Pade { m, n, k, eps1, eps2 } => {
                let series = delta.taylor(m + n).ok_or_else(|| cfg("delta has no built-in series".into()))?;
                let (num, den) = pade_approximant(&series, *m, *n).map_err(|e| cfg(e.to_string()))?;
                let c = pade_constraint(&num.to_f64(), &den.to_f64(), *k, *eps1, *eps2, self.interval)
                    .map_err(|e| cfg(e.to_string()))?;
                Ok(c.p)
            }
        }
    }

    pub fn problem(&self) -> Result<SynthesisProblem, SynthError> {
        self.test_points.validate().map_err(SynthError::Config)?;
        if self.degree % 2 != 0 || self.degree < self.min_degree {
            return Err(SynthError::Config(format!("degree {} must be even and at least min_degree", self.degree)));
        }
        let delta = self.delta_operator()?;
        let pts = generate_test_points(&self.test_points, &delta, self.seed);
        let mut prob = SynthesisProblem::new(delta, self.degree, self.interval, pts);
        prob.template = default_template(self.min_degree, self.degree);
        prob.constraint_points = uniform_points(self.interval, self.constraint_points.unwrap_or(DEFAULT_CONSTRAINT_POINTS));
        prob.s = self.test_points.s;
        prob.restarts = self.restarts;
        prob.margin = self.margin.unwrap_or(DEFAULT_MARGIN);
        Ok(prob)
    }

    pub fn run(&self) -> Result<Synthesized, SynthError> {
        let prob = self.problem()?;
        let init = self.init_polynomial(&prob.delta)?;
        let mut out = synthesize(&prob, &init)?;
        if let Some((lo, hi)) = self.output_box {
            out.constraint.validity.push(box_validity(lo, hi).map_err(|e| SynthError::Config(e.to_string()))?);
        }
        Ok(out)
    }
}
