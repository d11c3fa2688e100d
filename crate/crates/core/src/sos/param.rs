use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use crate::poly::{union_vars, Monomial, Polynomial};

/// Affine function of a program's decision atoms: `constant + Σ coeffs[i]·atom_i`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub constant: f64,
    pub coeffs: BTreeMap<usize, f64>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr { constant: c, coeffs: BTreeMap::new() }
    }

    pub fn atom(index: usize, k: f64) -> Self {
        let mut coeffs = BTreeMap::new();
        if k != 0.0 {
            coeffs.insert(index, k);
        }
        LinExpr { constant: 0.0, coeffs }
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.coeffs.is_empty()
    }

    pub fn has_atoms(&self) -> bool {
        !self.coeffs.is_empty()
    }

    /// `self += k * other`
    pub fn add_scaled(&mut self, other: &LinExpr, k: f64) {
        self.constant += k * other.constant;
        for (&i, &v) in &other.coeffs {
            let e = self.coeffs.entry(i).or_insert(0.0);
            *e += k * v;
            if *e == 0.0 {
                self.coeffs.remove(&i);
            }
        }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        self.coeffs.iter().fold(self.constant, |acc, (&i, &v)| acc + v * values[i])
    }

    /// Largest absolute coefficient, constant included.
    pub fn scale(&self) -> f64 {
        self.coeffs.values().fold(self.constant.abs(), |m, v| m.max(v.abs()))
    }
}

/// Polynomial whose coefficients are affine in decision atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamPoly {
    vars: Vec<String>,
    terms: BTreeMap<Monomial, LinExpr>,
}

fn position_map(from: &[String], to: &[String]) -> Vec<usize> {
    from.iter()
        .map(|v| to.iter().position(|u| u == v).expect("variable present in union"))
        .collect()
}

impl ParamPoly {
    pub fn zero<S: AsRef<str>>(vars: &[S]) -> Self {
        ParamPoly { vars: vars.iter().map(|s| s.as_ref().to_string()).collect(), terms: BTreeMap::new() }
    }

    pub fn from_poly(p: &Polynomial<f64>) -> Self {
        let terms = p.terms().map(|(m, &c)| (m.clone(), LinExpr::constant(c))).collect();
        ParamPoly { vars: p.vars().to_vec(), terms }
    }

    /// A bare affine expression, as a polynomial of degree zero.
    pub fn from_linexpr<S: AsRef<str>>(vars: &[S], e: LinExpr) -> Self {
        let mut out = ParamPoly::zero(vars);
        if !e.is_zero() {
            out.terms.insert(Monomial::one(out.vars.len()), e);
        }
        out
    }

    pub(crate) fn from_terms(vars: Vec<String>, terms: BTreeMap<Monomial, LinExpr>) -> Self {
        ParamPoly { vars, terms }
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &LinExpr)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn coeff(&self, m: &Monomial) -> Option<&LinExpr> {
        self.terms.get(m)
    }

    fn add_term(&mut self, m: Monomial, e: &LinExpr, k: f64) {
        let slot = self.terms.entry(m.clone()).or_default();
        slot.add_scaled(e, k);
        if slot.is_zero() {
            self.terms.remove(&m);
        }
    }

    /// Re-express over a superset ordering of variables.
    pub fn align_to(&self, vars: &[String]) -> Self {
        if vars == self.vars.as_slice() {
            return self.clone();
        }
        let map = position_map(&self.vars, vars);
        let terms = self.terms.iter().map(|(m, e)| (m.embed(&map, vars.len()), e.clone())).collect();
        ParamPoly { vars: vars.to_vec(), terms }
    }

    pub fn scale(&self, k: f64) -> Self {
        let mut out = ParamPoly::zero(&self.vars);
        if k != 0.0 {
            for (m, e) in &self.terms {
                out.add_term(m.clone(), e, k);
            }
        }
        out
    }

    pub fn mul_poly(&self, p: &Polynomial<f64>) -> Self {
        let vars = union_vars(&self.vars, p.vars());
        let a = self.align_to(&vars);
        let map = position_map(p.vars(), &vars);
        let mut out = ParamPoly::zero(&vars);
        for (mp, &c) in p.terms() {
            let mp = mp.embed(&map, vars.len());
            for (m, e) in &a.terms {
                out.add_term(m.mul(&mp), e, c);
            }
        }
        out
    }

    /// `∂/∂x_i`.
    pub fn partial(&self, i: usize) -> Self {
        let mut out = ParamPoly::zero(&self.vars);
        for (m, e) in &self.terms {
            let k = m.exponents()[i];
            if k > 0 {
                let mut ex = m.exponents().to_vec();
                ex[i] -= 1;
                out.add_term(Monomial::new(ex), e, k as f64);
            }
        }
        out
    }

    pub fn add_poly(&self, p: &Polynomial<f64>) -> Self {
        self + &ParamPoly::from_poly(p)
    }

    pub fn sub_poly(&self, p: &Polynomial<f64>) -> Self {
        self - &ParamPoly::from_poly(p)
    }

    /// Substitute numeric atom values.
    pub fn resolve(&self, values: &[f64]) -> Polynomial<f64> {
        Polynomial::from_terms(&self.vars, self.terms.iter().map(|(m, e)| (m.clone(), e.eval(values))))
            .expect("monomials match the variable count")
    }

    /// The atom-free part.
    pub fn constant_part(&self) -> Polynomial<f64> {
        Polynomial::from_terms(&self.vars, self.terms.iter().map(|(m, e)| (m.clone(), e.constant)))
            .expect("monomials match the variable count")
    }

    fn combine(&self, other: &ParamPoly, k: f64) -> ParamPoly {
        let vars = union_vars(&self.vars, &other.vars);
        let mut out = self.align_to(&vars);
        for (m, e) in other.align_to(&vars).terms {
            out.add_term(m, &e, k);
        }
        out
    }
}

impl Add for &ParamPoly {
    type Output = ParamPoly;
    fn add(self, rhs: &ParamPoly) -> ParamPoly {
        self.combine(rhs, 1.0)
    }
}

impl Sub for &ParamPoly {
    type Output = ParamPoly;
    fn sub(self, rhs: &ParamPoly) -> ParamPoly {
        self.combine(rhs, -1.0)
    }
}

impl Neg for &ParamPoly {
    type Output = ParamPoly;
    fn neg(self) -> ParamPoly {
        self.scale(-1.0)
    }
}

impl Mul<&Polynomial<f64>> for &ParamPoly {
    type Output = ParamPoly;
    fn mul(self, rhs: &Polynomial<f64>) -> ParamPoly {
        self.mul_poly(rhs)
    }
}

impl Add for ParamPoly {
    type Output = ParamPoly;
    fn add(self, rhs: ParamPoly) -> ParamPoly {
        &self + &rhs
    }
}

impl Sub for ParamPoly {
    type Output = ParamPoly;
    fn sub(self, rhs: ParamPoly) -> ParamPoly {
        &self - &rhs
    }
}

impl Neg for ParamPoly {
    type Output = ParamPoly;
    fn neg(self) -> ParamPoly {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::parse;

    #[test]
    fn affine_arithmetic_resolves_like_polynomials() {
        let x: Polynomial<f64> = parse("x^2 + 1", &["x"]).unwrap();
        let y: Polynomial<f64> = parse("y - 2", &["y"]).unwrap();
        let mut a = ParamPoly::from_poly(&x);
        a = &a + &ParamPoly::from_linexpr(&["x"], LinExpr::atom(0, 3.0));
        let prod = a.mul_poly(&y);
        assert_eq!(prod.vars(), &["x".to_string(), "y".to_string()]);
        let values = [0.5];
        let direct = &(&x + &Polynomial::constant(&["x"], 1.5)) * &y;
        assert!(prod.resolve(&values).max_coeff_diff(&direct) < 1e-15);
        let back = &prod - &prod;
        assert_eq!(back.num_terms(), 0);
    }

    #[test]
    fn cancellation_drops_terms() {
        let mut e = LinExpr::atom(2, 1.0);
        e.add_scaled(&LinExpr::atom(2, 1.0), -1.0);
        assert!(e.is_zero());
    }
}
