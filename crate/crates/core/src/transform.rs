//! Static graph maps `h = (h₁, h₂)` applied to constraints on `(v, w)`.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{DeltaOperator, VW};
use crate::poly::{Monomial, PolyError, Polynomial};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("h1 is not monotone along the graph: derivative ranges over [{min}, {max}]")]
    NotInvertible { min: f64, max: f64 },
    #[error(transparent)]
    Poly(#[from] PolyError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphMap {
    pub h1: Polynomial<f64>,
    pub h2: Polynomial<f64>,
}

impl GraphMap {
    pub fn new(h1: Polynomial<f64>, h2: Polynomial<f64>) -> Result<Self, TransformError> {
        Ok(GraphMap { h1: h1.align_to(&VW)?, h2: h2.align_to(&VW)? })
    }

    pub fn identity() -> Self {
        GraphMap { h1: Polynomial::var(&VW, "v").expect("v"), h2: Polynomial::var(&VW, "w").expect("w") }
    }

    /// `h₁ = H₀₀v + H₀₁w`, `h₂ = H₁₀v + H₁₁w`.
    pub fn linear(h: &Matrix2<f64>) -> Self {
        let lin = |a: f64, b: f64| {
            Polynomial::from_terms(&VW, [(Monomial::new(vec![1, 0]), a), (Monomial::new(vec![0, 1]), b)]).expect("vw")
        };
        GraphMap { h1: lin(h[(0, 0)], h[(0, 1)]), h2: lin(h[(1, 0)], h[(1, 1)]) }
    }

    /// `(h₁, h₂)` evaluated on the graph point `(x, Δ(x))`.
    pub fn on_graph(&self, delta: &DeltaOperator, x: f64) -> (f64, f64) {
        let pt = [x, delta.eval(x)];
        (self.h1.eval(&pt), self.h2.eval(&pt))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForm {
    pub m: Matrix2<f64>,
}

impl QuadraticForm {
    pub fn new(m: Matrix2<f64>) -> Result<Self, TransformError> {
        let asym = (m[(0, 1)] - m[(1, 0)]).abs();
        if asym > 0.0 {
            return Err(TransformError::NotSymmetric(asym));
        }
        Ok(QuadraticForm { m })
    }

    /// `[v w] M [v w]ᵀ`.
    pub fn polynomial(&self) -> Polynomial<f64> {
        let m = &self.m;
        Polynomial::from_terms(
            &VW,
            [
                (Monomial::new(vec![2, 0]), m[(0, 0)]),
                (Monomial::new(vec![1, 1]), m[(0, 1)] + m[(1, 0)]),
                (Monomial::new(vec![0, 2]), m[(1, 1)]),
            ],
        )
        .expect("vw")
    }
}

/// `ψ(h₁(v, w), h₂(v, w))`.
pub fn compose_constraint(psi: &Polynomial<f64>, h: &GraphMap) -> Result<Polynomial<f64>, TransformError> {
    let psi = psi.align_to(&VW)?;
    let out = psi.substitute(&[("v", &h.h1), ("w", &h.h2)])?;
    Ok(out.align_to(&VW)?)
}

/// `HᵀMH`, symmetrized, and its quadratic polynomial.
pub fn quad_transform(h: &Matrix2<f64>, m: &QuadraticForm) -> (QuadraticForm, Polynomial<f64>) {
    let raw = h.transpose() * m.m * h;
    let off = 0.5 * (raw[(0, 1)] + raw[(1, 0)]);
    let mt = QuadraticForm { m: Matrix2::new(raw[(0, 0)], off, off, raw[(1, 1)]) };
    let p = mt.polynomial();
    (mt, p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvertibilityReport {
    pub ok: bool,
    pub min_derivative: f64,
    pub max_derivative: f64,
}

/// `d/dx h₁(x, Δ(x))` by the chain rule.
pub fn h1_slope(h: &GraphMap, delta: &DeltaOperator, x: f64) -> f64 {
    let pt = [x, delta.eval(x)];
    let dv = h.h1.partial(0).eval(&pt);
    let dw = h.h1.partial(1).eval(&pt);
    dv + dw * delta.derivative(x)
}

/// Scalar invertibility of `x ↦ h₁(x, Δ(x))`: the slope keeps one sign with
/// margin 1e-9 on a uniform grid.
pub fn check_h1_invertible(h: &GraphMap, delta: &DeltaOperator, interval: (f64, f64), grid: usize) -> InvertibilityReport {
    let n = grid.max(1);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..=n {
        let x = interval.0 + (interval.1 - interval.0) * i as f64 / n as f64;
        let s = h1_slope(h, delta, x);
        lo = lo.min(s);
        hi = hi.max(s);
    }
    InvertibilityReport { ok: lo >= 1e-9 || hi <= -1e-9, min_derivative: lo, max_derivative: hi }
}

/// Samples `(ṽ, w̃) = (h₁, h₂)(x, Δ(x))` of the graph of `Δ̃ = h₂∘h₁⁻¹`,
/// sorted by `ṽ`.
pub fn tilde_delta(h: &GraphMap, delta: &DeltaOperator, xs: &[f64]) -> Result<Vec<(f64, f64)>, TransformError> {
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rep = check_h1_invertible(h, delta, (lo, hi), (xs.len() * 4).max(1000));
    if !rep.ok {
        return Err(TransformError::NotInvertible { min: rep.min_derivative, max: rep.max_derivative });
    }
    let mut out: Vec<(f64, f64)> = xs.iter().map(|&x| h.on_graph(delta, x)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// `(ad − bc)/(b² − d²)` for `H = [a b; c d]`: the slope at which the
/// transformed `diag(1, −1)` constraint touches a slope-restricted graph.
/// `None` when `b² = d²`.
pub fn slope_condition(h: &Matrix2<f64>) -> Option<f64> {
    let (a, b, c, d) = (h[(0, 0)], h[(0, 1)], h[(1, 0)], h[(1, 1)]);
    let den = b * b - d * d;
    (den != 0.0).then(|| (a * d - b * c) / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_check() {
        assert!(QuadraticForm::new(Matrix2::new(1.0, 2.0, 2.0, 3.0)).is_ok());
        assert!(QuadraticForm::new(Matrix2::new(1.0, 2.0, 2.5, 3.0)).is_err());
    }

    #[test]
    fn example_slope_condition() {
        let h = Matrix2::new(1.0, -0.5, 1.0, -1.5);
        assert_eq!(slope_condition(&h), Some(0.5));
        assert_eq!(slope_condition(&Matrix2::identity()), Some(-1.0));
    }
}
