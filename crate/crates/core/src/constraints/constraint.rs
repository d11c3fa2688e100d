use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use super::delta::{DeltaOperator, DeltaTag};
use super::verify::max_valid_interval;
use super::ConstraintError;
use crate::poly::{Polynomial, Scalar};

/// Variable ordering used by every constraint constructor: input `v`, output `w`.
pub const VW: [&str; 2] = ["v", "w"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Hand,
    Taylor,
    Pade,
    Sector,
    Synthesized,
    Transformed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidityKind {
    /// `v ∈ [lo, hi]`
    Interval { lo: f64, hi: f64 },
    /// `w ∈ [lo, hi]`
    OutputBox { lo: f64, hi: f64 },
    Other,
}

/// A region `q(v, w) ≥ 0` on which a constraint is claimed to hold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    #[serde(flatten)]
    pub kind: ValidityKind,
    pub q: Polynomial<f64>,
}

impl Validity {
    pub fn interval(lo: f64, hi: f64) -> Self {
        let q = Polynomial::from_terms(&VW, [(mono(1, 0), lo + hi), (mono(2, 0), -1.0), (mono(0, 0), -lo * hi)])
            .expect("two variables");
        Validity { kind: ValidityKind::Interval { lo, hi }, q }
    }

    pub fn output_box(lo: f64, hi: f64) -> Self {
        let q = Polynomial::from_terms(&VW, [(mono(0, 1), lo + hi), (mono(0, 2), -1.0), (mono(0, 0), -lo * hi)])
            .expect("two variables");
        Validity { kind: ValidityKind::OutputBox { lo, hi }, q }
    }

    pub fn depends_on_output(&self) -> bool {
        self.q.depends_on(VW[1])
    }
}

fn mono(a: u32, b: u32) -> crate::poly::Monomial {
    crate::poly::Monomial::new(vec![a, b])
}

/// Pointwise constraint `p(v, Δ(v)) ≥ 0`, stored expanded in `(v, w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialConstraint {
    #[serde(flatten)]
    pub p: Polynomial<f64>,
    #[serde(default)]
    pub validity: Vec<Validity>,
    pub provenance: Provenance,
    /// Input interval on which the constraint has been verified.
    #[serde(default)]
    pub interval: Option<[f64; 2]>,
    /// Human-readable factored form, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factored: Option<String>,
}

impl PolynomialConstraint {
    pub fn new(p: Polynomial<f64>, provenance: Provenance) -> Self {
        PolynomialConstraint { p, validity: Vec::new(), provenance, interval: None, factored: None }
    }

    pub fn with_interval(mut self, lo: f64, hi: f64) -> Self {
        self.interval = Some([lo, hi]);
        self.validity.retain(|q| !matches!(q.kind, ValidityKind::Interval { .. }));
        self.validity.push(Validity::interval(lo, hi));
        self
    }

    pub fn with_validity(mut self, q: Validity) -> Self {
        self.validity.push(q);
        self
    }

    pub fn eval(&self, v: f64, w: f64) -> f64 {
        self.p.eval(&[v, w])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("constraint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn v() -> Polynomial<f64> {
    Polynomial::var(&VW, "v").expect("v")
}

fn w() -> Polynomial<f64> {
    Polynomial::var(&VW, "w").expect("w")
}


/// `(βv − w)(w − αv)`: nonnegative exactly when `w` lies between `αv` and `βv`.
pub fn sector_constraint(alpha: f64, beta: f64) -> Result<PolynomialConstraint, ConstraintError> {
    if alpha > beta {
        return Err(ConstraintError::InvalidArgument(format!("sector needs alpha <= beta, got [{alpha}, {beta}]")));
    }
    let p = &(&v().scale(&beta) - &w()) * &(&w() - &v().scale(&alpha));
    let mut out = PolynomialConstraint::new(p, Provenance::Sector);
    out.factored = Some(format!("({beta}*v - w)*(w - {alpha}*v)"));
    Ok(out)
}

fn univariate_in_v(coeffs: &[f64]) -> Polynomial<f64> {
    Polynomial::from_terms(&VW, coeffs.iter().enumerate().map(|(i, &a)| (mono(i as u32, 0), a))).expect("two variables")
}

/// `(ε₁vᵏ − (w − T_n(v)))·(ε₂vᵏ + (w − T_n(v)))` with `T_n` the degree-`n`
/// truncation of `taylor_coeffs`.
pub fn taylor_constraint(
    taylor_coeffs: &[f64],
    n: usize,
    k: u32,
    eps1: f64,
    eps2: f64,
) -> Result<PolynomialConstraint, ConstraintError> {
    if eps1 <= 0.0 || eps2 <= 0.0 || k < 1 {
        return Err(ConstraintError::InvalidArgument("need eps1, eps2 > 0 and k >= 1".into()));
    }
    if n >= taylor_coeffs.len() {
        return Err(ConstraintError::InvalidArgument(format!(
            "degree {n} needs {} coefficients, got {}",
            n + 1,
            taylor_coeffs.len()
        )));
    }
    let tn = univariate_in_v(&taylor_coeffs[..=n]);
    let r = &w() - &tn;
    let vk = v().pow(k);
    let p = &(&vk.scale(&eps1) - &r) * &(&vk.scale(&eps2) + &r);
    let mut out = PolynomialConstraint::new(p, Provenance::Taylor);
    out.factored = Some(format!("({eps1}*v^{k} - (w - T{n}(v)))*({eps2}*v^{k} + (w - T{n}(v)))"));
    Ok(out)
}

/// `[m/n]` Padé approximant `N/D` of a power series, `D(0) = 1`, by exact
/// (for rationals) Gaussian elimination. Polynomials are in the single variable `v`.
pub fn pade_approximant<T: Scalar>(
    taylor_coeffs: &[T],
    m: usize,
    n: usize,
) -> Result<(Polynomial<T>, Polynomial<T>), ConstraintError> {
    if taylor_coeffs.len() < m + n + 1 {
        return Err(ConstraintError::InvalidArgument(format!(
            "[{m}/{n}] needs {} coefficients, got {}",
            m + n + 1,
            taylor_coeffs.len()
        )));
    }
    let cf = |i: isize| if i < 0 { T::zero() } else { taylor_coeffs[i as usize].clone() };
    // Rows k = m+1..=m+n: Σ_{j=1..n} c_{k−j} d_j = −c_k.
    let mut a: Vec<Vec<T>> = (0..n)
        .map(|r| {
            let k = (m + 1 + r) as isize;
            let mut row: Vec<T> = (1..=n).map(|j| cf(k - j as isize)).collect();
            row.push(-cf(k));
            row
        })
        .collect();
    let scale = a.iter().flatten().map(|x| x.to_f64_lossy().abs()).fold(0.0, f64::max).max(1.0);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).expect("comparable"))
            .expect("nonempty");
        if a[piv][col].is_zero() || a[piv][col].to_f64_lossy().abs() <= 1e-13 * scale {
            return Err(ConstraintError::SingularPade { m, n });
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone() / a[col][col].clone();
                for cidx in col..=n {
                    let sub = f.clone() * a[col][cidx].clone();
                    a[r][cidx] = a[r][cidx].clone() - sub;
                }
            }
        }
    }
    let mut d = vec![T::one()];
    for (r, row) in a.iter().enumerate() {
        d.push(row[n].clone() / row[r].clone());
    }
    let nums: Vec<T> = (0..=m)
        .map(|k| (0..=k.min(n)).fold(T::zero(), |acc, j| acc + cf((k - j) as isize) * d[j].clone()))
        .collect();
    let to_poly = |cs: Vec<T>| {
        Polynomial::from_terms(&["v"], cs.into_iter().enumerate().map(|(i, x)| (crate::poly::Monomial::new(vec![i as u32]), x)))
            .expect("one variable")
    };
    Ok((to_poly(nums), to_poly(d)))
}

/// `(ε₁vᵏD − (wD − N))·(ε₂vᵏD + (wD − N))`, valid where `D > 0`.
/// `num`, `den` are univariate in their first variable.
pub fn pade_constraint(
    num: &Polynomial<f64>,
    den: &Polynomial<f64>,
    k: u32,
    eps1: f64,
    eps2: f64,
    interval: (f64, f64),
) -> Result<PolynomialConstraint, ConstraintError> {
    if eps1 <= 0.0 || eps2 <= 0.0 || k < 1 {
        return Err(ConstraintError::InvalidArgument("need eps1, eps2 > 0 and k >= 1".into()));
    }
    let lift = |p: &Polynomial<f64>| -> Polynomial<f64> {
        Polynomial::from_terms(&VW, p.terms().map(|(m, &c)| (mono(m.exponents()[0], 0), c))).expect("two variables")
    };
    let (nv, dv) = (lift(num), lift(den));
    let (lo, hi) = interval;
    let steps = 10_000;
    for i in 0..=steps {
        let x = lo + (hi - lo) * i as f64 / steps as f64;
        let dx = dv.eval(&[x, 0.0]);
        if dx <= 0.0 {
            return Err(ConstraintError::DenominatorRoot { at: x });
        }
    }
    let r = &(&w() * &dv) - &nv;
    let vkd = &v().pow(k) * &dv;
    let p = &(&vkd.scale(&eps1) - &r) * &(&vkd.scale(&eps2) + &r);
    let mut out = PolynomialConstraint::new(p, Provenance::Pade).with_interval(lo, hi);
    out.factored = Some(format!("({eps1}*v^{k}*D - (w*D - N))*({eps2}*v^{k}*D + (w*D - N)), N = {num}, D = {den}"));
    Ok(out)
}

/// `(w − lo)(hi − w)`.
pub fn box_validity(w_lo: f64, w_hi: f64) -> Result<Validity, ConstraintError> {
    if w_lo >= w_hi {
        return Err(ConstraintError::InvalidArgument(format!("empty box [{w_lo}, {w_hi}]")));
    }
    Ok(Validity::output_box(w_lo, w_hi))
}

#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub delta: DeltaTag,
    pub constraint: PolynomialConstraint,
}

/// Constraints built by inspection: the tanh cubic and the exp quadratic.
/// Each one's input interval is the largest interval around 0 on which it
/// holds, found by root scan over `[-10, 10]`.
pub fn hand_constraints() -> Vec<CatalogEntry> {
    let cubic = {
        let left = &(&v() - &w().pow(3)) - &w();
        let right = &(&w().pow(3).scale(&(1.0 / 6.0)) + &w()) - &v();
        (&left * &right, "(v - w^3 - w)*(w^3/6 + w - v)", DeltaOperator::tanh())
    };
    let quad = {
        let left = &w() - &v().pow(2).scale(&0.3);
        let right = &v().pow(2).scale(&0.7) - &w();
        (&left * &right, "(w - 0.3*v^2)*(0.7*v^2 - w)", DeltaOperator::exp_minus_affine())
    };
    [("tanh_cubic", cubic), ("exp_quadratic", quad)]
        .into_iter()
        .map(|(name, (p, factored, delta))| {
            let mut c = PolynomialConstraint::new(p, Provenance::Hand);
            c.factored = Some(factored.to_string());
            let (lo, hi) = max_valid_interval(&c.p, &delta, (-10.0, 10.0), 100_000);
            CatalogEntry { name, delta: delta.tag, constraint: c.with_interval(lo, hi) }
        })
        .collect()
}

/// Exact coefficients of a rational series as floats.
pub fn to_f64_coeffs(c: &[Rational64]) -> Vec<f64> {
    c.iter().map(|r| r.to_f64_lossy()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::delta::{taylor_coefficients, Series};
    use crate::poly::parse;

    #[test]
    fn sector_factored_forms() {
        let s = sector_constraint(-0.5379, 0.0).unwrap();
        let want: Polynomial<f64> = parse("-w^2 - 0.5379*v*w", &VW).unwrap();
        assert!(s.p.max_coeff_diff(&want) < 1e-15);
        let s = sector_constraint(-0.368, 0.318).unwrap();
        let want: Polynomial<f64> = parse("(0.318*v - w)*(0.368*v + w)", &VW).unwrap();
        assert!(s.p.max_coeff_diff(&want) < 1e-15);
        assert!(sector_constraint(1.0, 0.0).is_err());
    }

    #[test]
    fn taylor_identity_case() {
        let c = taylor_constraint(&[0.0, 1.0], 1, 3, 1.0, 1.0).unwrap();
        let want: Polynomial<f64> = parse("(v^3 - (w - v))*(v^3 + (w - v))", &VW).unwrap();
        assert!(c.p.max_coeff_diff(&want) < 1e-15);
        // On w = T_n(v) the product collapses to eps1*eps2*v^(2k).
        for x in [-1.5, 0.2, 0.9] {
            assert!((c.eval(x, x) - x.powi(6)).abs() < 1e-12);
        }
    }

    #[test]
    fn pade_exp_one_one() {
        let coeffs = taylor_coefficients(Series::Exp, 2);
        let (n, d) = pade_approximant(&coeffs, 1, 1).unwrap();
        let half = Rational64::new(1, 2);
        let one = Rational64::from_integer(1);
        assert_eq!(n.coeff(&crate::poly::Monomial::new(vec![0])), one);
        assert_eq!(n.coeff(&crate::poly::Monomial::new(vec![1])), half);
        assert_eq!(d.coeff(&crate::poly::Monomial::new(vec![1])), -half);
    }

    #[test]
    fn pade_tanh_three_two() {
        let coeffs = taylor_coefficients(Series::Tanh, 5);
        let (n, d) = pade_approximant(&coeffs, 3, 2).unwrap();
        // x(x^2 + 15)/(6x^2 + 15) normalized so D(0) = 1.
        let m = |k| crate::poly::Monomial::new(vec![k]);
        assert_eq!(n.coeff(&m(1)), Rational64::from_integer(1));
        assert_eq!(n.coeff(&m(3)), Rational64::new(1, 15));
        assert_eq!(d.coeff(&m(2)), Rational64::new(2, 5));
        assert_eq!(d.coeff(&m(1)), Rational64::from_integer(0));
    }

    #[test]
    fn pade_degenerate_table_entry() {
        // tanh has c_0 = c_2 = 0: the [0/1] system reads 0·d_1 = −c_1.
        let coeffs = taylor_coefficients(Series::Tanh, 3);
        assert!(matches!(pade_approximant(&coeffs, 0, 1), Err(ConstraintError::SingularPade { .. })));
    }

    #[test]
    fn json_round_trip() {
        let c = sector_constraint(0.0, 1.0).unwrap().with_interval(-5.0, 5.0).with_validity(box_validity(-3.0, 3.0).unwrap());
        let text = c.to_json();
        for key in ["\"vars\"", "\"coefficients\"", "\"validity\"", "\"provenance\"", "\"interval\""] {
            assert!(text.contains(key), "{key} missing");
        }
        assert_eq!(PolynomialConstraint::from_json(&text).unwrap(), c);
    }

    #[test]
    fn box_validity_forms() {
        let q = box_validity(-3.0, 3.0).unwrap().q;
        let want: Polynomial<f64> = parse("9 - w^2", &VW).unwrap();
        assert!(q.max_coeff_diff(&want) < 1e-15);
        let q = box_validity(0.0, 3.1).unwrap().q;
        assert!((q.eval(&[0.0, 1.55]) - 1.55f64.powi(2)).abs() < 1e-12);
        assert!(box_validity(1.0, 1.0).is_err());
    }
}
