use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::monomial::Monomial;
use super::scalar::Scalar;
use super::PolyError;

/// Sparse multivariate polynomial over an ordered list of named variables.
///
/// Terms are kept in a map keyed by exponent vector, so iteration runs in
/// graded-lexicographic order. Zero coefficients are never stored. The zero
/// polynomial has degree 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial<T> {
    vars: Vec<String>,
    terms: BTreeMap<Monomial, T>,
}

pub(crate) fn owned_names<S: AsRef<str>>(vars: &[S]) -> Vec<String> {
    vars.iter().map(|s| s.as_ref().to_string()).collect()
}

/// Merge two variable lists, keeping `a`'s order and appending new names from `b`.
pub fn union_vars(a: &[String], b: &[String]) -> Vec<String> {
    let mut out = a.to_vec();
    for name in b {
        if !out.contains(name) {
            out.push(name.clone());
        }
    }
    out
}

impl<T: Scalar> Polynomial<T> {
    pub fn zero<S: AsRef<str>>(vars: &[S]) -> Self {
        Polynomial { vars: owned_names(vars), terms: BTreeMap::new() }
    }

    pub fn constant<S: AsRef<str>>(vars: &[S], value: T) -> Self {
        let mut p = Self::zero(vars);
        let n = p.vars.len();
        p.insert_term(Monomial::one(n), value);
        p
    }

    /// The polynomial consisting of the single variable `name`.
    pub fn var<S: AsRef<str>>(vars: &[S], name: &str) -> Result<Self, PolyError> {
        let mut p = Self::zero(vars);
        let idx = p.index_of(name).ok_or_else(|| PolyError::UnknownVariable(name.to_string()))?;
        let n = p.vars.len();
        p.insert_term(Monomial::var(n, idx), T::one());
        Ok(p)
    }

    /// Build from `(exponents, coefficient)` pairs; duplicates are summed.
    pub fn from_terms<S, I>(vars: &[S], terms: I) -> Result<Self, PolyError>
    where
        S: AsRef<str>,
        I: IntoIterator<Item = (Monomial, T)>,
    {
        let mut p = Self::zero(vars);
        for (m, c) in terms {
            if m.nvars() != p.vars.len() {
                return Err(PolyError::DimensionMismatch { expected: p.vars.len(), got: m.nvars() });
            }
            p.add_term(m, c);
        }
        Ok(p)
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn nvars(&self) -> usize {
        self.vars.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == name)
    }

    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, &T)> + ExactSizeIterator {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &Monomial) -> T {
        self.terms.get(m).cloned().unwrap_or_else(T::zero)
    }

    /// Coefficient of the constant term, i.e. the value at the origin.
    pub fn constant_term(&self) -> T {
        self.coeff(&Monomial::one(self.nvars()))
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn min_degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).min().unwrap_or(0)
    }

    /// Highest exponent of variable `i` over all terms.
    pub fn degree_in(&self, i: usize) -> u32 {
        self.terms.keys().map(|m| m.exponents()[i]).max().unwrap_or(0)
    }

    /// Whether any term involves the named variable.
    pub fn depends_on(&self, name: &str) -> bool {
        match self.index_of(name) {
            Some(i) => self.terms.keys().any(|m| m.exponents()[i] > 0),
            None => false,
        }
    }

    pub(crate) fn insert_term(&mut self, m: Monomial, c: T) {
        if c.is_zero() {
            self.terms.remove(&m);
        } else {
            self.terms.insert(m, c);
        }
    }

    pub(crate) fn add_term(&mut self, m: Monomial, c: T) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&m) {
            Some(existing) => {
                let sum = existing.clone() + c;
                if sum.is_zero() {
                    self.terms.remove(&m);
                } else {
                    *existing = sum;
                }
            }
            None => {
                self.terms.insert(m, c);
            }
        }
    }

    /// Re-express in a context that contains every current variable.
    pub fn align_to<S: AsRef<str>>(&self, vars: &[S]) -> Result<Self, PolyError> {
        let vars = owned_names(vars);
        if vars == self.vars {
            return Ok(self.clone());
        }
        let map = self
            .vars
            .iter()
            .map(|v| vars.iter().position(|w| w == v).ok_or_else(|| PolyError::UnknownVariable(v.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let n = vars.len();
        let terms = self.terms.iter().map(|(m, c)| (m.embed(&map, n), c.clone())).collect();
        Ok(Polynomial { vars, terms })
    }

    fn aligned_pair(&self, other: &Self) -> (Self, Self) {
        if self.vars == other.vars {
            return (self.clone(), other.clone());
        }
        let vars = union_vars(&self.vars, &other.vars);
        (
            self.align_to(&vars).expect("union contains all variables"),
            other.align_to(&vars).expect("union contains all variables"),
        )
    }

    pub fn scale(&self, k: &T) -> Self {
        if k.is_zero() {
            return Self::zero(&self.vars);
        }
        let terms = self.terms.iter().map(|(m, c)| (m.clone(), c.clone() * k.clone())).collect();
        Polynomial { vars: self.vars.clone(), terms }
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut result = Self::constant(&self.vars, T::one());
        let mut base = self.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        result
    }

    /// Value at `point`, one coordinate per variable in order.
    pub fn evaluate(&self, point: &[T]) -> Result<T, PolyError> {
        if point.len() != self.vars.len() {
            return Err(PolyError::DimensionMismatch { expected: self.vars.len(), got: point.len() });
        }
        let mut acc = T::zero();
        for (m, c) in &self.terms {
            let mut term = c.clone();
            for (&k, x) in m.exponents().iter().zip(point) {
                if k > 0 {
                    term = term * num_traits::pow(x.clone(), k as usize);
                }
            }
            acc = acc + term;
        }
        Ok(acc)
    }

    /// Partial derivative with respect to variable index `i`.
    pub fn partial(&self, i: usize) -> Self {
        let mut out = Self::zero(&self.vars);
        for (m, c) in &self.terms {
            let k = m.exponents()[i];
            if k == 0 {
                continue;
            }
            let mut e = m.exponents().to_vec();
            e[i] -= 1;
            let factor = T::from_u32(k).expect("exponent fits in scalar");
            out.add_term(Monomial::new(e), c.clone() * factor);
        }
        out
    }

    pub fn partial_by_name(&self, name: &str) -> Result<Self, PolyError> {
        let i = self.index_of(name).ok_or_else(|| PolyError::UnknownVariable(name.to_string()))?;
        Ok(self.partial(i))
    }

    pub fn gradient(&self) -> Vec<Self> {
        (0..self.nvars()).map(|i| self.partial(i)).collect()
    }

    /// Replace bound variables by polynomials; unbound variables pass through.
    ///
    /// The result lives in the union of the unbound variables and the
    /// variables of every binding.
    pub fn substitute(&self, bindings: &[(&str, &Polynomial<T>)]) -> Result<Self, PolyError> {
        let mut bound: HashMap<usize, &Polynomial<T>> = HashMap::new();
        for (name, poly) in bindings {
            let i = self.index_of(name).ok_or_else(|| PolyError::UnknownVariable(name.to_string()))?;
            bound.insert(i, *poly);
        }
        let mut vars: Vec<String> = self
            .vars
            .iter()
            .enumerate()
            .filter(|(i, _)| !bound.contains_key(i))
            .map(|(_, v)| v.clone())
            .collect();
        for (_, poly) in bindings {
            vars = union_vars(&vars, poly.vars());
        }
        let aligned: HashMap<usize, Polynomial<T>> = bound
            .iter()
            .map(|(&i, p)| (i, p.align_to(&vars).expect("context contains binding variables")))
            .collect();
        let free_map: Vec<Option<usize>> = self
            .vars
            .iter()
            .enumerate()
            .map(|(i, v)| if bound.contains_key(&i) { None } else { vars.iter().position(|w| w == v) })
            .collect();

        let mut power_cache: HashMap<(usize, u32), Polynomial<T>> = HashMap::new();
        let mut out = Polynomial::zero(&vars);
        for (m, c) in &self.terms {
            let mut free_exp = vec![0u32; vars.len()];
            let mut term = Polynomial::constant(&vars, c.clone());
            for (i, &k) in m.exponents().iter().enumerate() {
                if k == 0 {
                    continue;
                }
                match free_map[i] {
                    Some(j) => free_exp[j] += k,
                    None => {
                        let factor = power_cache
                            .entry((i, k))
                            .or_insert_with(|| aligned[&i].pow(k))
                            .clone();
                        term = &term * &factor;
                    }
                }
            }
            let shift = Monomial::new(free_exp);
            for (tm, tc) in term.terms {
                out.add_term(tm.mul(&shift), tc);
            }
        }
        Ok(out)
    }

    pub fn map_coeffs<U: Scalar>(&self, f: impl Fn(&T) -> U) -> Polynomial<U> {
        let mut out = Polynomial::zero(&self.vars);
        for (m, c) in &self.terms {
            out.insert_term(m.clone(), f(c));
        }
        out
    }

    pub fn to_f64(&self) -> Polynomial<f64> {
        self.map_coeffs(|c| c.to_f64_lossy())
    }

    /// Rename variables positionally.
    pub fn with_var_names<S: AsRef<str>>(&self, vars: &[S]) -> Result<Self, PolyError> {
        if vars.len() != self.vars.len() {
            return Err(PolyError::DimensionMismatch { expected: self.vars.len(), got: vars.len() });
        }
        Ok(Polynomial { vars: owned_names(vars), terms: self.terms.clone() })
    }

    /// Drop variables that appear in no term.
    pub fn trim_vars(&self) -> Self {
        let keep: Vec<usize> = (0..self.nvars()).filter(|&i| self.degree_in(i) > 0).collect();
        let vars: Vec<String> = keep.iter().map(|&i| self.vars[i].clone()).collect();
        let terms = self
            .terms
            .iter()
            .map(|(m, c)| (Monomial::new(keep.iter().map(|&i| m.exponents()[i]).collect()), c.clone()))
            .collect();
        Polynomial { vars, terms }
    }

    pub fn max_abs_coeff(&self) -> T {
        self.terms
            .values()
            .map(|c| c.abs())
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }
}

impl Polynomial<f64> {
    pub fn coeff_norm2(&self) -> f64 {
        self.terms.values().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Largest absolute coefficient difference against `other` (after alignment).
    pub fn max_coeff_diff(&self, other: &Self) -> f64 {
        (self - other).max_abs_coeff()
    }

    /// Remove terms with `|c| <= tol`.
    pub fn prune(&self, tol: f64) -> Self {
        let terms = self.terms.iter().filter(|(_, c)| c.abs() > tol).map(|(m, c)| (m.clone(), *c)).collect();
        Polynomial { vars: self.vars.clone(), terms }
    }

    /// Fast evaluation for the `f64` case.
    pub fn eval(&self, point: &[f64]) -> f64 {
        debug_assert_eq!(point.len(), self.vars.len());
        self.terms.iter().map(|(m, c)| c * m.eval(point)).sum()
    }
}

impl<T: Scalar> Add for &Polynomial<T> {
    type Output = Polynomial<T>;
    fn add(self, rhs: &Polynomial<T>) -> Polynomial<T> {
        let (mut a, b) = self.aligned_pair(rhs);
        for (m, c) in b.terms {
            a.add_term(m, c);
        }
        a
    }
}

impl<T: Scalar> Sub for &Polynomial<T> {
    type Output = Polynomial<T>;
    fn sub(self, rhs: &Polynomial<T>) -> Polynomial<T> {
        let (mut a, b) = self.aligned_pair(rhs);
        for (m, c) in b.terms {
            a.add_term(m, -c);
        }
        a
    }
}

impl<T: Scalar> Mul for &Polynomial<T> {
    type Output = Polynomial<T>;
    fn mul(self, rhs: &Polynomial<T>) -> Polynomial<T> {
        let (a, b) = self.aligned_pair(rhs);
        let mut out = Polynomial::zero(&a.vars);
        for (ma, ca) in &a.terms {
            for (mb, cb) in &b.terms {
                out.add_term(ma.mul(mb), ca.clone() * cb.clone());
            }
        }
        out
    }
}

impl<T: Scalar> Neg for &Polynomial<T> {
    type Output = Polynomial<T>;
    fn neg(self) -> Polynomial<T> {
        self.scale(&-T::one())
    }
}

macro_rules! forward_owned {
    ($tr:ident, $method:ident) => {
        impl<T: Scalar> $tr for Polynomial<T> {
            type Output = Polynomial<T>;
            fn $method(self, rhs: Polynomial<T>) -> Polynomial<T> {
                (&self).$method(&rhs)
            }
        }
        impl<T: Scalar> $tr<&Polynomial<T>> for Polynomial<T> {
            type Output = Polynomial<T>;
            fn $method(self, rhs: &Polynomial<T>) -> Polynomial<T> {
                (&self).$method(rhs)
            }
        }
        impl<T: Scalar> $tr<Polynomial<T>> for &Polynomial<T> {
            type Output = Polynomial<T>;
            fn $method(self, rhs: Polynomial<T>) -> Polynomial<T> {
                self.$method(&rhs)
            }
        }
    };
}

forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl<T: Scalar> Neg for Polynomial<T> {
    type Output = Polynomial<T>;
    fn neg(self) -> Polynomial<T> {
        -&self
    }
}

impl<T: Scalar> fmt::Display for Polynomial<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::parse::render(self))
    }
}

#[derive(Serialize, Deserialize)]
struct TermRecord<T> {
    exponents: Vec<u32>,
    value: T,
}

#[derive(Serialize, Deserialize)]
struct PolyRecord<T> {
    vars: Vec<String>,
    coefficients: Vec<TermRecord<T>>,
}

impl<T: Scalar + Serialize> Serialize for Polynomial<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PolyRecord {
            vars: self.vars.clone(),
            coefficients: self
                .terms
                .iter()
                .map(|(m, c)| TermRecord { exponents: m.exponents().to_vec(), value: c.clone() })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for Polynomial<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rec = PolyRecord::<T>::deserialize(deserializer)?;
        let terms = rec.coefficients.into_iter().map(|t| (Monomial::new(t.exponents), t.value));
        Polynomial::from_terms(&rec.vars, terms).map_err(serde::de::Error::custom)
    }
}
