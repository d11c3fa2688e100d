use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Exponent vector over a fixed variable ordering.
///
/// Ordered graded-lexicographically: total degree first, then the exponent
/// of the first variable, then the second, and so on.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Monomial(exponents)
    }

    pub fn one(nvars: usize) -> Self {
        Monomial(vec![0; nvars])
    }

    /// The monomial `x_index` in an `nvars`-variable context.
    pub fn var(nvars: usize, index: usize) -> Self {
        let mut e = vec![0; nvars];
        e[index] = 1;
        Monomial(e)
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn nvars(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.0.len(), other.0.len());
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `self / other` when `other` divides `self`.
    pub fn div(&self, other: &Monomial) -> Option<Monomial> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.checked_sub(*b))
            .collect::<Option<Vec<_>>>()
            .map(Monomial)
    }

    /// Re-index into a larger context. `map[i]` is the new position of variable `i`.
    pub fn embed(&self, map: &[usize], nvars: usize) -> Monomial {
        let mut e = vec![0; nvars];
        for (i, &k) in self.0.iter().enumerate() {
            e[map[i]] += k;
        }
        Monomial(e)
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(point)
            .fold(1.0, |acc, (&k, &x)| if k == 0 { acc } else { acc * x.powi(k as i32) })
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All exponent vectors in `nvars` variables with total degree in `[min_deg, max_deg]`,
/// in graded-lexicographic order.
pub fn monomials_up_to(nvars: usize, min_deg: u32, max_deg: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for d in min_deg..=max_deg {
        let mut of_degree = Vec::new();
        let mut current = vec![0u32; nvars];
        fill_degree(&mut current, 0, d, &mut of_degree);
        of_degree.sort();
        out.extend(of_degree);
    }
    out
}

fn fill_degree(current: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<Monomial>) {
    if current.is_empty() {
        if remaining == 0 {
            out.push(Monomial(Vec::new()));
        }
        return;
    }
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(Monomial(current.clone()));
        current[pos] = 0;
        return;
    }
    for k in 0..=remaining {
        current[pos] = k;
        fill_degree(current, pos + 1, remaining - k, out);
    }
    current[pos] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_lex_order() {
        let one = Monomial::new(vec![0, 0]);
        let y = Monomial::new(vec![0, 1]);
        let x = Monomial::new(vec![1, 0]);
        let x2 = Monomial::new(vec![2, 0]);
        let xy = Monomial::new(vec![1, 1]);
        let mut v = vec![x2.clone(), x.clone(), one.clone(), xy.clone(), y.clone()];
        v.sort();
        assert_eq!(v, vec![one, y, x, xy, x2]);
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(monomials_up_to(1, 0, 1).len(), 2);
        assert_eq!(monomials_up_to(2, 0, 2).len(), 6);
        assert_eq!(monomials_up_to(3, 0, 3).len(), 20);
        assert_eq!(monomials_up_to(3, 2, 2).len(), 6);
        assert_eq!(monomials_up_to(0, 0, 3).len(), 1);
    }

    #[test]
    fn division() {
        let a = Monomial::new(vec![2, 1]);
        let b = Monomial::new(vec![1, 1]);
        assert_eq!(a.div(&b), Some(Monomial::new(vec![1, 0])));
        assert_eq!(b.div(&a), None);
    }
}
