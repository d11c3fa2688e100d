use serde::{Deserialize, Serialize};

use super::monomial::{monomials_up_to, Monomial};
use super::polynomial::owned_names;

/// Ordered list of distinct monomials over a variable context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonomialBasis {
    pub vars: Vec<String>,
    pub monomials: Vec<Monomial>,
}

impl MonomialBasis {
    /// Every monomial of total degree `<= max_degree`; `C(n + d, d)` entries.
    pub fn full<S: AsRef<str>>(vars: &[S], max_degree: u32) -> Self {
        Self::degree_range(vars, 0, max_degree)
    }

    pub fn degree_range<S: AsRef<str>>(vars: &[S], min_degree: u32, max_degree: u32) -> Self {
        let vars = owned_names(vars);
        let monomials = monomials_up_to(vars.len(), min_degree, max_degree);
        MonomialBasis { vars, monomials }
    }

    pub fn from_monomials<S: AsRef<str>>(vars: &[S], mut monomials: Vec<Monomial>) -> Self {
        monomials.sort();
        monomials.dedup();
        MonomialBasis { vars: owned_names(vars), monomials }
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn max_degree(&self) -> u32 {
        self.monomials.iter().map(Monomial::degree).max().unwrap_or(0)
    }
}

/// `C(n + d, d)`.
pub fn basis_size(nvars: usize, degree: u32) -> usize {
    let mut acc: u128 = 1;
    for i in 1..=degree as u128 {
        acc = acc * (nvars as u128 + i) / i;
    }
    acc as usize
}
