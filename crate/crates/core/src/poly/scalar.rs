use std::fmt::{Debug, Display};

use num_rational::Rational64;
use num_traits::ops::checked::{CheckedDiv, CheckedMul};
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// Coefficient field for [`Polynomial`](super::Polynomial).
///
/// Implemented for `f64`, `f32` and `Rational64`. Floating point is what the
/// solver pipeline uses; the rational impl gives exact arithmetic for tests
/// and for small closed-form constructions such as Padé tables.
pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + Display + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Parse a numeric literal as produced by the polynomial grammar:
    /// decimal with optional exponent, optionally followed by `/denominator`.
    fn parse_literal(text: &str) -> Option<Self>;

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_f64_lossy(x: f64) -> Self;

    /// Text used when rendering a coefficient. Must round-trip through
    /// [`Scalar::parse_literal`].
    fn render(&self) -> String {
        format!("{self}")
    }
}

fn split_fraction(text: &str) -> (&str, Option<&str>) {
    match text.split_once('/') {
        Some((num, den)) => (num, Some(den)),
        None => (text, None),
    }
}

impl Scalar for f64 {
    fn parse_literal(text: &str) -> Option<Self> {
        let (num, den) = split_fraction(text);
        let n: f64 = num.parse().ok()?;
        match den {
            Some(d) => Some(n / d.parse::<f64>().ok()?),
            None => Some(n),
        }
    }

    fn from_f64_lossy(x: f64) -> Self {
        x
    }

    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl Scalar for f32 {
    fn parse_literal(text: &str) -> Option<Self> {
        f64::parse_literal(text).map(|x| x as f32)
    }

    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }
}

impl Scalar for Rational64 {
    fn parse_literal(text: &str) -> Option<Self> {
        let (num, den) = split_fraction(text);
        let n = parse_decimal_exact(num)?;
        match den {
            Some(d) => {
                let d = parse_decimal_exact(d)?;
                if d == Rational64::from_integer(0) {
                    None
                } else {
                    Some(n / d)
                }
            }
            None => Some(n),
        }
    }

    fn from_f64_lossy(x: f64) -> Self {
        Rational64::from_f64(x).unwrap_or_else(|| Rational64::from_integer(0))
    }
}

/// Exact decimal parse (`-12.5e-3` → -1/80) without a float detour.
fn parse_decimal_exact(text: &str) -> Option<Rational64> {
    let (mantissa, exp) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let all: String = format!("{int_part}{frac_part}");
    let mut value: i64 = all.parse().ok()?;
    if neg {
        value = -value;
    }
    let scale = exp - frac_part.len() as i32;
    let ten = Rational64::from_integer(10);
    let mut r = Rational64::from_integer(value);
    if scale >= 0 {
        for _ in 0..scale {
            r = r.checked_mul(&ten)?;
        }
    } else {
        for _ in 0..(-scale) {
            r = r.checked_div(&ten)?;
        }
    }
    Some(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_literals() {
        assert_eq!(f64::parse_literal("0.5"), Some(0.5));
        assert_eq!(f64::parse_literal("1e-3"), Some(1e-3));
        assert_eq!(f64::parse_literal("1/4"), Some(0.25));
        assert_eq!(f64::parse_literal("abc"), None);
    }

    #[test]
    fn rational_literals_are_exact() {
        assert_eq!(Rational64::parse_literal("-12.5e-3"), Some(Rational64::new(-1, 80)));
        assert_eq!(Rational64::parse_literal("3/6"), Some(Rational64::new(1, 2)));
        assert_eq!(Rational64::parse_literal("1/0"), None);
        assert_eq!(Rational64::parse_literal("."), None);
    }
}
