//! Text grammar for polynomials.
//!
//! ```text
//! expr   := [sign] term (sign term)*
//! term   := factor ('*' factor)*
//! factor := number | name ['^' integer] | '(' expr ')' ['^' integer]
//! number := digits ['.' digits] [('e'|'E') [sign] digits] ['/' digits]
//! ```
//!
//! Whitespace is ignored between tokens. Every variable name must belong to
//! the supplied ordering.

use super::monomial::Monomial;
use super::polynomial::{owned_names, Polynomial};
use super::scalar::Scalar;
use super::PolyError;

pub fn parse<T: Scalar, S: AsRef<str>>(text: &str, vars: &[S]) -> Result<Polynomial<T>, PolyError> {
    let mut parser = Parser { src: text.as_bytes(), pos: 0, vars: owned_names(vars) };
    parser.skip_ws();
    if parser.at_end() {
        return Err(parser.error("empty expression"));
    }
    let p = parser.expr()?;
    parser.skip_ws();
    if !parser.at_end() {
        return Err(parser.error("unexpected character"));
    }
    Ok(p)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: Vec<String>,
}

impl Parser<'_> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn error(&self, message: &str) -> PolyError {
        PolyError::Syntax { offset: self.pos, message: message.to_string() }
    }

    fn expr<T: Scalar>(&mut self) -> Result<Polynomial<T>, PolyError> {
        let mut acc = Polynomial::zero(&self.vars);
        self.skip_ws();
        let mut negate = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                true
            }
            Some(b'+') => {
                self.pos += 1;
                false
            }
            _ => false,
        };
        loop {
            let t = self.term()?;
            acc = if negate { &acc - &t } else { &acc + &t };
            self.skip_ws();
            match self.peek() {
                Some(b'+') => negate = false,
                Some(b'-') => negate = true,
                _ => return Ok(acc),
            }
            self.pos += 1;
        }
    }

    fn term<T: Scalar>(&mut self) -> Result<Polynomial<T>, PolyError> {
        let mut acc = self.factor()?;
        loop {
            self.skip_ws();
            if self.peek() == Some(b'*') {
                self.pos += 1;
                let f = self.factor()?;
                acc = &acc * &f;
            } else {
                return Ok(acc);
            }
        }
    }

    fn factor<T: Scalar>(&mut self) -> Result<Polynomial<T>, PolyError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let value = self.number()?;
                Ok(Polynomial::constant(&self.vars, value))
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
                let idx = self
                    .vars
                    .iter()
                    .position(|v| v == name)
                    .ok_or_else(|| PolyError::UnknownVariable(name.to_string()))?;
                let k = self.power()?;
                let mut e = vec![0; self.vars.len()];
                e[idx] = k;
                Polynomial::from_terms(&self.vars, [(Monomial::new(e), T::one())])
            }
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.skip_ws();
                if self.peek() != Some(b')') {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                let k = self.power()?;
                Ok(inner.pow(k))
            }
            Some(_) => Err(self.error("expected number, variable or '('")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn power(&mut self) -> Result<u32, PolyError> {
        self.skip_ws();
        if self.peek() != Some(b'^') {
            return Ok(1);
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error("expected integer exponent"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .expect("ascii")
            .parse()
            .map_err(|_| PolyError::Syntax { offset: start, message: "exponent out of range".into() })
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        self.pos - start
    }

    fn number<T: Scalar>(&mut self) -> Result<T, PolyError> {
        let start = self.pos;
        let mut n = self.digits();
        if self.peek() == Some(b'.') {
            self.pos += 1;
            n += self.digits();
        }
        if n == 0 {
            return Err(PolyError::Syntax { offset: start, message: "malformed number".into() });
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.digits() == 0 {
                self.pos = save;
            }
        }
        if self.peek() == Some(b'/') {
            self.pos += 1;
            if self.digits() == 0 {
                return Err(self.error("expected denominator"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        T::parse_literal(text).ok_or(PolyError::Syntax { offset: start, message: "malformed number".into() })
    }
}

/// Render highest-degree terms first, e.g. `x1^2*x2 - 0.5*x2`.
pub fn render<T: Scalar>(p: &Polynomial<T>) -> String {
    if p.is_zero() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (i, (m, c)) in p.terms().rev().enumerate() {
        let negative = *c < T::zero();
        let mag = c.abs();
        if i == 0 {
            if negative {
                out.push('-');
            }
        } else {
            out.push_str(if negative { " - " } else { " + " });
        }
        let factors: Vec<String> = m
            .exponents()
            .iter()
            .zip(p.vars())
            .filter(|(k, _)| **k > 0)
            .map(|(&k, name)| if k == 1 { name.clone() } else { format!("{name}^{k}") })
            .collect();
        if factors.is_empty() {
            out.push_str(&mag.render());
        } else {
            if !mag.is_one() {
                out.push_str(&mag.render());
                out.push('*');
            }
            out.push_str(&factors.join("*"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;
    use proptest::prelude::*;

    #[test]
    fn parses_spec_example() {
        let p: Polynomial<f64> = parse("x1^2*x2 - 0.5*x2", &["x1", "x2"]).unwrap();
        assert_eq!(p.num_terms(), 2);
        assert_eq!(p.coeff(&Monomial::new(vec![2, 1])), 1.0);
        assert_eq!(p.coeff(&Monomial::new(vec![0, 1])), -0.5);
    }

    #[test]
    fn empty_input_is_a_syntax_error() {
        assert!(matches!(parse::<f64, _>("", &["x"]), Err(PolyError::Syntax { offset: 0, .. })));
        assert!(matches!(parse::<f64, _>("   ", &["x"]), Err(PolyError::Syntax { .. })));
    }

    #[test]
    fn reports_offsets_and_unknown_names() {
        match parse::<f64, _>("x + 2y", &["x", "y"]) {
            Err(PolyError::Syntax { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse::<f64, _>("x + z", &["x"]), Err(PolyError::UnknownVariable(n)) if n == "z"));
        assert!(matches!(parse::<f64, _>("x^", &["x"]), Err(PolyError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn whitespace_and_parentheses() {
        let a: Polynomial<f64> = parse("  (2.1 - v) * ( v + 2.1 ) ", &["v"]).unwrap();
        let b: Polynomial<f64> = parse("4.41 - v^2", &["v"]).unwrap();
        assert!(a.max_coeff_diff(&b) < 1e-15);
        let c: Polynomial<f64> = parse("-x^2-1", &["x"]).unwrap();
        assert_eq!(c.evaluate(&[2.0]).unwrap(), -5.0);
        let d: Polynomial<f64> = parse("1e-3*x + 2E2", &["x"]).unwrap();
        assert_eq!(d.evaluate(&[1.0]).unwrap(), 200.001);
    }

    #[test]
    fn render_examples() {
        let p: Polynomial<f64> = parse("x1^2*x2 - 0.5*x2", &["x1", "x2"]).unwrap();
        assert_eq!(render(&p), "x1^2*x2 - 0.5*x2");
        let q: Polynomial<Rational64> = parse("1/3*x - 1", &["x"]).unwrap();
        assert_eq!(render(&q), "1/3*x - 1");
        assert_eq!(render(&Polynomial::<f64>::zero(&["x"])), "0");
    }

    fn arb_poly() -> impl Strategy<Value = Polynomial<f64>> {
        let term = (0u32..4, 0u32..4, 0u32..3, prop_oneof![-1e6f64..1e6, -1.0f64..1.0, Just(1.0), Just(-1.0)]);
        prop::collection::vec(term, 0..8).prop_map(|terms| {
            Polynomial::from_terms(
                &["x", "y", "w1"],
                terms.into_iter().map(|(a, b, c, k)| (Monomial::new(vec![a, b, c]), k)),
            )
            .unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn render_then_parse_is_identity(p in arb_poly()) {
            let text = render(&p);
            let q: Polynomial<f64> = parse(&text, &["x", "y", "w1"]).unwrap();
            prop_assert_eq!(p, q);
        }
    }
}
