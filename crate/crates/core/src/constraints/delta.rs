use std::fmt;
use std::sync::Arc;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaTag {
    Tanh,
    TanhMinusIdentity,
    ExpMinusAffine,
    Custom,
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A scalar nonlinearity `w = Δ(v)` together with the interval it is sampled on.
#[derive(Clone)]
pub struct DeltaOperator {
    pub tag: DeltaTag,
    pub domain: (f64, f64),
    /// Induced L∞ gain, where known analytically.
    pub gain: Option<f64>,
    pub fixed_point: bool,
    custom: Option<(ScalarFn, Option<ScalarFn>)>,
}

impl fmt::Debug for DeltaOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeltaOperator")
            .field("tag", &self.tag)
            .field("domain", &self.domain)
            .field("gain", &self.gain)
            .field("fixed_point", &self.fixed_point)
            .finish()
    }
}

impl DeltaOperator {
    pub fn tanh() -> Self {
        DeltaOperator { tag: DeltaTag::Tanh, domain: (-20.0, 20.0), gain: Some(1.0), fixed_point: true, custom: None }
    }

    /// `tanh(v) − v`.
    pub fn tanh_minus_identity() -> Self {
        DeltaOperator {
            tag: DeltaTag::TanhMinusIdentity,
            domain: (-20.0, 20.0),
            gain: Some(1.0),
            fixed_point: true,
            custom: None,
        }
    }

    /// `e^v − v − 1`.
    pub fn exp_minus_affine() -> Self {
        DeltaOperator { tag: DeltaTag::ExpMinusAffine, domain: (-20.0, 5.0), gain: None, fixed_point: true, custom: None }
    }

    pub fn custom(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
        domain: (f64, f64),
    ) -> Self {
        let fixed_point = f(0.0) == 0.0;
        DeltaOperator {
            tag: DeltaTag::Custom,
            domain,
            gain: None,
            fixed_point,
            custom: Some((Arc::new(f), derivative.map(|d| Arc::from(d) as ScalarFn))),
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "tanh" => Some(Self::tanh()),
            "tanh_minus_identity" => Some(Self::tanh_minus_identity()),
            "exp_minus_affine" => Some(Self::exp_minus_affine()),
            _ => None,
        }
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = (lo, hi);
        self
    }

    pub fn eval(&self, v: f64) -> f64 {
        match self.tag {
            DeltaTag::Tanh => v.tanh(),
            DeltaTag::TanhMinusIdentity => v.tanh() - v,
            DeltaTag::ExpMinusAffine => v.exp_m1() - v,
            DeltaTag::Custom => (self.custom.as_ref().expect("custom evaluator").0)(v),
        }
    }

    /// `Δ′(v)`: analytic for built-in tags, central differences otherwise.
    pub fn derivative(&self, v: f64) -> f64 {
        match self.tag {
            DeltaTag::Tanh => 1.0 - v.tanh().powi(2),
            DeltaTag::TanhMinusIdentity => -v.tanh().powi(2),
            DeltaTag::ExpMinusAffine => v.exp_m1(),
            DeltaTag::Custom => match &self.custom.as_ref().expect("custom evaluator").1 {
                Some(d) => d(v),
                None => {
                    let h = 1e-6 * (1.0 + v.abs());
                    (self.eval(v + h) - self.eval(v - h)) / (2.0 * h)
                }
            },
        }
    }

    /// Taylor coefficients about 0, when the tag has a built-in series.
    pub fn taylor(&self, degree: usize) -> Option<Vec<Rational64>> {
        match self.tag {
            DeltaTag::Tanh => Some(taylor_coefficients(Series::Tanh, degree)),
            DeltaTag::TanhMinusIdentity => {
                let mut c = taylor_coefficients(Series::Tanh, degree);
                if c.len() > 1 {
                    c[1] -= Rational64::from_integer(1);
                }
                Some(c)
            }
            DeltaTag::ExpMinusAffine => {
                let mut c = taylor_coefficients(Series::Exp, degree);
                c[0] = Rational64::from_integer(0);
                if c.len() > 1 {
                    c[1] = Rational64::from_integer(0);
                }
                Some(c)
            }
            DeltaTag::Custom => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    Tanh,
    Exp,
    Arctanh,
}

/// Highest degree for which exact series coefficients are built in.
pub const MAX_SERIES_DEGREE: usize = 15;

/// Exact Maclaurin coefficients `c_0..=c_degree` (`degree <= 15`).
pub fn taylor_coefficients(series: Series, degree: usize) -> Vec<Rational64> {
    assert!(degree <= MAX_SERIES_DEGREE, "built-in series stop at degree {MAX_SERIES_DEGREE}");
    let zero = Rational64::from_integer(0);
    let mut c = vec![zero; degree + 1];
    match series {
        Series::Exp => {
            let mut fact: i64 = 1;
            for (k, slot) in c.iter_mut().enumerate() {
                if k > 0 {
                    fact *= k as i64;
                }
                *slot = Rational64::new(1, fact);
            }
        }
        Series::Arctanh => {
            for k in (1..=degree).step_by(2) {
                c[k] = Rational64::new(1, k as i64);
            }
        }
        Series::Tanh => {
            const TANH: [(i64, i64); 8] = [
                (1, 1),
                (-1, 3),
                (2, 15),
                (-17, 315),
                (62, 2835),
                (-1382, 155925),
                (21844, 6081075),
                (-929569, 638512875),
            ];
            for (j, &(n, d)) in TANH.iter().enumerate() {
                let k = 2 * j + 1;
                if k <= degree {
                    c[k] = Rational64::new(n, d);
                }
            }
        }
    }
    c
}
