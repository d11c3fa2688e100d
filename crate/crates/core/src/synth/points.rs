use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::DeltaOperator;

/// Objective weight `w_o(v, w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weight {
    Uniform,
    /// `1 + e^{−v²}`
    OriginPeaked,
    /// `1 + e^{−w²}`
    OutputPeaked,
    /// `nonneg` where `v ≥ 0`, `neg` elsewhere.
    SignWeighted { nonneg: f64, neg: f64 },
    /// Piecewise constant in `v`: `values[i]` on `[breaks[i-1], breaks[i])`,
    /// with `values.len() == breaks.len() + 1`.
    Table { breaks: Vec<f64>, values: Vec<f64> },
}

impl Weight {
    pub fn eval(&self, v: f64, w: f64) -> f64 {
        match self {
            Weight::Uniform => 1.0,
            Weight::OriginPeaked => 1.0 + (-v * v).exp(),
            Weight::OutputPeaked => 1.0 + (-w * w).exp(),
            Weight::SignWeighted { nonneg, neg } => {
                if v >= 0.0 {
                    *nonneg
                } else {
                    *neg
                }
            }
            Weight::Table { breaks, values } => values[breaks.partition_point(|&b| b <= v)],
        }
    }
}

/// Half-widths of the band `[Δ(x) − below, Δ(x) + above]` sampled for `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub below: f64,
    pub above: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestPointConfig {
    pub n_tx: usize,
    pub x_interval: (f64, f64),
    pub n_ty: usize,
    pub neighborhood: Neighborhood,
    pub weight: Weight,
    /// Objective scale; `None` means `1 / median |p_init|` over the test set.
    #[serde(default)]
    pub s: Option<f64>,
}

impl TestPointConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_tx < 1 || self.n_ty < 1 {
            return Err("test point counts must be at least 1".into());
        }
        if self.neighborhood.below < 0.0 || self.neighborhood.above < 0.0 {
            return Err("neighborhood half-widths must be nonnegative".into());
        }
        if self.x_interval.0 > self.x_interval.1 {
            return Err("empty x interval".into());
        }
        if matches!(self.s, Some(s) if s <= 0.0) {
            return Err("objective scale must be positive".into());
        }
        if let Weight::Table { breaks, values } = &self.weight {
            if values.len() != breaks.len() + 1 {
                return Err("weight table needs one more value than breaks".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestPoint {
    pub v: f64,
    pub w: f64,
    pub weight: f64,
}

/// `n_tx · n_ty` weighted points: `x` uniform on the interval, `y` uniform on
/// the band around `Δ(x)`.
pub fn generate_test_points(cfg: &TestPointConfig, delta: &DeltaOperator, seed: u64) -> Vec<TestPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = cfg.x_interval;
    let mut out = Vec::with_capacity(cfg.n_tx * cfg.n_ty);
    for _ in 0..cfg.n_tx {
        let x = if b > a { rng.random_range(a..=b) } else { a };
        let y0 = delta.eval(x);
        let (lo, hi) = (y0 - cfg.neighborhood.below, y0 + cfg.neighborhood.above);
        for _ in 0..cfg.n_ty {
            let y = if hi > lo { rng.random_range(lo..=hi) } else { y0 };
            out.push(TestPoint { v: x, w: y, weight: cfg.weight.eval(x, y) });
        }
    }
    out
}
