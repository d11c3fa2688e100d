use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RoaError;
use crate::poly::Polynomial;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VolumeMethod {
    /// Exact for quadratic `V`, Monte Carlo otherwise.
    Auto { samples: usize, seed: u64 },
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for VolumeMethod {
    fn default() -> Self {
        VolumeMethod::Auto { samples: 1_000_000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub value: f64,
    /// Standard error of a sampled estimate; `None` when exact.
    pub std_error: Option<f64>,
    pub method: String,
    pub samples: usize,
}

impl VolumeEstimate {
    pub fn relative_std_error(&self) -> f64 {
        self.std_error.map_or(0.0, |s| s / self.value)
    }
}

/// Volume of the unit ball in `n` dimensions.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// `P` with `V = xᵀPx`, when `V` is a quadratic form.
pub fn quadratic_matrix(v: &Polynomial<f64>) -> Option<DMatrix<f64>> {
    if v.is_zero() || v.degree() != 2 || v.min_degree() != 2 {
        return None;
    }
    let n = v.nvars();
    let mut p = DMatrix::zeros(n, n);
    for (m, &c) in v.terms() {
        let idx: Vec<usize> = m.exponents().iter().enumerate().flat_map(|(i, &e)| std::iter::repeat_n(i, e as usize)).collect();
        let (i, j) = (idx[0], idx[1]);
        if i == j {
            p[(i, i)] += c;
        } else {
            p[(i, j)] += 0.5 * c;
            p[(j, i)] += 0.5 * c;
        }
    }
    Some(p)
}

pub fn estimate_volume(v: &Polynomial<f64>, c: f64, method: &VolumeMethod) -> Result<VolumeEstimate, RoaError> {
    let n = v.nvars();
    if let (VolumeMethod::Auto { .. }, Some(p)) = (method, quadratic_matrix(v)) {
        let eig = p.clone().symmetric_eigen().eigenvalues;
        if eig.iter().any(|&l| l <= 0.0) {
            return Err(RoaError::Unbounded);
        }
        let det: f64 = eig.iter().product();
        let value = c.powf(n as f64 / 2.0) * unit_ball_volume(n) / det.sqrt();
        return Ok(VolumeEstimate { value, std_error: None, method: "exact ellipsoid".into(), samples: 0 });
    }
    let (samples, seed) = match *method {
        VolumeMethod::Auto { samples, seed } | VolumeMethod::MonteCarlo { samples, seed } => (samples, seed),
    };
    monte_carlo(v, c, samples, seed)
}

fn monte_carlo(v: &Polynomial<f64>, c: f64, samples: usize, seed: u64) -> Result<VolumeEstimate, RoaError> {
    let mut bbox = bounding_box(v, c, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut x = vec![0.0; v.nvars()];
    // Grow the box until no accepted sample sits in its outer shell.
    for _ in 0..20 {
        let mut hits = 0usize;
        let mut touches = false;
        for _ in 0..samples {
            for (xi, &(lo, hi)) in x.iter_mut().zip(&bbox) {
                *xi = rng.random_range(lo..=hi);
            }
            if v.eval(&x) <= c {
                hits += 1;
                touches |= x.iter().zip(&bbox).any(|(&xi, &(lo, hi))| xi < lo + 0.02 * (hi - lo) || xi > hi - 0.02 * (hi - lo));
            }
        }
        if !touches {
            let box_vol: f64 = bbox.iter().map(|(lo, hi)| hi - lo).product();
            let frac = hits as f64 / samples as f64;
            return Ok(VolumeEstimate {
                value: box_vol * frac,
                std_error: Some(box_vol * (frac * (1.0 - frac) / samples as f64).sqrt()),
                method: "monte carlo".into(),
                samples,
            });
        }
        for b in bbox.iter_mut() {
            let mid = 0.5 * (b.0 + b.1);
            let half = 0.75 * (b.1 - b.0);
            *b = (mid - half, mid + half);
        }
    }
    Err(RoaError::Unbounded)
}

/// Distance along `u` to the first crossing of `V = c`.
fn ray_radius(v: &Polynomial<f64>, c: f64, u: &[f64]) -> Result<f64, RoaError> {
    let at = |r: f64| v.eval(&u.iter().map(|x| r * x).collect::<Vec<_>>());
    let mut r_out = 1e-3;
    while at(r_out) <= c {
        r_out *= 2.0;
        if r_out > 1e8 {
            return Err(RoaError::Unbounded);
        }
    }
    // First crossing on a fine scan, then bisection.
    let steps = 400;
    let mut lo = 0.0;
    let mut hi = r_out;
    for k in 1..=steps {
        let r = r_out * k as f64 / steps as f64;
        if at(r) > c {
            hi = r;
            break;
        }
        lo = r;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if at(mid) <= c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Axis-aligned box around `{V ≤ c}` from radial line searches along the
/// coordinate axes and seeded random directions, padded by 20%.
pub fn bounding_box(v: &Polynomial<f64>, c: f64, seed: u64) -> Result<Vec<(f64, f64)>, RoaError> {
    let n = v.nvars();
    let mut lo = vec![0.0f64; n];
    let mut hi = vec![0.0f64; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut u = vec![0.0; n];
            u[i] = s;
            dirs.push(u);
        }
    }
    for _ in 0..(500 * n) {
        let u: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            dirs.push(u.iter().map(|x| x / norm).collect());
        }
    }
    for u in &dirs {
        let r = ray_radius(v, c, u)?;
        for i in 0..n {
            lo[i] = lo[i].min(r * u[i]);
            hi[i] = hi[i].max(r * u[i]);
        }
    }
    Ok(lo.iter().zip(&hi).map(|(&a, &b)| (1.2 * a, 1.2 * b)).collect())
}

/// Box–Muller.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Outline of the projection of `{V ≤ c}` onto the `(i, j)` plane: for each
/// angular bin, the farthest sampled point.
pub fn projected_outline(v: &Polynomial<f64>, c: f64, i: usize, j: usize, bins: usize, samples: usize, seed: u64) -> Result<Vec<(f64, f64)>, RoaError> {
    let n = v.nvars();
    if n == 2 {
        let mut out = Vec::with_capacity(bins + 1);
        for k in 0..=bins {
            let th = 2.0 * std::f64::consts::PI * k as f64 / bins as f64;
            let mut u = vec![0.0; 2];
            u[i] = th.cos();
            u[j] = th.sin();
            let r = ray_radius(v, c, &u)?;
            out.push((r * u[i], r * u[j]));
        }
        return Ok(out);
    }
    let bbox = bounding_box(v, c, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0de);
    let mut best = vec![(0.0f64, 0.0f64, 0.0f64); bins];
    let mut x = vec![0.0; n];
    for _ in 0..samples {
        for (xi, &(lo, hi)) in x.iter_mut().zip(&bbox) {
            *xi = rng.random_range(lo..=hi);
        }
        if v.eval(&x) > c {
            continue;
        }
        let (a, b) = (x[i], x[j]);
        let th = b.atan2(a).rem_euclid(2.0 * std::f64::consts::PI);
        let k = ((th / (2.0 * std::f64::consts::PI) * bins as f64) as usize).min(bins - 1);
        let r2 = a * a + b * b;
        if r2 > best[k].2 {
            best[k] = (a, b, r2);
        }
    }
    let mut out: Vec<(f64, f64)> = best.iter().filter(|b| b.2 > 0.0).map(|b| (b.0, b.1)).collect();
    if let Some(&first) = out.first() {
        out.push(first);
    }
    Ok(out)
}
