use serde::{Deserialize, Serialize};

use super::delta::DeltaOperator;
use crate::poly::Polynomial;

/// Acceptance threshold on the normalized residual.
pub const VERIFY_TOL: f64 = 1e-9;
const ROOT_WIDTH: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub v: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub ok: bool,
    pub interval: (f64, f64),
    /// Smallest value of `p(v, Δ(v)) / max|coeff(p)|` found.
    pub min_value: f64,
    pub argmin: f64,
    /// Sign changes of the residual, refined by bisection.
    pub roots: Vec<f64>,
    pub violations: Vec<Violation>,
    pub normalization: f64,
}

/// Residual `v ↦ p(v, Δ(v)) / max|coeff(p)|`. The first variable of `p` is
/// the input, the second (if any) the output.
fn residual<'a>(p: &'a Polynomial<f64>, delta: &'a DeltaOperator) -> impl Fn(f64) -> f64 + 'a {
    let scale = p.max_abs_coeff();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let two = p.nvars() >= 2;
    move |v| {
        let val = if two { p.eval(&[v, delta.eval(v)]) } else { p.eval(&[v]) };
        val / scale
    }
}

fn bisect(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, pred: impl Fn(f64) -> bool) -> f64 {
    // pred(f(a)) differs from pred(f(b)).
    let pa = pred(f(a));
    while (b - a).abs() > ROOT_WIDTH {
        let m = 0.5 * (a + b);
        if m <= a.min(b) || m >= a.max(b) {
            break;
        }
        if pred(f(m)) == pa {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn golden_min(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if (b - a).abs() <= ROOT_WIDTH {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Check `p(v, Δ(v)) ≥ 0` on `[a, b]`: dense grid, bisection of every sign
/// change and golden-section refinement of every grid-local minimum.
pub fn verify_constraint(p: &Polynomial<f64>, delta: &DeltaOperator, interval: (f64, f64), grid: usize) -> VerifyReport {
    let f = residual(p, delta);
    let normalization = p.max_abs_coeff();
    let (a, b) = interval;
    if b <= a {
        let r = f(a);
        return VerifyReport {
            ok: r >= -VERIFY_TOL,
            interval,
            min_value: r,
            argmin: a,
            roots: Vec::new(),
            violations: if r < -VERIFY_TOL { vec![Violation { v: a, value: r }] } else { Vec::new() },
            normalization,
        };
    }
    let n = grid.max(2);
    let xs: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    let rs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();

    let mut roots = Vec::new();
    for i in 0..n {
        if (rs[i] < 0.0) != (rs[i + 1] < 0.0) {
            roots.push(bisect(&f, xs[i], xs[i + 1], |r| r < 0.0));
        }
    }

    let (mut argmin, mut min_value) = (xs[0], rs[0]);
    let mut violations = Vec::new();
    for i in 0..=n {
        let left = if i > 0 { rs[i - 1] } else { f64::INFINITY };
        let right = if i < n { rs[i + 1] } else { f64::INFINITY };
        if rs[i] > left || rs[i] > right {
            continue;
        }
        let lo = xs[i.saturating_sub(1)];
        let hi = xs[(i + 1).min(n)];
        let (mut x, mut r) = golden_min(&f, lo, hi);
        if rs[i] < r {
            (x, r) = (xs[i], rs[i]);
        }
        if r < min_value {
            (argmin, min_value) = (x, r);
        }
        if r < -VERIFY_TOL {
            violations.push(Violation { v: x, value: r });
        }
    }
    VerifyReport { ok: min_value >= -VERIFY_TOL, interval, min_value, argmin, roots, violations, normalization }
}

/// Largest interval `[lo, hi] ∋ 0` inside `search` on which the normalized
/// residual stays above `-1e-12`, scanning outward from 0.
pub fn max_valid_interval(p: &Polynomial<f64>, delta: &DeltaOperator, search: (f64, f64), grid: usize) -> (f64, f64) {
    let f = residual(p, delta);
    let bad = |r: f64| r < -1e-12;
    let n = grid.max(2);
    let h = (search.1 - search.0) / n as f64;
    let scan = |end: f64, dir: f64| -> f64 {
        let mut prev = 0.0;
        loop {
            let next = prev + dir * h;
            if dir * (next - end) >= 0.0 {
                return if bad(f(end)) { bisect(&f, prev, end, bad) } else { end };
            }
            if bad(f(next)) {
                return bisect(&f, prev, next, bad);
            }
            prev = next;
        }
    };
    (scan(search.0, -1.0), scan(search.1, 1.0))
}

/// `v,w,p` grid over a rectangle, plus the curve `w = Δ(v)` sampled on the
/// same `v` values, as two CSV documents.
pub fn render_csv(
    p: &Polynomial<f64>,
    delta: &DeltaOperator,
    v_range: (f64, f64),
    w_range: (f64, f64),
    resolution: usize,
) -> (String, String) {
    let n = resolution.max(2);
    let lin = |r: (f64, f64), i: usize| r.0 + (r.1 - r.0) * i as f64 / (n - 1) as f64;
    let mut grid = String::from("v,w,p\n");
    for i in 0..n {
        for j in 0..n {
            let (v, w) = (lin(v_range, i), lin(w_range, j));
            grid.push_str(&format!("{v},{w},{}\n", p.eval(&[v, w])));
        }
    }
    let mut curve = String::from("v,w,p\n");
    for i in 0..n {
        let v = lin(v_range, i);
        let w = delta.eval(v);
        curve.push_str(&format!("{v},{w},{}\n", p.eval(&[v, w])));
    }
    (grid, curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::constraint::VW;
    use crate::poly::parse;

    #[test]
    fn golden_finds_parabola_vertex() {
        let (x, r) = golden_min(&|x: f64| (x - 0.3).powi(2) - 1.0, -1.0, 2.0);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn isolated_dip_between_grid_points_is_caught() {
        // (v - 0.5)^2 - 1e-6 dips below zero only on (0.499, 0.501).
        let p: Polynomial<f64> = parse("(v - 0.5)^2 - 0.000001 + 0*w", &VW).unwrap();
        let rep = verify_constraint(&p, &DeltaOperator::tanh(), (0.0, 1.0), 7);
        assert!(!rep.ok);
        assert!((rep.argmin - 0.5).abs() < 1e-6);
    }

    #[test]
    fn max_interval_of_a_parabola() {
        let p: Polynomial<f64> = parse("4 - v^2 + 0*w", &VW).unwrap();
        let (lo, hi) = max_valid_interval(&p, &DeltaOperator::tanh(), (-10.0, 10.0), 1000);
        assert!((lo + 2.0).abs() < 1e-9 && (hi - 2.0).abs() < 1e-9, "{lo} {hi}");
    }
}
