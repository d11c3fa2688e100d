//! Augmented Lagrangian (Powell–Hestenes–Rockafellar) with an L-BFGS inner
//! solver, for `min f(z)` s.t. `g(z) ≥ 0`, `h(z) = 0` (single equality).

use std::collections::VecDeque;

use log::debug;

pub trait NlpProblem {
    fn dim(&self) -> usize;
    /// Value, and gradient written into `grad`.
    fn objective(&self, z: &[f64], grad: &mut [f64]) -> f64;
    fn num_ineq(&self) -> usize;
    /// `g(z)`, and the Jacobian rows in `jac` (`num_ineq × dim`, row-major).
    fn ineq(&self, z: &[f64], values: &mut [f64], jac: &mut [f64]);
    /// `h(z)`, and its gradient in `grad`.
    fn eq(&self, z: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Clone, Copy, Debug)]
pub struct NlpOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Target on `max(−g)` and `|h|`.
    pub feas_tol: f64,
    /// Target on the infinity norm of the Lagrangian gradient.
    pub opt_tol: f64,
    pub rho0: f64,
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions { max_outer: 40, max_inner: 400, feas_tol: 1e-10, opt_tol: 1e-6, rho0: 10.0 }
    }
}

#[derive(Clone, Debug)]
pub struct NlpResult {
    pub z: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    /// Objective value after each outer iteration.
    pub trace: Vec<f64>,
}

struct Lagrangian<'a, P: NlpProblem> {
    p: &'a P,
    lam: Vec<f64>,
    mu: f64,
    rho: f64,
    g: Vec<f64>,
    jac: Vec<f64>,
    hg: Vec<f64>,
    fg: Vec<f64>,
}

impl<P: NlpProblem> Lagrangian<'_, P> {
    fn eval(&mut self, z: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.p.dim();
        let mut val = self.p.objective(z, &mut self.fg);
        grad.copy_from_slice(&self.fg);
        self.p.ineq(z, &mut self.g, &mut self.jac);
        for i in 0..self.g.len() {
            let t = (self.lam[i] - self.rho * self.g[i]).max(0.0);
            val += (t * t - self.lam[i] * self.lam[i]) / (2.0 * self.rho);
            if t > 0.0 {
                for (gk, jk) in grad.iter_mut().zip(&self.jac[i * n..(i + 1) * n]) {
                    *gk -= t * jk;
                }
            }
        }
        let h = self.p.eq(z, &mut self.hg);
        val += self.mu * h + 0.5 * self.rho * h * h;
        let k = self.mu + self.rho * h;
        for (gk, hk) in grad.iter_mut().zip(&self.hg) {
            *gk += k * hk;
        }
        val
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// L-BFGS with Armijo backtracking. Returns the final point.
fn lbfgs(f: &mut impl FnMut(&[f64], &mut [f64]) -> f64, z0: &[f64], max_iter: usize, tol: f64) -> Vec<f64> {
    let n = z0.len();
    let mem = 10;
    let mut z = z0.to_vec();
    let mut g = vec![0.0; n];
    let mut fz = f(&z, &mut g);
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut gn = vec![0.0; n];
    for _ in 0..max_iter {
        if norm_inf(&g) <= tol {
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alpha = Vec::with_capacity(hist.len());
        for (s, y, r) in hist.iter().rev() {
            let a = r * dot(s, &q);
            for (qk, yk) in q.iter_mut().zip(y) {
                *qk -= a * yk;
            }
            alpha.push(a);
        }
        let gamma = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / norm_inf(&g).max(1e-12),
        };
        for qk in q.iter_mut() {
            *qk *= gamma;
        }
        for ((s, y, r), a) in hist.iter().zip(alpha.iter().rev()) {
            let b = r * dot(y, &q);
            for (qk, sk) in q.iter_mut().zip(s) {
                *qk += (a - b) * sk;
            }
        }
        let mut d: Vec<f64> = q.iter().map(|x| -x).collect();
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            hist.clear();
            d = g.iter().map(|x| -x / norm_inf(&g).max(1e-12)).collect();
            slope = dot(&g, &d);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let zn: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let fn_ = f(&zn, &mut gn);
            if fn_.is_finite() && fn_ <= fz + 1e-4 * t * slope {
                accepted = Some((zn, fn_));
                break;
            }
            t *= 0.5;
        }
        let Some((zn, fnew)) = accepted else { break };
        let s: Vec<f64> = zn.iter().zip(&z).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == mem {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let progress = (fz - fnew).abs() <= 1e-15 * fz.abs().max(1.0);
        z = zn;
        fz = fnew;
        g.copy_from_slice(&gn);
        if progress {
            break;
        }
    }
    z
}

pub fn solve<P: NlpProblem>(problem: &P, z0: &[f64], opts: &NlpOptions) -> NlpResult {
    let n = problem.dim();
    let m = problem.num_ineq();
    let mut al = Lagrangian {
        p: problem,
        lam: vec![0.0; m],
        mu: 0.0,
        rho: opts.rho0,
        g: vec![0.0; m],
        jac: vec![0.0; m * n],
        hg: vec![0.0; n],
        fg: vec![0.0; n],
    };
    let mut z = z0.to_vec();
    let mut prev_viol = f64::INFINITY;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut outer = 0;
    let mut scratch = vec![0.0; n];
    for k in 0..opts.max_outer {
        outer = k + 1;
        z = lbfgs(&mut |x, g| al.eval(x, g), &z, opts.max_inner, opts.opt_tol);
        let lgrad_inf = {
            al.eval(&z, &mut scratch);
            norm_inf(&scratch)
        };
        problem.ineq(&z, &mut al.g, &mut al.jac);
        let h = problem.eq(&z, &mut al.hg);
        let viol = al.g.iter().fold(h.abs(), |v, &gi| v.max(-gi));
        let fval = problem.objective(&z, &mut al.fg);
        let stalled = trace.last().is_some_and(|&f: &f64| (f - fval).abs() <= 1e-8 * fval.abs().max(1.0));
        trace.push(fval);
        debug!("outer {k}: f = {fval:.6e}, violation = {viol:.3e}, rho = {:.1e}, |∇L| = {lgrad_inf:.2e}", al.rho);
        for i in 0..m {
            al.lam[i] = (al.lam[i] - al.rho * al.g[i]).max(0.0);
        }
        al.mu += al.rho * h;
        if viol <= opts.feas_tol && (lgrad_inf <= opts.opt_tol * 10.0 || stalled) {
            converged = true;
            break;
        }
        if viol > 0.25 * prev_viol {
            al.rho = (al.rho * 10.0).min(1e12);
        }
        prev_viol = viol;
    }
    problem.ineq(&z, &mut al.g, &mut al.jac);
    let h = problem.eq(&z, &mut al.hg);
    let max_violation = al.g.iter().fold(h.abs(), |v, &gi| v.max(-gi));
    let objective = problem.objective(&z, &mut al.fg);
    NlpResult { z, objective, max_violation, converged, outer_iterations: outer, trace }
}
