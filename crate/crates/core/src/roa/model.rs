use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RoaError;
use crate::constraints::DeltaOperator;
use crate::poly::{parse, Monomial, Polynomial};

/// `ẋ = f(x, w)`, `w_j = Δ_j(g_j(x))`, with the equilibrium at the origin.
#[derive(Clone, Debug)]
pub struct SystemModel {
    pub name: String,
    pub states: Vec<String>,
    /// One name per uncertain channel.
    pub inputs: Vec<String>,
    /// Over `states ++ inputs`.
    pub f: Vec<Polynomial<f64>>,
    /// Over `states`.
    pub g: Vec<Polynomial<f64>>,
    pub delta: Vec<DeltaOperator>,
}

/// JSON form of a [`SystemModel`]: polynomials as text, operators as tags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub states: Vec<String>,
    #[serde(default = "default_inputs")]
    pub inputs: Vec<String>,
    pub f: Vec<String>,
    pub g: Vec<String>,
    pub delta: Vec<String>,
}

fn default_inputs() -> Vec<String> {
    vec!["w".into()]
}

impl ModelSpec {
    pub fn build(&self) -> Result<SystemModel, RoaError> {
        let xw: Vec<String> = self.states.iter().chain(&self.inputs).cloned().collect();
        let f = self.f.iter().map(|t| parse(t, &xw)).collect::<Result<Vec<_>, _>>()?;
        let g = self.g.iter().map(|t| parse(t, &self.states)).collect::<Result<Vec<_>, _>>()?;
        let delta = self
            .delta
            .iter()
            .map(|t| DeltaOperator::from_tag(t).ok_or_else(|| RoaError::Model(format!("unknown delta tag `{t}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        SystemModel::new(&self.name, self.states.clone(), self.inputs.clone(), f, g, delta)
    }
}

impl SystemModel {
    pub fn new(
        name: &str,
        states: Vec<String>,
        inputs: Vec<String>,
        f: Vec<Polynomial<f64>>,
        g: Vec<Polynomial<f64>>,
        delta: Vec<DeltaOperator>,
    ) -> Result<Self, RoaError> {
        if f.len() != states.len() {
            return Err(RoaError::Model(format!("{} states but {} right-hand sides", states.len(), f.len())));
        }
        if g.len() != inputs.len() || delta.len() != inputs.len() {
            return Err(RoaError::Model("need one g and one delta per input channel".into()));
        }
        let xw: Vec<String> = states.iter().chain(&inputs).cloned().collect();
        let f = f.iter().map(|p| p.align_to(&xw)).collect::<Result<Vec<_>, _>>()?;
        let g = g.iter().map(|p| p.align_to(&states)).collect::<Result<Vec<_>, _>>()?;
        if f.iter().any(|p| p.constant_term() != 0.0) {
            return Err(RoaError::Model("f(0, 0) must vanish".into()));
        }
        if g.iter().any(|p| p.constant_term() != 0.0) {
            return Err(RoaError::Model("g(0) must vanish".into()));
        }
        if delta.iter().any(|d| d.eval(0.0) != 0.0) {
            return Err(RoaError::Model("every delta must fix the origin".into()));
        }
        Ok(SystemModel { name: name.to_string(), states, inputs, f, g, delta })
    }

    pub fn n(&self) -> usize {
        self.states.len()
    }

    /// `states ++ inputs`.
    pub fn xw_vars(&self) -> Vec<String> {
        self.states.iter().chain(&self.inputs).cloned().collect()
    }

    /// True right-hand side `f(x, Δ(g(x)))`.
    pub fn rhs(&self, x: &[f64], out: &mut [f64]) {
        let mut pt = x.to_vec();
        for (g, d) in self.g.iter().zip(&self.delta) {
            pt.push(d.eval(g.eval(x)));
        }
        for (o, f) in out.iter_mut().zip(&self.f) {
            *o = f.eval(&pt);
        }
    }

    /// Jacobian of the true right-hand side at the origin:
    /// `∂f/∂x + ∂f/∂w · Δ′(0) · ∂g/∂x`.
    pub fn linearization(&self) -> DMatrix<f64> {
        let n = self.n();
        let zero_xw = vec![0.0; n + self.inputs.len()];
        let zero_x = vec![0.0; n];
        DMatrix::from_fn(n, n, |i, j| {
            let mut a = self.f[i].partial(j).eval(&zero_xw);
            for (k, (g, d)) in self.g.iter().zip(&self.delta).enumerate() {
                a += self.f[i].partial(n + k).eval(&zero_xw) * d.derivative(0.0) * g.partial(j).eval(&zero_x);
            }
            a
        })
    }
}

/// `V₀ = xᵀPx` with `AᵀP + PA = −Q`.
pub fn initial_lyapunov<S: AsRef<str>>(a: &DMatrix<f64>, q: &DMatrix<f64>, states: &[S]) -> Result<Polynomial<f64>, RoaError> {
    let p = lyapunov_matrix(a, q)?;
    Ok(quadratic_form(&p, states))
}

pub fn lyapunov_matrix(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, RoaError> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(RoaError::Model("Lyapunov equation needs square matrices of one size".into()));
    }
    let max_re = a.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if max_re >= -1e-12 {
        return Err(RoaError::NotHurwitz(max_re));
    }
    // vec(AᵀP + PA) = (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(P), column-major.
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DMatrix::from_iterator(n * n, 1, q.iter().map(|x| -x));
    let sol = k.lu().solve(&rhs).ok_or(RoaError::NotHurwitz(max_re))?;
    let p = DMatrix::from_iterator(n, n, sol.iter().copied());
    let p = (&p + p.transpose()) * 0.5;
    let res = (a.transpose() * &p + &p * a + q).amax();
    if res > 1e-10 * (1.0 + q.amax()) {
        return Err(RoaError::Model(format!("Lyapunov residual {res:e}")));
    }
    Ok(p)
}

pub fn quadratic_form<S: AsRef<str>>(p: &DMatrix<f64>, states: &[S]) -> Polynomial<f64> {
    let n = states.len();
    let mut terms = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let mut e = vec![0; n];
            e[i] += 1;
            e[j] += 1;
            terms.push((Monomial::new(e), p[(i, j)]));
        }
    }
    Polynomial::from_terms(states, terms).expect("square form")
}

/// RK4 trajectory `(t, x)` including the initial point.
pub fn simulate(model: &SystemModel, x0: &[f64], t_end: f64, dt: f64) -> Vec<(f64, Vec<f64>)> {
    let mut out = vec![(0.0, x0.to_vec())];
    let mut x = x0.to_vec();
    let steps = (t_end / dt).ceil() as usize;
    let mut ws = Rk4::new(x0.len());
    for k in 1..=steps {
        ws.step(model, &mut x, dt);
        out.push((k as f64 * dt, x.clone()));
        if !x.iter().all(|v| v.is_finite() && v.abs() < DIVERGED) {
            break;
        }
    }
    out
}

const DIVERGED: f64 = 1e6;

struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize) -> Self {
        Rk4 { k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]], tmp: vec![0.0; n] }
    }

    fn step(&mut self, model: &SystemModel, x: &mut [f64], dt: f64) {
        let n = x.len();
        model.rhs(x, &mut self.k[0]);
        for (stage, h) in [(1, 0.5), (2, 0.5), (3, 1.0)] {
            for i in 0..n {
                self.tmp[i] = x[i] + h * dt * self.k[stage - 1][i];
            }
            let mut k = std::mem::take(&mut self.k[stage]);
            model.rhs(&self.tmp, &mut k);
            self.k[stage] = k;
        }
        for i in 0..n {
            x[i] += dt / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Converged,
    Diverged,
    /// Bounded but not near the origin at `t_end`.
    Other,
}

pub fn classify(model: &SystemModel, x0: &[f64], t_end: f64, dt: f64, tol: f64) -> (Outcome, Vec<f64>) {
    let mut x = x0.to_vec();
    let mut ws = Rk4::new(x0.len());
    let steps = (t_end / dt).ceil() as usize;
    for _ in 0..steps {
        ws.step(model, &mut x, dt);
        if !x.iter().all(|v| v.is_finite() && v.abs() < DIVERGED) {
            return (Outcome::Diverged, x);
        }
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    (if norm <= tol { Outcome::Converged } else { Outcome::Other }, x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsifyReport {
    pub samples: usize,
    pub converged: usize,
    /// Interior initial conditions that did not reach the tolerance ball.
    pub failures: Vec<Vec<f64>>,
    pub t_end: f64,
    pub tolerance: f64,
}

impl FalsifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FalsifyOptions {
    pub samples: usize,
    pub t_end: f64,
    pub dt: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for FalsifyOptions {
    fn default() -> Self {
        FalsifyOptions { samples: 100, t_end: 50.0, dt: 0.01, tolerance: 1e-3, seed: 0 }
    }
}

/// Uniform samples from `{V ≤ c}` by rejection from a bounding box.
pub fn sample_interior(v: &Polynomial<f64>, c: f64, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, RoaError> {
    let bbox = super::volume::bounding_box(v, c, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err(RoaError::Volume("rejection sampling found too few interior points".into()));
        }
        let x: Vec<f64> = bbox.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
        if v.eval(&x) <= c {
            out.push(x);
        }
    }
    Ok(out)
}

/// Draw uniform samples from `{V ≤ c}` and simulate each one.
pub fn falsify(model: &SystemModel, v: &Polynomial<f64>, c: f64, opts: &FalsifyOptions) -> Result<FalsifyReport, RoaError> {
    let mut report =
        FalsifyReport { samples: 0, converged: 0, failures: Vec::new(), t_end: opts.t_end, tolerance: opts.tolerance };
    for x in sample_interior(v, c, opts.samples, opts.seed)? {
        report.samples += 1;
        match classify(model, &x, opts.t_end, opts.dt, opts.tolerance).0 {
            Outcome::Converged => report.converged += 1,
            _ => report.failures.push(x),
        }
    }
    Ok(report)
}
