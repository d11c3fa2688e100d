//! Region-of-attraction inner estimates `{V ≤ c}` by alternating a level
//! expansion (bisection on `c`) with a reshape of `V`.

mod model;
mod program;
mod volume;

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::{
    classify, falsify, initial_lyapunov, lyapunov_matrix, quadratic_form, sample_interior, simulate, FalsifyOptions, FalsifyReport,
    ModelSpec, Outcome, SystemModel,
};
pub use program::{
    compose, distinct_regions, effective_interval, even_floor, expansion_at, expansion_census, expansion_step, reshape_step,
    roa_condition, validity_conditions, BisectionOptions, ComposedConstraint, Degrees, ExpansionResult, LevelSolve,
    Multipliers, ReshapeResult, RoaConstraint,
};
pub use volume::{bounding_box, estimate_volume, projected_outline, quadratic_matrix, unit_ball_volume, VolumeEstimate, VolumeMethod};

use crate::poly::{Monomial, PolyError, Polynomial};
use crate::sos::{check_certificate, solve_program, ParamPoly, SolverTolerances, SosCertificate, SosError, SosProgram};

#[derive(Debug, Error)]
pub enum RoaError {
    #[error("model: {0}")]
    Model(String),
    #[error("linearization is not Hurwitz (largest real part {0:e})")]
    NotHurwitz(f64),
    #[error("sublevel set is unbounded")]
    Unbounded,
    #[error("volume: {0}")]
    Volume(String),
    #[error("validity: {0}")]
    Validity(String),
    #[error("config: {0}")]
    Config(String),
    #[error("no certifiable sublevel set")]
    NoCertifiableSet,
    #[error("initial V is not certifiably positive definite")]
    NotPositiveDefinite,
    #[error("stage {stage}, iteration {iteration}: {source}")]
    Step { stage: usize, iteration: usize, source: Box<RoaError> },
    #[error("final certificate failed re-validation: {0}")]
    Unsound(String),
    #[error(transparent)]
    Sos(#[from] SosError),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// `iterations` alternations at degrees `(n_v, n_total)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub n_v: u32,
    pub n_total: u32,
    pub iterations: usize,
}

impl Stage {
    pub fn degrees(&self) -> Degrees {
        Degrees::new(self.n_v, self.n_total)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub rel_change: f64,
    pub window: usize,
}

impl Default for Convergence {
    fn default() -> Self {
        Convergence { rel_change: 1e-4, window: 3 }
    }
}

fn default_epsilon() -> f64 {
    1e-6
}

fn default_reshape_range() -> (f64, f64) {
    (0.90, 0.99)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoaConfig {
    pub schedule: Vec<Stage>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub bisection: BisectionOptions,
    /// Reshape level range as fractions of `c*`.
    #[serde(default = "default_reshape_range")]
    pub reshape_range: (f64, f64),
    #[serde(default)]
    pub volume: VolumeMethod,
    #[serde(default)]
    pub convergence: Convergence,
    #[serde(default)]
    pub tolerances: SolverTolerances,
}

impl RoaConfig {
    pub fn new(schedule: Vec<Stage>) -> Self {
        RoaConfig {
            schedule,
            epsilon: default_epsilon(),
            bisection: BisectionOptions::default(),
            reshape_range: default_reshape_range(),
            volume: VolumeMethod::default(),
            convergence: Convergence::default(),
            tolerances: SolverTolerances::default(),
        }
    }

    pub fn validate(&self) -> Result<(), RoaError> {
        if self.schedule.is_empty() {
            return Err(RoaError::Config("empty schedule".into()));
        }
        for s in &self.schedule {
            if s.n_v % 2 != 0 || s.n_v < 2 || s.n_total < s.n_v {
                return Err(RoaError::Config(format!("stage needs even n_V ≥ 2 and n_total ≥ n_V, got {s:?}")));
            }
        }
        if self.epsilon <= 0.0 {
            return Err(RoaError::Config("epsilon must be positive".into()));
        }
        let (lo, hi) = self.reshape_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(RoaError::Config(format!("reshape range must satisfy 0 < lo ≤ hi < 1, got {lo}, {hi}")));
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.schedule.iter().map(|s| s.iterations).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub stage: usize,
    pub iteration: usize,
    pub n_v: u32,
    pub n_total: u32,
    /// Level from the expansion, in the current `V`'s scale.
    pub c: f64,
    pub volume: f64,
    pub volume_std_error: Option<f64>,
    /// `{V_prev ≤ level} ⊆ {V_new ≤ 1}`, when a reshape ran and succeeded.
    pub reshape_level: Option<f64>,
    pub stagnated: bool,
    pub solves: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub max_residual: f64,
    pub min_eigenvalue: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoaCertificate {
    pub system: String,
    pub constraints: Vec<String>,
    pub v: Polynomial<f64>,
    pub c: f64,
    pub multipliers: Vec<(String, Polynomial<f64>)>,
    pub volume: VolumeEstimate,
    /// Index into `trace` of the iteration this certificate comes from.
    pub best_iteration: usize,
    pub trace: Vec<IterationRecord>,
    pub checks: Vec<CheckRecord>,
}

impl RoaCertificate {
    pub fn is_sound(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.ok)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// A model, its constraints, and the initial `V`.
#[derive(Clone, Debug)]
pub struct RoaProblem {
    pub model: SystemModel,
    pub constraints: Vec<RoaConstraint>,
    pub v0: Polynomial<f64>,
}

fn norm_sq(vars: &[String]) -> Polynomial<f64> {
    let n = vars.len();
    Polynomial::from_terms(
        vars,
        (0..n).map(|i| {
            let mut e = vec![0; n];
            e[i] = 2;
            (Monomial::new(e), 1.0)
        }),
    )
    .expect("square terms")
}

/// SOS certificate for `V − ε|x|²`.
pub fn positivity_certificate(v: &Polynomial<f64>, epsilon: f64, tol: &SolverTolerances) -> Result<SosCertificate, RoaError> {
    let vars = v.vars().to_vec();
    let mut prog = SosProgram::new();
    prog.add_sos_constraint("lyapunov", ParamPoly::from_poly(&(v - &norm_sq(&vars).scale(&epsilon))));
    Ok(solve_program(&prog, tol)?)
}

struct Best {
    index: usize,
    v: Polynomial<f64>,
    c: f64,
    multipliers: Multipliers,
    certificate: SosCertificate,
    volume: VolumeEstimate,
}

fn check_record(name: &str, p: &Polynomial<f64>, cert: &SosCertificate, tol: &SolverTolerances) -> CheckRecord {
    match cert.grams.iter().find(|g| g.name == name) {
        Some(g) => {
            let p = p.align_to(&g.basis.vars).unwrap_or_else(|_| p.clone());
            let r = check_certificate(&p, &g.basis, &g.gram);
            CheckRecord {
                name: name.to_string(),
                max_residual: r.max_residual,
                min_eigenvalue: r.min_eigenvalue,
                ok: r.max_residual <= tol.residual && r.min_eigenvalue >= -tol.feas,
            }
        }
        // Constraints that compiled to no Gram block must vanish identically.
        None => {
            let r = p.max_abs_coeff();
            CheckRecord { name: name.to_string(), max_residual: r, min_eigenvalue: 0.0, ok: r <= tol.residual }
        }
    }
}

/// Recompute every SOS expression of an expansion certificate from the
/// resolved multipliers and check it against the solver's Gram matrices.
pub fn revalidate(
    model: &SystemModel,
    v: &Polynomial<f64>,
    c: f64,
    composed: &[ComposedConstraint],
    m: &Multipliers,
    cert: &SosCertificate,
    epsilon: f64,
    tol: &SolverTolerances,
) -> Result<Vec<CheckRecord>, RoaError> {
    let mut terms: Vec<(&Polynomial<f64>, &Polynomial<f64>)> = Vec::new();
    for (i, cc) in composed.iter().enumerate() {
        terms.push((&m.s_psi[i], &cc.p));
        for (k, q) in cc.boxes.iter().enumerate() {
            terms.push((&m.s_box[i][k], q));
        }
    }
    let e = roa_condition(model, v, c, &m.s_c, &terms, epsilon)?;
    let mut out = vec![check_record("roa", &e, cert, tol)];
    let regions = distinct_regions(composed);
    let vx = v.align_to(&model.states)?;
    for (k, p) in validity_conditions(&vx, c, &regions, &m.s_d, &m.s_n)?.iter().enumerate() {
        out.push(check_record(&format!("validity[{k}]"), p, cert, tol));
    }
    // Multipliers are Gram-parameterized; their PSD-ness is in the solver's
    // eigenvalue floor.
    out.push(CheckRecord {
        name: "multiplier grams".into(),
        max_residual: 0.0,
        min_eigenvalue: cert.min_eigenvalue,
        ok: cert.min_eigenvalue >= -tol.feas,
    });
    let pos = positivity_certificate(&vx, epsilon, tol)?;
    let lyap = &vx - &norm_sq(&model.states).scale(&epsilon);
    let mut rec = check_record("lyapunov", &lyap, &pos, tol);
    rec.ok &= pos.is_feasible();
    out.push(rec);
    Ok(out)
}

/// Alternate expansion and reshape along the schedule and emit the
/// largest-volume certified set, re-validated.
pub fn run(problem: &RoaProblem, cfg: &RoaConfig) -> Result<RoaCertificate, RoaError> {
    run_observed(problem, cfg, &mut |_, _| {})
}

/// [`run`], calling `observe` with each iteration's record and the `V` its
/// level `c` refers to.
pub fn run_observed(
    problem: &RoaProblem,
    cfg: &RoaConfig,
    observe: &mut dyn FnMut(&IterationRecord, &Polynomial<f64>),
) -> Result<RoaCertificate, RoaError> {
    cfg.validate()?;
    let model = &problem.model;
    let tol = &cfg.tolerances;
    let composed = problem.constraints.iter().map(|rc| compose(model, rc)).collect::<Result<Vec<_>, _>>()?;
    let regions = distinct_regions(&composed);
    let mut v = problem.v0.align_to(&model.states)?;
    if !positivity_certificate(&v, cfg.epsilon, tol)?.is_feasible() {
        return Err(RoaError::NotPositiveDefinite);
    }

    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut best: Option<Best> = None;
    let total = cfg.total_iterations();
    let mut done = 0;
    for (si, stage) in cfg.schedule.iter().enumerate() {
        let deg = stage.degrees();
        let mut stage_volumes: Vec<f64> = Vec::new();
        for it in 0..stage.iterations {
            done += 1;
            let t0 = Instant::now();
            let ctx = |e: RoaError| RoaError::Step { stage: si, iteration: it, source: Box::new(e) };
            let exp = expansion_step(model, &v, &composed, &regions, deg, cfg.epsilon, &cfg.bisection, tol).map_err(ctx)?;
            let vol = estimate_volume(&v, exp.c, &cfg.volume).map_err(ctx)?;
            let mut solves = exp.solves;
            let v_level = v.clone();
            let mut record = IterationRecord {
                stage: si,
                iteration: it,
                n_v: stage.n_v,
                n_total: stage.n_total,
                c: exp.c,
                volume: vol.value,
                volume_std_error: vol.std_error,
                reshape_level: None,
                stagnated: false,
                solves,
                seconds: 0.0,
            };
            if best.as_ref().is_none_or(|b| vol.value >= b.volume.value) {
                best = Some(Best {
                    index: trace.len(),
                    v: v.clone(),
                    c: exp.c,
                    multipliers: exp.multipliers.clone(),
                    certificate: exp.certificate.clone(),
                    volume: vol.clone(),
                });
            }
            if done < total {
                let r = reshape_step(
                    model,
                    &v,
                    exp.c,
                    &exp.multipliers,
                    &composed,
                    &regions,
                    deg,
                    cfg.epsilon,
                    cfg.reshape_range,
                    cfg.bisection.rel_tol,
                    tol,
                )
                .map_err(ctx)?;
                match r {
                    Some(r) => {
                        solves += r.solves;
                        record.reshape_level = Some(r.level);
                        v = r.v;
                    }
                    None => {
                        solves += 2;
                        record.stagnated = true;
                    }
                }
            }
            record.solves = solves;
            record.seconds = t0.elapsed().as_secs_f64();
            info!(
                "stage {si} iteration {it}: c* = {:.6}, volume = {:.6}, reshape {:?}, {} solves, {:.1}s",
                record.c, record.volume, record.reshape_level, record.solves, record.seconds
            );
            let stagnated = record.stagnated;
            observe(&record, &v_level);
            trace.push(record);
            stage_volumes.push(vol.value);
            if stagnated || converged(&stage_volumes, &cfg.convergence) {
                done += stage.iterations - it - 1;
                break;
            }
        }
    }

    let best = best.ok_or_else(|| RoaError::Config("schedule ran no iterations".into()))?;
    let checks = revalidate(model, &best.v, best.c, &composed, &best.multipliers, &best.certificate, cfg.epsilon, tol)?;
    if let Some(bad) = checks.iter().find(|c| !c.ok) {
        return Err(RoaError::Unsound(format!(
            "`{}` residual {:.3e}, λmin {:.3e}",
            bad.name, bad.max_residual, bad.min_eigenvalue
        )));
    }
    Ok(RoaCertificate {
        system: model.name.clone(),
        constraints: problem.constraints.iter().map(|c| c.name.clone()).collect(),
        v: best.v,
        c: best.c,
        multipliers: best.multipliers.named(),
        volume: best.volume,
        best_iteration: best.index,
        trace,
        checks,
    })
}

/// Relative volume change below the threshold over the last `window` steps.
fn converged(volumes: &[f64], conv: &Convergence) -> bool {
    let n = volumes.len();
    if conv.window == 0 || n < conv.window + 1 {
        return false;
    }
    volumes[n - conv.window - 1..].windows(2).all(|w| (w[1] - w[0]).abs() <= conv.rel_change * w[0].abs())
}

/// `x,y` rows tracing `{V = c}` projected on each coordinate plane.
pub fn contour_csv(v: &Polynomial<f64>, c: f64, bins: usize, samples: usize, seed: u64) -> Result<Vec<(String, String)>, RoaError> {
    let vars = v.vars();
    let mut out = Vec::new();
    for i in 0..vars.len() {
        for j in i + 1..vars.len() {
            let pts = projected_outline(v, c, i, j, bins, samples, seed)?;
            let mut s = format!("{},{}\n", vars[i], vars[j]);
            for (a, b) in pts {
                s.push_str(&format!("{a},{b}\n"));
            }
            out.push((format!("contour_{}_{}.csv", vars[i], vars[j]), s));
        }
    }
    Ok(out)
}

pub fn trajectory_csv(states: &[String], traj: &[(f64, Vec<f64>)]) -> String {
    let mut s = format!("t,{}\n", states.join(","));
    for (t, x) in traj {
        let row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        s.push_str(&format!("{t},{}\n", row.join(",")));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convergence_needs_a_full_window() {
        let conv = Convergence::default();
        assert!(!converged(&[1.0, 1.0, 1.0], &conv));
        assert!(converged(&[1.0, 1.0, 1.0, 1.0], &conv));
        assert!(!converged(&[1.0, 1.0, 1.1, 1.1], &conv));
    }
}
