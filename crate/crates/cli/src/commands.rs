use std::path::{Path, PathBuf};
use std::time::Instant;

use log::warn;
use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use ipc_core::constraints::{render_csv, verify_constraint, PolynomialConstraint, Provenance, VerifyReport};
use ipc_core::poly::Polynomial;
use ipc_core::roa::{
    compose, contour_csv, distinct_regions, expansion_census, falsify, run_observed, sample_interior, simulate,
    trajectory_csv, IterationRecord, RoaCertificate, RoaError, RoaProblem,
};
use ipc_core::synth::{SynthConfig, SynthError};
use ipc_core::transform::{check_h1_invertible, compose_constraint, quad_transform, tilde_delta, GraphMap, QuadraticForm};

use crate::config::{
    delta, initial_v, initial_v_unsolved, load, parse_json, read_text, vw_poly, Baseline, LoadedRoa, RoaRunConfig, TransformConfig,
};
use crate::output::{digest, OutDir};
use crate::CliError;

/// Options shared by every command.
#[derive(Clone, Debug, Default)]
pub struct Common {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub dry_run: bool,
}

fn args_digest<T: Serialize>(args: &T) -> String {
    digest(serde_json::to_string(args).expect("arguments serialize").as_bytes())
}

fn synth_error(e: SynthError) -> CliError {
    match e {
        SynthError::Config(_) | SynthError::OutsideTemplate(_) => CliError::Config(e.to_string()),
        SynthError::NoFeasibleIterate(_) => CliError::Failure(e.to_string()),
    }
}

pub fn synth(path: &Path, common: &Common) -> Result<(), CliError> {
    let text = read_text(path)?;
    let mut cfg: SynthConfig = parse_json(&text, path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let prob = cfg.problem().map_err(synth_error)?;
    cfg.init_polynomial(&prob.delta).map_err(synth_error)?;
    if common.dry_run {
        println!(
            "synth-constraint: delta {}, degree {}, {} template monomials, {} test points, {} constraint points",
            cfg.delta,
            cfg.degree,
            prob.template.len(),
            prob.test_points.len(),
            prob.constraint_points.len()
        );
        return Ok(());
    }
    let out = cfg.run().map_err(synth_error)?;
    let mut dir = OutDir::new(&common.out_dir, "synth-constraint", Some(path), digest(text.as_bytes()), vec![cfg.seed]);
    dir.write_json("constraint.json", &out.constraint)?;
    dir.write_json("report.json", &out.report)?;
    dir.finish()?;
    let r = &out.report;
    println!("p = {}", out.constraint.p);
    println!(
        "objective {:.6} -> {:.6}, min constraint value {:.3e}, verify {} (min {:.3e} at v = {:.6})",
        r.objective_init,
        r.objective_final,
        r.min_constraint_value,
        if r.verify.ok { "ok" } else { "FAILED" },
        r.verify.min_value,
        r.verify.argmin
    );
    if !r.verify.ok {
        return Err(CliError::Rejected("synthesized constraint fails verification".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyArgs {
    pub constraint: PathBuf,
    pub delta: String,
    pub interval: Option<(f64, f64)>,
    pub grid: usize,
}

fn read_constraint(path: &Path) -> Result<PolynomialConstraint, CliError> {
    let text = read_text(path)?;
    let c: PolynomialConstraint = parse_json(&text, path)?;
    Ok(c)
}

fn violations_csv(rep: &VerifyReport) -> String {
    let mut s = String::from("v,value\n");
    for x in &rep.violations {
        s.push_str(&format!("{},{}\n", x.v, x.value));
    }
    s
}

pub fn verify(args: &VerifyArgs, config: Option<(&Path, &str)>, common: &Common) -> Result<(), CliError> {
    let c = read_constraint(&args.constraint)?;
    let d = delta(&args.delta)?;
    let (a, b) = match args.interval.or(c.interval.map(|[a, b]| (a, b))) {
        Some(iv) => iv,
        None => return Err(CliError::Config("no interval given and none recorded in the constraint".into())),
    };
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(CliError::Config(format!("interval [{a}, {b}] is not a valid interval")));
    }
    if common.dry_run {
        println!("verify-constraint: {} against {} on [{a}, {b}], grid {}", args.constraint.display(), args.delta, args.grid);
        return Ok(());
    }
    let rep = if a == b {
        warn!("empty interval [{a}, {b}]: nothing to verify");
        eprintln!("warning: empty interval [{a}, {b}], constraint holds vacuously");
        VerifyReport { ok: true, interval: (a, b), min_value: f64::INFINITY, argmin: a, roots: vec![], violations: vec![], normalization: c.p.max_abs_coeff() }
    } else {
        verify_constraint(&c.p, &d, (a, b), args.grid)
    };
    let digest = match config {
        Some((_, text)) => digest(text.as_bytes()),
        None => args_digest(args),
    };
    let mut dir = OutDir::new(&common.out_dir, "verify-constraint", config.map(|c| c.0), digest, vec![]);
    dir.write_json("report.json", &rep)?;
    dir.write("violations.csv", violations_csv(&rep).as_bytes())?;
    dir.finish()?;
    if rep.ok {
        println!("ok on [{a}, {b}]: min normalized value {:.3e} at v = {:.6}", rep.min_value, rep.argmin);
        Ok(())
    } else {
        for x in rep.violations.iter().take(20) {
            println!("violation at v = {:.9}: {:.3e}", x.v, x.value);
        }
        if rep.violations.len() > 20 {
            println!("... {} violations in total", rep.violations.len());
        }
        Err(CliError::Rejected(format!(
            "constraint fails on [{a}, {b}]: min normalized value {:.3e} at v = {:.6}",
            rep.min_value, rep.argmin
        )))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RenderArgs {
    pub constraint: PathBuf,
    pub delta: String,
    pub v_range: (f64, f64),
    pub w_range: (f64, f64),
    pub resolution: usize,
}

pub fn render(args: &RenderArgs, config: Option<(&Path, &str)>, common: &Common) -> Result<(), CliError> {
    let c = read_constraint(&args.constraint)?;
    let d = delta(&args.delta)?;
    if args.resolution < 2 {
        return Err(CliError::Config("resolution must be at least 2".into()));
    }
    if common.dry_run {
        println!("render-constraint: {}x{} grid", args.resolution, args.resolution);
        return Ok(());
    }
    let (grid, curve) = render_csv(&c.p, &d, args.v_range, args.w_range, args.resolution);
    let digest = match config {
        Some((_, text)) => digest(text.as_bytes()),
        None => args_digest(args),
    };
    let mut dir = OutDir::new(&common.out_dir, "render-constraint", config.map(|c| c.0), digest, vec![]);
    dir.write("grid.csv", grid.as_bytes())?;
    dir.write("curve.csv", curve.as_bytes())?;
    dir.finish()?;
    Ok(())
}

/// Output of `transform`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Transformed {
    #[serde(flatten)]
    pub constraint: PolynomialConstraint,
    /// `HᵀMH` when the input was a quadratic form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<[[f64; 2]; 2]>,
    pub h1: Polynomial<f64>,
    pub h2: Polynomial<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyReport>,
}

fn matrix(m: [[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

/// Compose the input constraint with the graph map; see [`TransformConfig`].
pub fn transform_constraint(cfg: &TransformConfig, dir: &Path) -> Result<Transformed, CliError> {
    let te = |e: ipc_core::transform::TransformError| CliError::Config(e.to_string());
    if cfg.h.is_some() && (cfg.h1.is_some() || cfg.h2.is_some()) {
        return Err(CliError::Config("give either h or h1/h2".into()));
    }
    let inputs = [cfg.m.is_some(), cfg.psi.is_some(), cfg.constraint.is_some()].iter().filter(|&&b| b).count();
    if inputs != 1 {
        return Err(CliError::Config("give exactly one of m, psi, constraint".into()));
    }
    let map = match (&cfg.h, &cfg.h1, &cfg.h2) {
        (Some(h), _, _) => GraphMap::linear(&matrix(*h)),
        (None, None, None) => GraphMap::identity(),
        (None, h1, h2) => {
            let id = GraphMap::identity();
            let h1 = h1.as_deref().map(vw_poly).transpose()?.unwrap_or(id.h1);
            let h2 = h2.as_deref().map(vw_poly).transpose()?.unwrap_or(id.h2);
            GraphMap::new(h1, h2).map_err(te)?
        }
    };
    let (p, mat, base) = match (&cfg.m, &cfg.psi, &cfg.constraint) {
        (Some(m), _, _) => {
            let form = QuadraticForm::new(matrix(*m)).map_err(te)?;
            let h = cfg.h.map(matrix).unwrap_or_else(Matrix2::identity);
            if cfg.h1.is_some() || cfg.h2.is_some() {
                return Err(CliError::Config("a quadratic form m needs a linear map h".into()));
            }
            let (mt, p) = quad_transform(&h, &form);
            (p, Some([[mt.m[(0, 0)], mt.m[(0, 1)]], [mt.m[(1, 0)], mt.m[(1, 1)]]]), None)
        }
        (_, Some(text), _) => (compose_constraint(&vw_poly(text)?, &map).map_err(te)?, None, None),
        (_, _, Some(path)) => {
            let path = if path.is_absolute() { path.clone() } else { dir.join(path) };
            let c = read_constraint(&path)?;
            (compose_constraint(&c.p, &map).map_err(te)?, None, Some(c))
        }
        _ => unreachable!("exactly one input"),
    };
    let identity = map == GraphMap::identity();
    let mut constraint = match base {
        Some(c) if identity => c,
        _ => PolynomialConstraint::new(p, if identity { Provenance::Hand } else { Provenance::Transformed }),
    };
    let mut verify = None;
    if let (Some(tag), Some((a, b))) = (&cfg.delta, cfg.interval) {
        let d = delta(tag)?;
        let rep = check_h1_invertible(&map, &d, (a, b), cfg.samples.max(1000));
        if !rep.ok {
            return Err(CliError::Rejected(format!(
                "h1 is not invertible along the graph on [{a}, {b}]: d/dv h1(v, Δ(v)) ranges over [{:.6e}, {:.6e}]",
                rep.min_derivative, rep.max_derivative
            )));
        }
        let r = verify_constraint(&constraint.p, &d, (a, b), 10_000);
        if r.ok && !identity {
            constraint = constraint.with_interval(a, b);
        }
        verify = Some(r);
    }
    Ok(Transformed { constraint, matrix: mat, h1: map.h1, h2: map.h2, verify })
}

pub fn transform(cfg: &TransformConfig, config: Option<(&Path, &str)>, common: &Common) -> Result<(), CliError> {
    let dir_in = config.and_then(|c| c.0.parent()).map(Path::to_path_buf).unwrap_or_default();
    let out = transform_constraint(cfg, &dir_in)?;
    if common.dry_run {
        println!("transform: composed constraint {}", out.constraint.p);
        return Ok(());
    }
    let tilde = match (&cfg.delta, cfg.interval) {
        (Some(tag), Some((a, b))) => {
            let d = delta(tag)?;
            let n = cfg.samples.max(2);
            let xs: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
            let map = GraphMap { h1: out.h1.clone(), h2: out.h2.clone() };
            let pts = tilde_delta(&map, &d, &xs).map_err(|e| CliError::Rejected(e.to_string()))?;
            let mut s = String::from("v_tilde,w_tilde\n");
            for (x, y) in pts {
                s.push_str(&format!("{x},{y}\n"));
            }
            Some(s)
        }
        _ => None,
    };
    let digest = match config {
        Some((_, text)) => digest(text.as_bytes()),
        None => args_digest(cfg),
    };
    let mut dir = OutDir::new(&common.out_dir, "transform", config.map(|c| c.0), digest, vec![]);
    dir.write_json("constraint.json", &out)?;
    if let Some(s) = tilde {
        dir.write("tilde_delta.csv", s.as_bytes())?;
    }
    dir.finish()?;
    println!("p = {}", out.constraint.p);
    if let Some(m) = out.matrix {
        println!("matrix = [[{}, {}], [{}, {}]]", m[0][0], m[0][1], m[1][0], m[1][1]);
    }
    if let Some(r) = &out.verify {
        println!("verify on [{}, {}]: {} (min {:.3e})", r.interval.0, r.interval.1, if r.ok { "ok" } else { "FAILED" }, r.min_value);
    }
    Ok(())
}

fn roa_error(e: RoaError) -> CliError {
    match e {
        RoaError::Config(_) | RoaError::Model(_) | RoaError::Poly(_) => CliError::Config(e.to_string()),
        _ => CliError::Failure(e.to_string()),
    }
}

/// Resolve `V₀` and run the alternation for a loaded config.
pub fn certify(
    loaded: &LoadedRoa,
    observe: &mut dyn FnMut(&IterationRecord, &Polynomial<f64>),
) -> Result<RoaCertificate, CliError> {
    let problem = problem(loaded)?;
    let cfg = loaded.config.effective_roa()?;
    run_observed(&problem, &cfg, observe).map_err(roa_error)
}

pub fn problem(loaded: &LoadedRoa) -> Result<RoaProblem, CliError> {
    let v0 = initial_v(&loaded.config.v0, &loaded.model, &loaded.dir)?;
    Ok(RoaProblem { model: loaded.model.clone(), constraints: loaded.constraints.clone(), v0 })
}

/// Block census of the first expansion solve.
pub fn census(loaded: &LoadedRoa, v0: &Polynomial<f64>) -> Result<Vec<(String, usize)>, CliError> {
    let cfg = loaded.config.effective_roa()?;
    let model = &loaded.model;
    let composed = loaded.constraints.iter().map(|rc| compose(model, rc)).collect::<Result<Vec<_>, _>>().map_err(roa_error)?;
    let regions = distinct_regions(&composed);
    let v0 = v0.align_to(&model.states).map_err(|e| CliError::Config(e.to_string()))?;
    expansion_census(model, &v0, 1.0, &composed, &regions, cfg.schedule[0].degrees(), cfg.epsilon).map_err(roa_error)
}

/// One row of the run summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub constraints: String,
    pub volume: f64,
    pub relative: f64,
    pub seconds: f64,
}

pub fn trace_csv(trace: &[IterationRecord]) -> String {
    let mut s = String::from("stage,iteration,n_v,n_total,c,volume,volume_std_error,reshape_level,stagnated,solves,seconds\n");
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in trace {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.stage,
            r.iteration,
            r.n_v,
            r.n_total,
            r.c,
            r.volume,
            opt(r.volume_std_error),
            opt(r.reshape_level),
            r.stagnated,
            r.solves,
            r.seconds
        ));
    }
    s
}

#[derive(Serialize)]
struct LastFeasible<'a> {
    error: String,
    record: Option<&'a IterationRecord>,
    v: Option<&'a Polynomial<f64>>,
}

fn baseline_volume(b: &Baseline, dir: &Path) -> Result<(String, f64), CliError> {
    match b {
        Baseline::Volume { label, volume } => Ok((label.clone(), *volume)),
        Baseline::Certificate { label, path } => {
            let path = if path.is_absolute() { path.clone() } else { dir.join(path) };
            let cert: RoaCertificate = load(&path)?;
            Ok((label.clone(), cert.volume.value))
        }
    }
}

pub fn roa(path: &Path, common: &Common) -> Result<(), CliError> {
    let text = read_text(path)?;
    let mut cfg: RoaRunConfig = parse_json(&text, path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let dir_in = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.effective_roa()?;
    if common.dry_run {
        let loaded = LoadedRoa::new(cfg, dir_in)?;
        let v0 = initial_v_unsolved(&loaded.config.v0, &loaded.model, &loaded.dir)?;
        println!("roa `{}`: {} constraints, V0 of degree {}", loaded.config.name, loaded.constraints.len(), v0.degree());
        let blocks = census(&loaded, &v0)?;
        println!("{:<40} {:>6}", "block", "size");
        for (name, dim) in &blocks {
            println!("{name:<40} {dim:>6}");
        }
        println!("{} blocks, solver not run", blocks.len());
        return Ok(());
    }
    let t0 = Instant::now();
    let loaded = LoadedRoa::new(cfg, dir_in)?;
    let mut out = OutDir::new(&common.out_dir, "roa", Some(path), digest(text.as_bytes()), vec![loaded.config.seed]);
    let mut last: Option<(IterationRecord, Polynomial<f64>)> = None;
    let cert = match certify(&loaded, &mut |r, v| last = Some((r.clone(), v.clone()))) {
        Ok(c) => c,
        Err(e) => {
            let rec = LastFeasible { error: e.to_string(), record: last.as_ref().map(|l| &l.0), v: last.as_ref().map(|l| &l.1) };
            out.write_json("last_feasible.json", &rec)?;
            out.finish()?;
            return Err(e);
        }
    };
    let seconds = t0.elapsed().as_secs_f64();
    let cfg = &loaded.config;
    let model = &loaded.model;
    let report = falsify(model, &cert.v, cert.c, &cfg.falsify_options()).map_err(roa_error)?;

    out.write_json("certificate.json", &cert)?;
    out.write_json("falsify.json", &report)?;
    out.write("trace.csv", trace_csv(&cert.trace).as_bytes())?;
    let plots = &cfg.plots;
    for (name, csv) in contour_csv(&cert.v, cert.c, plots.contour_bins, plots.contour_samples, cfg.seed).map_err(roa_error)? {
        out.write(&name, csv.as_bytes())?;
    }
    if plots.trajectories > 0 {
        let starts = sample_interior(&cert.v, cert.c, plots.trajectories, cfg.seed ^ 0x7a7a).map_err(roa_error)?;
        for (k, x0) in starts.iter().enumerate() {
            let traj = simulate(model, x0, plots.t_end, plots.dt);
            out.write(&format!("trajectory_{k}.csv"), trajectory_csv(&model.states, &traj).as_bytes())?;
        }
    }
    let label = loaded.constraints.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join("+");
    let (base_label, base_volume) = match &cfg.baseline {
        Some(b) => baseline_volume(b, &loaded.dir)?,
        None => (label.clone(), cert.volume.value),
    };
    let row = SummaryRow { constraints: label, volume: cert.volume.value, relative: cert.volume.value / base_volume, seconds };
    out.write(
        "summary.csv",
        format!("constraints,volume,relative,seconds\n{},{},{},{}\n", row.constraints, row.volume, row.relative, row.seconds)
            .as_bytes(),
    )?;
    out.finish()?;

    println!("{:<6} {:<5} {:>12} {:>12} {:>8}", "stage", "iter", "c", "volume", "seconds");
    for r in &cert.trace {
        println!("{:<6} {:<5} {:>12.6} {:>12.6} {:>8.1}", r.stage, r.iteration, r.c, r.volume, r.seconds);
    }
    println!();
    println!("{:<24} {:>12} {:>14} {:>10}", "constraints", "volume", "relative", "seconds");
    println!(
        "{:<24} {:>12.4} {:>14} {:>10.1}",
        row.constraints,
        row.volume,
        format!("{:.2}x vs {}", row.relative, base_label),
        row.seconds
    );
    println!("falsification: {}/{} converged", report.converged, report.samples);
    if !cert.is_sound() {
        return Err(CliError::Failure("certificate failed re-validation".into()));
    }
    if !report.passed() {
        return Err(CliError::Failure(format!("{} interior samples did not converge", report.failures.len())));
    }
    Ok(())
}
