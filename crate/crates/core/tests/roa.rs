use std::f64::consts::PI;

use ipc_core::constraints::{sector_constraint, DeltaOperator, PolynomialConstraint, Provenance, VW};
use ipc_core::poly::{parse, Polynomial};
use ipc_core::roa::*;
use ipc_core::sos::SolverTolerances;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(name: &str, states: &[&str], f: &[&str], g: &[&str], delta: Vec<DeltaOperator>) -> SystemModel {
    let states: Vec<String> = states.iter().map(|s| s.to_string()).collect();
    let inputs: Vec<String> = if g.is_empty() { vec![] } else { vec!["w".into()] };
    let xw: Vec<String> = states.iter().chain(&inputs).cloned().collect();
    let f = f.iter().map(|t| parse(t, &xw).unwrap()).collect();
    let g = g.iter().map(|t| parse(t, &states).unwrap()).collect();
    SystemModel::new(name, states, inputs, f, g, delta).unwrap()
}

fn exp_system() -> SystemModel {
    model("exp", &["x1", "x2"], &["-x2 + w", "x1 - x2"], &["x1"], vec![DeltaOperator::exp_minus_affine()])
}

fn exp_sector(lo: f64, hi: f64) -> RoaConstraint {
    let p = parse("(0.318*v - w)*(0.368*v + w)", &VW).unwrap();
    RoaConstraint { name: "sector".into(), channel: 0, constraint: PolynomialConstraint::new(p, Provenance::Sector).with_interval(lo, hi) }
}

fn exp_v0(m: &SystemModel) -> Polynomial<f64> {
    initial_lyapunov(&m.linearization(), &DMatrix::identity(2, 2), &m.states).unwrap()
}

fn triple_integrator() -> SystemModel {
    model(
        "triple",
        &["x1", "x2", "x3"],
        &["x2", "x3", "-x1 - 2.4142*x2 - 2.4142*x3 + w"],
        &["-x1 - 2.4142*x2 - 2.4142*x3"],
        vec![DeltaOperator::tanh_minus_identity()],
    )
}

fn triple_v0(m: &SystemModel) -> Polynomial<f64> {
    let k = DMatrix::from_row_slice(1, 3, &[-1.0, -2.4142, -2.4142]);
    let q = DMatrix::identity(3, 3) + k.transpose() * k;
    initial_lyapunov(&m.linearization(), &q, &m.states).unwrap()
}

fn triple_sector() -> RoaConstraint {
    let p = parse("-w*(w + 0.5379*v)", &VW).unwrap();
    RoaConstraint { name: "sector".into(), channel: 0, constraint: PolynomialConstraint::new(p, Provenance::Sector).with_interval(-2.1, 2.1) }
}

/// `ẋ = −x + w` with `Δ ≡ 0` and the constraint `−w² ≥ 0` on `v ∈ [−a, a]`.
fn scalar_instance(a: f64) -> (SystemModel, Vec<ComposedConstraint>) {
    let zero = DeltaOperator::custom(|_| 0.0, Some(Box::new(|_| 0.0)), (-10.0, 10.0));
    let m = model("scalar", &["x"], &["-x + w"], &["x"], vec![zero]);
    let p = parse("-w^2", &VW).unwrap();
    let rc = RoaConstraint { name: "zero".into(), channel: 0, constraint: PolynomialConstraint::new(p, Provenance::Hand).with_interval(-a, a) };
    let composed = vec![compose(&m, &rc).unwrap()];
    (m, composed)
}

fn c_star(m: &SystemModel, v: &Polynomial<f64>, composed: &[ComposedConstraint], deg: Degrees) -> ExpansionResult {
    let regions = distinct_regions(composed);
    expansion_step(m, v, composed, &regions, deg, 1e-6, &BisectionOptions::default(), &SolverTolerances::default()).unwrap()
}

fn feasible_at(m: &SystemModel, v: &Polynomial<f64>, c: f64, composed: &[ComposedConstraint], deg: Degrees) -> bool {
    let regions = distinct_regions(composed);
    expansion_at(m, v, c, composed, &regions, deg, 1e-6, &SolverTolerances::default()).unwrap().is_some()
}

#[test]
fn stable_scalar_condition_is_two_minus_epsilon() {
    let m = model("lin", &["x"], &["-x"], &[], vec![]);
    let v = parse("x^2", &["x"]).unwrap();
    let zero = Polynomial::zero(&["x"]);
    let e = roa_condition(&m, &v, 1.0, &zero, &[], 1e-6).unwrap();
    let expected = parse("1.999999*x^2", &["x"]).unwrap();
    assert!(e.max_coeff_diff(&expected) < 1e-15, "{e}");
}

#[test]
fn unstable_scalar_has_no_certifiable_set() {
    let m = model("unstable", &["x"], &["x"], &[], vec![]);
    let v = parse("x^2", &["x"]).unwrap();
    let r = expansion_step(&m, &v, &[], &[], Degrees::new(2, 4), 1e-6, &BisectionOptions::default(), &SolverTolerances::default());
    assert!(matches!(r, Err(RoaError::NoCertifiableSet)), "{:?}", r.err());
}

#[test]
fn lyapunov_scalar() {
    let p = lyapunov_matrix(&DMatrix::from_element(1, 1, -1.0), &DMatrix::from_element(1, 1, 1.0)).unwrap();
    assert_eq!(p[(0, 0)], 0.5);
}

#[test]
fn lyapunov_exp_linearization() {
    let m = exp_system();
    let a = m.linearization();
    assert_eq!(a, DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, -1.0]));
    let p = lyapunov_matrix(&a, &DMatrix::identity(2, 2)).unwrap();
    // Hand-solved 3×3 linear system for the symmetric entries.
    let hand = DMatrix::from_row_slice(2, 2, &[1.5, -0.5, -0.5, 1.0]);
    assert!((&p - &hand).amax() < 1e-12);
    let res = a.transpose() * &p + &p * &a + DMatrix::identity(2, 2);
    assert!(res.amax() <= 1e-10);
}

#[test]
fn lyapunov_rejects_marginal_spectrum() {
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    assert!(matches!(lyapunov_matrix(&a, &DMatrix::identity(2, 2)), Err(RoaError::NotHurwitz(_))));
}

#[test]
fn triple_integrator_initial_v_is_positive() {
    let m = triple_integrator();
    let v0 = triple_v0(&m);
    let cert = positivity_certificate(&v0, 1e-6, &SolverTolerances::default()).unwrap();
    assert!(cert.is_feasible());
    assert!(cert.max_residual <= 1e-6);
}

#[test]
fn model_hypotheses_are_checked() {
    let states = vec!["x".to_string()];
    let inputs = vec!["w".to_string()];
    let xw = vec!["x".to_string(), "w".to_string()];
    let f = vec![parse("-x + w + 1", &xw).unwrap()];
    let g = vec![parse("x", &states).unwrap()];
    let r = SystemModel::new("bad", states.clone(), inputs.clone(), f, g, vec![DeltaOperator::tanh()]);
    assert!(matches!(r, Err(RoaError::Model(_))));
    let f = vec![parse("-x + w", &xw).unwrap()];
    let g = vec![parse("x + 1", &states).unwrap()];
    assert!(SystemModel::new("bad", states, inputs, f, g, vec![DeltaOperator::tanh()]).is_err());
}

#[test]
fn validity_with_constant_region_is_trivial() {
    let v = parse("x^2", &["x"]).unwrap();
    let one = Polynomial::constant(&["x"], 1.0);
    let zero = Polynomial::zero(&["x"]);
    let conds = validity_conditions(&v, 3.0, &[one.clone()], &[zero.clone()], &[zero]).unwrap();
    assert_eq!(conds.len(), 1);
    assert!(conds[0].max_coeff_diff(&one) == 0.0);
}

#[test]
fn expansion_level_follows_the_validity_interval() {
    let v = parse("x^2", &["x"]).unwrap();
    let (m1, c1) = scalar_instance(1.0);
    let (m2, c2) = scalar_instance(2.0);
    let r1 = c_star(&m1, &v, &c1, Degrees::new(2, 4));
    let r2 = c_star(&m2, &v, &c2, Degrees::new(2, 4));
    // {x² ≤ c} ⊆ {|x| ≤ a} exactly when c ≤ a².
    assert!(r1.c <= 1.0 + 1e-9 && r1.c >= 0.98, "{}", r1.c);
    assert!(r2.c <= 4.0 + 1e-9 && r2.c >= 3.9, "{}", r2.c);
}

#[test]
fn exp_sector_expansion_is_feasible() {
    let m = exp_system();
    let composed = vec![compose(&m, &exp_sector(-1.0, 0.53)).unwrap()];
    let r = c_star(&m, &exp_v0(&m), &composed, Degrees::new(2, 6));
    assert!(r.c > 0.0);
    assert!(r.certificate.max_residual <= 1e-6);
}

#[test]
fn triple_sector_expansion_is_feasible() {
    let m = triple_integrator();
    let composed = vec![compose(&m, &triple_sector()).unwrap()];
    let r = c_star(&m, &triple_v0(&m), &composed, Degrees::new(2, 6));
    assert!(r.c > 0.0);
}

#[test]
fn shrinking_the_validity_region_limits_the_level() {
    let m = exp_system();
    let v0 = exp_v0(&m);
    let wide = vec![compose(&m, &exp_sector(-1.0, 0.53)).unwrap()];
    let narrow = vec![compose(&m, &exp_sector(-0.1, 0.1)).unwrap()];
    let deg = Degrees::new(2, 6);
    let c_wide = c_star(&m, &v0, &wide, deg).c;
    let c_narrow = c_star(&m, &v0, &narrow, deg).c;
    assert!(c_narrow < c_wide);
    assert!(!feasible_at(&m, &v0, c_wide, &narrow, deg));
}

#[test]
fn feasibility_is_monotone_in_the_level() {
    let v = parse("x^2", &["x"]).unwrap();
    let (ms, cs) = scalar_instance(1.0);
    let me = exp_system();
    let ce = vec![compose(&me, &exp_sector(-1.0, 0.53)).unwrap()];
    let mt = triple_integrator();
    let ct = vec![compose(&mt, &triple_sector()).unwrap()];
    let cases: [(&SystemModel, Polynomial<f64>, &[ComposedConstraint], Degrees); 3] = [
        (&ms, v, &cs, Degrees::new(2, 4)),
        (&me, exp_v0(&me), &ce, Degrees::new(2, 6)),
        (&mt, triple_v0(&mt), &ct, Degrees::new(2, 6)),
    ];
    for (m, v, composed, deg) in cases {
        let c = c_star(m, &v, composed, deg).c;
        for k in [2.0, 4.0, 16.0] {
            assert!(feasible_at(m, &v, c / k, composed, deg), "{}: infeasible at c*/{k}", m.name);
        }
    }
}

/// `ẋ₁ = x₂, ẋ₂ = −x₁ − x₂ + w` with `w = 0.3 sin(x₁)` in the sector `|w| ≤ 0.3|v|`
/// on `v ∈ [−1, 1]`.
fn linear_instance() -> (SystemModel, Vec<ComposedConstraint>, Polynomial<f64>) {
    let delta = DeltaOperator::custom(|v| 0.3 * v.sin(), Some(Box::new(|v| 0.3 * v.cos())), (-10.0, 10.0));
    let m = model("linear", &["x1", "x2"], &["x2", "-x1 - x2 + w"], &["x1"], vec![delta]);
    let p = parse("(0.3*v - w)*(w + 0.3*v)", &VW).unwrap();
    let rc = RoaConstraint { name: "sector".into(), channel: 0, constraint: PolynomialConstraint::new(p, Provenance::Sector).with_interval(-1.0, 1.0) };
    let composed = vec![compose(&m, &rc).unwrap()];
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]);
    let v0 = initial_lyapunov(&a, &DMatrix::identity(2, 2), &m.states).unwrap();
    (m, composed, v0)
}

#[test]
fn reshape_contains_the_shrunken_level_set() {
    let (m, composed, v0) = linear_instance();
    let regions = distinct_regions(&composed);
    let deg = Degrees::new(2, 4);
    let tol = SolverTolerances::default();
    let exp = c_star(&m, &v0, &composed, deg);
    let r = reshape_step(&m, &v0, exp.c, &exp.multipliers, &composed, &regions, deg, 1e-6, (0.9, 0.99), 1e-3, &tol)
        .unwrap()
        .expect("the incumbent V*/c* is feasible");
    assert!(r.level >= 0.9 * exp.c - 1e-12 && r.level <= 0.99 * exp.c + 1e-12);
    assert!(r.v.eval(&[0.0, 0.0]).abs() < 1e-9);

    // Boundary of {V* ≤ level}: x = √level · L⁻ᵀ u with P = L Lᵀ, |u| = 1.
    let p = quadratic_matrix(&v0).unwrap();
    let l = p.cholesky().unwrap().l();
    let lt_inv = l.transpose().try_inverse().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let th: f64 = rng.random_range(0.0..2.0 * PI);
        let u = nalgebra::DVector::from_vec(vec![th.cos(), th.sin()]);
        let x = &lt_inv * u * r.level.sqrt();
        assert!((v0.eval(x.as_slice()) - r.level).abs() < 1e-9);
        assert!(r.v.eval(x.as_slice()) <= 1.0 + 1e-6, "V = {} at {:?}", r.v.eval(x.as_slice()), x);
    }
}

#[test]
fn reshape_accepts_an_embedded_quadratic() {
    let m = exp_system();
    let composed = vec![compose(&m, &exp_sector(-1.0, 0.53)).unwrap()];
    let regions = distinct_regions(&composed);
    let v0 = exp_v0(&m);
    let deg = Degrees::new(6, 10);
    let exp = c_star(&m, &v0, &composed, deg);
    let tol = SolverTolerances::default();
    let r = reshape_step(&m, &v0, exp.c, &exp.multipliers, &composed, &regions, deg, 1e-6, (0.9, 0.99), 1e-3, &tol)
        .unwrap()
        .expect("degree-6 reshape from a quadratic V*");
    assert!(r.v.degree() <= 6);
    assert!(r.level >= 0.9 * exp.c - 1e-12);
}

#[test]
fn exact_volumes() {
    let v = parse("x^2 + y^2", &["x", "y"]).unwrap();
    let e = estimate_volume(&v, 1.0, &VolumeMethod::default()).unwrap();
    assert!((e.value - PI).abs() < 1e-12);
    assert_eq!(e.std_error, None);
    let v = parse("x^2 + 4*y^2", &["x", "y"]).unwrap();
    let e = estimate_volume(&v, 1.0, &VolumeMethod::default()).unwrap();
    assert!((e.value - PI / 2.0).abs() < 1e-12);
}

#[test]
fn monte_carlo_matches_the_superellipse_area() {
    // |x|⁴ + |y|⁴ ≤ 1 has area Γ(1/4)² / (2√π).
    let gamma_quarter = 3.625_609_908_221_908_4;
    let exact = gamma_quarter * gamma_quarter / (2.0 * PI.sqrt());
    let v = parse("x^4 + y^4", &["x", "y"]).unwrap();
    let e = estimate_volume(&v, 1.0, &VolumeMethod::Auto { samples: 1_000_000, seed: 3 }).unwrap();
    let se = e.std_error.unwrap();
    assert!((e.value - exact).abs() <= 3.0 * se, "{} vs {exact} ± {se}", e.value);
    assert!(e.relative_std_error() < 1e-2);
}

#[test]
fn monte_carlo_is_self_consistent() {
    let v = parse("x^6 + y^6 + x^2 + x*y + y^2 + 0.5*x^4*y^2", &["x", "y"]).unwrap();
    let a = estimate_volume(&v, 1.5, &VolumeMethod::Auto { samples: 1_000_000, seed: 0 }).unwrap();
    let b = estimate_volume(&v, 1.5, &VolumeMethod::MonteCarlo { samples: 10_000_000, seed: 1 }).unwrap();
    let se = (a.std_error.unwrap().powi(2) + b.std_error.unwrap().powi(2)).sqrt();
    assert!((a.value - b.value).abs() <= 3.0 * se, "{} vs {} ± {se}", a.value, b.value);
}

#[test]
fn unbounded_sets_are_rejected() {
    let v = parse("x^2 - y^2", &["x", "y"]).unwrap();
    assert!(matches!(estimate_volume(&v, 1.0, &VolumeMethod::default()), Err(RoaError::Unbounded)));
}

#[test]
fn origin_stays_put() {
    let m = exp_system();
    let traj = simulate(&m, &[0.0, 0.0], 10.0, 0.01);
    assert!(traj.iter().all(|(_, x)| x.iter().all(|v| *v == 0.0)));
    assert_eq!(classify(&m, &[0.0, 0.0], 10.0, 0.01, 1e-3).0, Outcome::Converged);
}

#[test]
fn point_beyond_the_second_equilibrium_does_not_converge() {
    let m = exp_system();
    let (outcome, _) = classify(&m, &[1.3, 1.3], 50.0, 0.01, 1e-3);
    assert_ne!(outcome, Outcome::Converged);
}

#[test]
fn config_validation() {
    let ok = RoaConfig::new(vec![Stage { n_v: 2, n_total: 6, iterations: 1 }]);
    assert!(ok.validate().is_ok());
    let odd = RoaConfig::new(vec![Stage { n_v: 3, n_total: 6, iterations: 1 }]);
    assert!(odd.validate().is_err());
    let low = RoaConfig::new(vec![Stage { n_v: 4, n_total: 2, iterations: 1 }]);
    assert!(low.validate().is_err());
    let mut eps = ok.clone();
    eps.epsilon = 0.0;
    assert!(eps.validate().is_err());
    assert!(RoaConfig::new(vec![]).validate().is_err());
}

fn check_run(problem: &RoaProblem, cert: &RoaCertificate, cfg: &RoaConfig) {
    assert!(cert.is_sound(), "{:?}", cert.checks);
    assert!(cert.checks.iter().all(|c| c.max_residual <= 1e-6));
    assert!(cert.v.eval(&vec![0.0; cert.v.nvars()]).abs() < 1e-9);
    let report = falsify(&problem.model, &cert.v, cert.c, &FalsifyOptions::default()).unwrap();
    assert_eq!(report.samples, 100);
    assert!(report.passed(), "{:?}", report.failures);
    // Every set after the first is normalized to level 1 by the reshape, so
    // the expansion level never drops below it. The new set contains
    // {V_k ≤ level_k}, whose volume is exact for quadratic V_k.
    let n = cert.v.nvars() as f64;
    for w in cert.trace.windows(2) {
        assert!(w[1].c >= 1.0 - 1e-6, "{:?}", w[1]);
        if let (true, 2, Some(level)) = (w[0].stage == w[1].stage, w[0].n_v, w[0].reshape_level) {
            let inner = w[0].volume * (level / w[0].c).powf(n / 2.0);
            assert!(w[1].volume >= inner * (1.0 - 1e-6), "{:?} -> {:?}", w[0], w[1]);
        }
    }
    assert!(cert.trace.iter().all(|r| r.volume <= cert.volume.value));
    assert!(cert.trace.len() <= cfg.total_iterations());
}

#[test]
fn exp_sector_run_is_sound() {
    let m = exp_system();
    let problem = RoaProblem { v0: exp_v0(&m), model: m, constraints: vec![exp_sector(-1.0, 0.53)] };
    let cfg = RoaConfig::new(vec![Stage { n_v: 2, n_total: 6, iterations: 6 }]);
    let cert = run(&problem, &cfg).unwrap();
    check_run(&problem, &cert, &cfg);
    let parsed: serde_json::Value = serde_json::from_str(&cert.to_json()).unwrap();
    assert!(parsed["c"].as_f64().unwrap() > 0.0);
}

#[test]
fn sector_from_the_transformed_example_matches_the_library_sector() {
    // Reversed Van der Pol with extra tanh damping: bounded region, both
    // constraints describe the sector [0, 1].
    let m = model("vdp", &["x1", "x2"], &["x2", "-x1 - x2 - w + x1^2*x2"], &["x2"], vec![DeltaOperator::tanh()]);
    // Linearized at w = 0, the weakest damping; this P also decreases at w = v.
    let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]);
    let v0 = initial_lyapunov(&a, &DMatrix::identity(2, 2), &m.states).unwrap();
    let lib = sector_constraint(0.0, 1.0).unwrap();
    let derived = PolynomialConstraint::new(parse("2*v*w - 2*w^2", &VW).unwrap(), Provenance::Transformed);
    let cfg = RoaConfig::new(vec![Stage { n_v: 2, n_total: 4, iterations: 3 }]);
    let mut volumes = Vec::new();
    for (name, c) in [("library", lib), ("derived", derived)] {
        let problem = RoaProblem { model: m.clone(), constraints: vec![RoaConstraint { name: name.into(), channel: 0, constraint: c }], v0: v0.clone() };
        let cert = run(&problem, &cfg).unwrap();
        check_run(&problem, &cert, &cfg);
        volumes.push(cert.volume.value);
    }
    assert!((volumes[0] - volumes[1]).abs() <= 0.01 * volumes[0], "{volumes:?}");
}

#[test]
fn contour_and_trajectory_csv() {
    let v = parse("x1^2 + x2^2 + x3^2", &["x1", "x2", "x3"]).unwrap();
    let files = contour_csv(&v, 1.0, 32, 20_000, 0).unwrap();
    assert_eq!(files.len(), 3);
    assert!(files[0].1.starts_with("x1,x2\n"));
    let m = exp_system();
    let traj = simulate(&m, &[0.1, 0.0], 0.05, 0.01);
    let csv = trajectory_csv(&m.states, &traj);
    assert_eq!(csv.lines().count(), traj.len() + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ellipsoid_volume_scales_with_the_level(d in prop::collection::vec(0.1f64..10.0, 1..5), c in 0.01f64..100.0) {
        let n = d.len();
        let vars: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
        let v = quadratic_form(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.clone())), &vars);
        let e = estimate_volume(&v, c, &VolumeMethod::default()).unwrap();
        // Product of semi-axes √(c/dᵢ) times the unit-ball volume.
        let axes: f64 = d.iter().map(|di| (c / di).sqrt()).product();
        prop_assert!((e.value - axes * unit_ball_volume(n)).abs() <= 1e-10 * e.value);
    }

    #[test]
    fn lyapunov_residual_is_small(entries in prop::collection::vec(-1.0f64..1.0, 9)) {
        // −(BᵀB + I) + (S − Sᵀ) is Hurwitz: its symmetric part is negative definite.
        let b = DMatrix::from_row_slice(3, 3, &entries);
        let a = -(b.transpose() * &b + DMatrix::identity(3, 3)) + (&b - b.transpose());
        let q = DMatrix::identity(3, 3);
        let p = lyapunov_matrix(&a, &q).unwrap();
        prop_assert!((a.transpose() * &p + &p * &a + &q).amax() <= 1e-10);
        prop_assert!(p.symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn quadratic_form_round_trips(entries in prop::collection::vec(-2.0f64..2.0, 4)) {
        let p = DMatrix::from_row_slice(2, 2, &[entries[0], entries[1], entries[1], entries[3]]);
        let v = quadratic_form(&p, &["x", "y"]);
        if let Some(back) = quadratic_matrix(&v) {
            prop_assert!((back - &p).amax() < 1e-14);
        }
    }
}
