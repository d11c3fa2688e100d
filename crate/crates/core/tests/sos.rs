use ipc_core::poly::{monomials_up_to, parse, Polynomial};
use ipc_core::sos::{
    check_certificate, compile, solve_program, LinExpr, ParamPoly, SolveStatus, SolverTolerances, SosProgram,
};
use ipc_core::Poly;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn poly(text: &str, vars: &[&str]) -> Poly {
    parse(text, vars).unwrap()
}

fn sos_of(p: &Poly) -> ipc_core::sos::SosCertificate {
    let mut prog = SosProgram::new();
    prog.add_sos_constraint("p", ParamPoly::from_poly(p));
    solve_program(&prog, &SolverTolerances::default()).unwrap()
}

#[test]
fn square_of_linear_form() {
    let p = poly("x^2 - 2*x + 1", &["x"]);
    let cert = sos_of(&p);
    assert_eq!(cert.status, SolveStatus::Optimal);
    let g = &cert.grams[0];
    assert_eq!(g.gram.nrows(), 2);
    let report = check_certificate(&p, &g.basis, &g.gram);
    assert!(report.max_residual <= 1e-9, "{report:?}");
    assert!(report.min_eigenvalue >= -1e-8);
    let hand = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    assert_eq!(check_certificate(&p, &g.basis, &hand).max_residual, 0.0);
    assert!((&g.gram - &hand).amax() < 1e-6);
}

#[test]
fn one_plus_x_squared_is_identity_gram() {
    let p = poly("1 + x^2", &["x"]);
    let cert = sos_of(&p);
    assert_eq!(cert.status, SolveStatus::Optimal);
    let g = &cert.grams[0].gram;
    assert!((g - DMatrix::identity(2, 2)).amax() < 1e-6, "{g}");
}

#[test]
fn negative_definite_is_infeasible() {
    let cert = sos_of(&poly("-x^2 - 1", &["x"]));
    assert_eq!(cert.status, SolveStatus::Infeasible);
}

#[test]
fn minimizing_the_offset_reaches_zero() {
    let mut prog = SosProgram::new();
    let c = prog.new_scalar("c", None, None);
    let neg_c = prog.new_scalar("neg_c", None, None);
    let x2 = poly("x^2", &["x"]);
    let expr = ParamPoly::from_poly(&x2) + ParamPoly::from_linexpr(&["x"], prog.scalar(c));
    prog.add_sos_constraint("x2c", expr);
    let mut link = prog.scalar(c);
    link.add_scaled(&prog.scalar(neg_c), 1.0);
    prog.add_eq_constraint("link", ParamPoly::from_linexpr(&["x"], link));
    prog.maximize(neg_c);
    let cert = solve_program(&prog, &SolverTolerances::default()).unwrap();
    assert_eq!(cert.status, SolveStatus::Optimal);
    assert!(cert.scalar(c).abs() <= 1e-6, "c = {}", cert.scalar(c));
}

#[test]
fn perturbed_gram_is_detected() {
    let p = poly("x^2 - 2*x + 1", &["x"]);
    let basis = ipc_core::poly::MonomialBasis::full(&["x"], 1);
    let mut q = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    q[(0, 1)] += 1e-3;
    q[(1, 0)] += 1e-3;
    assert!(check_certificate(&p, &basis, &q).max_residual >= 1e-3);
}

#[test]
fn unstructured_free_polynomial_is_recovered() {
    // Find q with x^4 + q ∈ Σ and q - x^2 + 1 = 0 coefficientwise.
    let mut prog = SosProgram::new();
    let q = prog.new_free_poly("q", &["x"], monomials_up_to(1, 0, 2));
    let x4 = poly("x^4", &["x"]);
    prog.add_sos_constraint("s", prog.poly(q).add_poly(&x4));
    prog.add_eq_constraint("fix", prog.poly(q).sub_poly(&poly("x^2 - 1", &["x"])));
    let cert = solve_program(&prog, &SolverTolerances::default()).unwrap();
    // x^4 + x^2 - 1 is negative at 0.
    assert_eq!(cert.status, SolveStatus::Infeasible);
}

fn random_poly(rng: &mut ChaCha8Rng, vars: &[&str], degree: u32) -> Poly {
    let monos = monomials_up_to(vars.len(), 0, degree);
    let mut terms = Vec::new();
    for m in monos {
        if rng.random_bool(0.7) {
            terms.push((m, rng.random_range(-1.0..1.0)));
        }
    }
    Polynomial::from_terms(vars, terms).unwrap()
}

#[test]
fn random_sums_of_cubic_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vars = ["x", "y", "z"];
    for _ in 0..5 {
        let mut p = Poly::zero(&vars);
        for _ in 0..2 {
            let q = random_poly(&mut rng, &vars, 3);
            p = &p + &(&q * &q);
        }
        let cert = sos_of(&p);
        assert_eq!(cert.status, SolveStatus::Optimal);
        assert!(cert.max_residual <= 1e-6, "{}", cert.max_residual);
        let g = &cert.grams[0];
        assert!(check_certificate(&p, &g.basis, &g.gram).max_residual <= 1e-6);
    }
}

#[test]
fn identical_inputs_give_identical_results() {
    let p = poly("x^4 - 2*x^2*y + y^2 + 0.1*x^2 + 0.3", &["x", "y"]);
    let a = sos_of(&p);
    let b = sos_of(&p);
    assert_eq!(a.status, b.status);
    assert_eq!(a.margin, b.margin);
    assert_eq!(a.grams[0].gram, b.grams[0].gram);
}

#[test]
fn scalar_bounds_are_respected() {
    // maximize c subject to 2 - c ∈ Σ and c <= 1.5.
    let mut prog = SosProgram::new();
    let c = prog.new_scalar("c", Some(0.0), Some(1.5));
    let mut e = LinExpr::constant(2.0);
    e.add_scaled(&prog.scalar(c), -1.0);
    prog.add_sos_constraint("slack", ParamPoly::from_linexpr(&["x"], e));
    prog.maximize(c);
    let cert = solve_program(&prog, &SolverTolerances::default()).unwrap();
    assert_eq!(cert.status, SolveStatus::Optimal);
    assert!((cert.scalar(c) - 1.5).abs() < 1e-6);
}

#[test]
fn block_census_follows_newton_box() {
    let mut prog = SosProgram::new();
    let s = prog.new_sos_poly("s", &["x", "w"], 2, false).unwrap();
    let p = poly("x^2*w^2 + 1", &["x", "w"]);
    prog.add_sos_constraint("c", prog.poly(s).add_poly(&p));
    let cp = compile(&prog).unwrap();
    let census = cp.census();
    assert_eq!(census[0].1, 3);
    // support spans degrees 0..4 with each exponent <= 2: basis 1, x, w, xw.
    assert_eq!(census[1].1, 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn negativity_witness_blocks_acceptance(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vars = ["x", "y"];
        let q = random_poly(&mut rng, &vars, 2);
        let mut p = &q * &q;
        // Push p below zero somewhere.
        let x0 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let dip = p.eval(&x0) + 0.05;
        p = &p - &Poly::constant(&vars, dip);
        prop_assume!(p.eval(&x0) < -1e-7);
        let cert = sos_of(&p);
        prop_assert_ne!(cert.status, SolveStatus::Optimal);
    }

    #[test]
    fn explicit_sums_of_squares_round_trip(seed in 0u64..1000, k in 1usize..=4, nv in 1usize..=3, d in 1u32..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vars = &["x", "y", "z"][..nv];
        let mut p = Poly::zero(vars);
        for _ in 0..k {
            let q = random_poly(&mut rng, vars, d);
            p = &p + &(&q * &q);
        }
        prop_assume!(!p.is_zero());
        let cert = sos_of(&p);
        prop_assert_eq!(cert.status, SolveStatus::Optimal);
        prop_assert!(cert.max_residual <= 1e-6);
    }
}
