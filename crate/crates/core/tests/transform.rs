use ipc_core::constraints::{sector_constraint, verify_constraint, DeltaOperator, VW};
use ipc_core::poly::{parse, Monomial};
use ipc_core::transform::{
    check_h1_invertible, compose_constraint, quad_transform, tilde_delta, GraphMap, QuadraticForm,
};
use ipc_core::Poly;
use nalgebra::Matrix2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vw(text: &str) -> Poly {
    parse(text, &VW).unwrap()
}

fn terms(t: &[(u32, u32, f64)]) -> Poly {
    Poly::from_terms(&VW, t.iter().map(|&(i, j, c)| (Monomial::new(vec![i, j]), c))).unwrap()
}

fn example_h() -> Matrix2<f64> {
    Matrix2::new(1.0, -0.5, 1.0, -1.5)
}

fn diag_pm() -> QuadraticForm {
    QuadraticForm::new(Matrix2::new(1.0, 0.0, 0.0, -1.0)).unwrap()
}

#[test]
fn example_quadratic_transform_is_exact() {
    let (mt, p) = quad_transform(&example_h(), &diag_pm());
    assert_eq!(mt.m, Matrix2::new(0.0, 1.0, 1.0, -2.0));
    assert_eq!(p, vw("2*v*w - 2*w^2"));
    let rep = verify_constraint(&p, &DeltaOperator::tanh(), (-10.0, 10.0), 10_000);
    assert!(rep.ok, "{rep:?}");
}

#[test]
fn identity_transform_keeps_the_form() {
    let m = QuadraticForm::new(Matrix2::new(0.3, -1.2, -1.2, 2.0)).unwrap();
    let (mt, _) = quad_transform(&Matrix2::identity(), &m);
    assert_eq!(mt.m, m.m);
}

#[test]
fn composing_with_identity_is_a_no_op() {
    let psi = vw("w*(v - w)");
    assert_eq!(compose_constraint(&psi, &GraphMap::identity()).unwrap(), psi);
}

#[test]
fn composed_diag_form_matches_example() {
    let psi = vw("v^2 - w^2");
    let out = compose_constraint(&psi, &GraphMap::linear(&example_h())).unwrap();
    assert_eq!(out, vw("2*v*w - 2*w^2"));
    // Proportional to the [0, 1] sector (v - w) w.
    let sector = sector_constraint(0.0, 1.0).unwrap().p;
    assert!(out.max_coeff_diff(&sector.scale(&2.0)) < 1e-15);
}

#[test]
fn composition_commutes_with_evaluation_on_the_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let psi = vw("v^3*w - 0.4*w^2 + v*w^2 + 1.5");
    let h = GraphMap::new(vw("v - 0.5*w^3"), vw("w + 0.1*v^2")).unwrap();
    let composed = compose_constraint(&psi, &h).unwrap();
    let d = DeltaOperator::tanh();
    for _ in 0..100 {
        let x: f64 = rng.random_range(-3.0..3.0);
        let (a, b) = h.on_graph(&d, x);
        let want = psi.eval(&[a, b]);
        let got = composed.eval(&[x, d.eval(x)]);
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }
}

#[test]
fn random_quad_transform_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let h = Matrix2::from_fn(|_, _| rng.random_range(-2.0..2.0));
        let (_, p) = quad_transform(&h, &diag_pm());
        let (v, w): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let direct = (h[(0, 0)] * v + h[(0, 1)] * w).powi(2) - (h[(1, 0)] * v + h[(1, 1)] * w).powi(2);
        assert!((p.eval(&[v, w]) - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }
}

#[test]
fn invertibility_checks() {
    let d = DeltaOperator::tanh();
    let id = check_h1_invertible(&GraphMap::identity(), &d, (-5.0, 5.0), 1000);
    assert!(id.ok && id.min_derivative == 1.0);
    let ex = check_h1_invertible(&GraphMap::linear(&example_h()), &d, (-5.0, 5.0), 1000);
    // 1 - sech^2/2 lies in [1/2, 1].
    assert!(ex.ok);
    assert!((ex.min_derivative - 0.5).abs() < 1e-12 && ex.max_derivative <= 1.0);
    let bad = GraphMap::new(vw("-v + 2*w"), vw("w")).unwrap();
    let rep = check_h1_invertible(&bad, &d, (-3.0, 3.0), 1000);
    assert!(!rep.ok && rep.min_derivative < 0.0 && rep.max_derivative > 0.0);
    assert!(tilde_delta(&bad, &d, &[-1.0, 0.0, 1.0]).is_err());
}

#[test]
fn identity_tilde_delta_is_the_graph() {
    let d = DeltaOperator::tanh();
    let xs: Vec<f64> = (0..50).map(|i| 2.0 - i as f64 * 0.08).collect();
    let g = tilde_delta(&GraphMap::identity(), &d, &xs).unwrap();
    for w in g.windows(2) {
        assert!(w[0].0 < w[1].0);
    }
    for (v, w) in g {
        assert_eq!(w, v.tanh());
    }
}

#[test]
fn example_tilde_delta_is_in_the_unit_sector() {
    let d = DeltaOperator::tanh();
    let h = GraphMap::linear(&example_h());
    let xs: Vec<f64> = (0..=4000).map(|i| -20.0 + i as f64 * 0.01).collect();
    for (v, w) in tilde_delta(&h, &d, &xs).unwrap() {
        assert!(v * v - w * w >= -1e-9);
    }
}

#[test]
fn tilde_delta_agrees_with_bisection_inversion() {
    let d = DeltaOperator::tanh();
    let h = GraphMap::linear(&example_h());
    let xs: Vec<f64> = (0..=20_000).map(|i| -4.0 + i as f64 * 4e-4).collect();
    let g = tilde_delta(&h, &d, &xs).unwrap();
    let h1 = |x: f64| h.on_graph(&d, x).0;
    for k in 0..20 {
        let target = -2.0 + 0.2 * k as f64 + 0.013;
        let (mut a, mut b) = (-4.0, 4.0);
        while b - a > 1e-12 {
            let m = 0.5 * (a + b);
            if h1(m) < target {
                a = m;
            } else {
                b = m;
            }
        }
        let exact = h.on_graph(&d, 0.5 * (a + b)).1;
        let i = g.partition_point(|p| p.0 < target);
        let (p, q) = (g[i - 1], g[i]);
        let interp = p.1 + (q.1 - p.1) * (target - p.0) / (q.0 - p.0);
        assert!((interp - exact).abs() <= 1e-6, "{target}: {interp} vs {exact}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn transformed_form_is_symmetric_bilinear_expansion(
        h in prop::array::uniform4(-3.0f64..3.0),
        m in prop::array::uniform3(-3.0f64..3.0),
    ) {
        let h = Matrix2::new(h[0], h[1], h[2], h[3]);
        let q = QuadraticForm::new(Matrix2::new(m[0], m[1], m[1], m[2])).unwrap();
        let (mt, p) = quad_transform(&h, &q);
        prop_assert_eq!(mt.m[(0, 1)], mt.m[(1, 0)]);
        prop_assert_eq!(p, mt.polynomial());
    }

    #[test]
    fn invertible_maps_give_monotone_samples(a in 0.6f64..2.0, b in -0.5f64..0.5) {
        let d = DeltaOperator::tanh();
        let h = GraphMap::new(terms(&[(1, 0, a), (0, 1, b)]), vw("w")).unwrap();
        let xs: Vec<f64> = (0..200).map(|i| -5.0 + i as f64 * 0.05).collect();
        if check_h1_invertible(&h, &d, (-5.0, 5.0), 1000).ok {
            let g = tilde_delta(&h, &d, &xs).unwrap();
            prop_assert!(g.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }

    #[test]
    fn composition_is_sound_on_the_sampled_graph(a in 0.0f64..2.0, b in -1.0f64..1.0) {
        let d = DeltaOperator::tanh();
        let h = GraphMap::linear(&example_h());
        let psi = terms(&[(2, 0, a), (1, 1, b), (0, 2, -1.0)]);
        let xs: Vec<f64> = (0..400).map(|i| -8.0 + i as f64 * 0.04).collect();
        let samples = tilde_delta(&h, &d, &xs).unwrap();
        if samples.iter().all(|&(v, w)| psi.eval(&[v, w]) >= 0.0) {
            let composed = compose_constraint(&psi, &h).unwrap();
            for &x in &xs {
                prop_assert!(composed.eval(&[x, d.eval(x)]) >= -1e-9);
            }
        }
    }
}
