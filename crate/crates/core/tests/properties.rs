//! Randomized invariants across the modules.

use lw_core::duality::{invert_green, invert_green_with, lw_functional, InversionOptions};
use lw_core::integrate::{fourth_moment_tensor, gibbs_moments, green_function, IntegrationSpec};
use lw_core::linalg::{rotation2, Matrix};
use lw_core::model::transform_interaction;
use lw_core::rules::{transformation_check, RuleReport};
use lw_core::series::extract_bold_series;
use lw_core::{GibbsModel, Interaction, SymMatrix};
use proptest::prelude::*;

/// `B B^T + shift I` from `n * n` entries of `B`.
fn pd_from(n: usize, entries: &[f64], shift: f64) -> SymMatrix {
    let b = Matrix::from_fn(n, n, |i, j| entries[i * n + j]);
    SymMatrix::symmetrize(&(&b * b.transpose() + Matrix::identity(n, n) * shift))
}

fn pd(n: usize, shift: f64) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-1.0..1.0_f64, n * n).prop_map(move |e| pd_from(n, &e, shift))
}

fn square(n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.5..1.5_f64, n * n).prop_map(move |e| Matrix::from_fn(n, n, |i, j| e[i * n + j]))
}

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0_f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_composes(v in pd(3, 0.2), t1 in square(3), t2 in square(3), x in point(3)) {
        let u = Interaction::coulomb(v).unwrap();
        let twice = transform_interaction(&transform_interaction(&u, &t1).unwrap(), &t2).unwrap();
        let once = transform_interaction(&u, &(&t1 * &t2)).unwrap();
        let (a, b) = (twice.eval(&x), once.eval(&x));
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn coulomb_positivity(v in pd(3, 0.1), x in point(3)) {
        // U >= lambda_min / 8 * sum x_i^4 >= lambda_min / (8 N) |x|^4
        let c = v.min_eigenvalue() / 24.0;
        let r2: f64 = x.iter().map(|t| t * t).sum();
        let u = Interaction::coulomb(v).unwrap();
        prop_assert!(u.eval(&x) >= c * r2 * r2 * (1.0 - 1e-12));
    }

    #[test]
    fn asymmetric_input_rejected(a in -1.0..1.0_f64, d in 1e-6..1.0_f64) {
        prop_assert!(SymMatrix::from_rows(&[vec![1.0, a], vec![a + d, 1.0]]).is_err());
    }

    #[test]
    fn rule_verdict_matches_gap(gap in 0.0..2.0_f64, tol in 0.0..2.0_f64) {
        let r = RuleReport::new("t", 0.0, gap, gap, tol, String::new());
        prop_assert_eq!(r.pass, gap <= tol);
    }

    #[test]
    fn fragment_invariance(seed in 0u64..1000) {
        let u = Interaction::impurity(Interaction::quartic_1d(1.0).unwrap(), vec![1], 3).unwrap();
        prop_assert!(u.verify_fragment_invariance(32, seed).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gaussian_closure(n in 1usize..=3, e in prop::collection::vec(-1.0..1.0_f64, 9)) {
        let a = pd_from(n, &e, 0.5);
        let r = green_function(&GibbsModel::gaussian(a.clone()), &IntegrationSpec::default()).unwrap();
        let gap = (&r.value - &a.inverse().unwrap()).max_abs();
        // abs_error carries a roundoff floor
        prop_assert!(gap <= 10.0 * r.abs_error, "gap {gap:e} err {:e}", r.abs_error);
    }

    #[test]
    fn wick_identity(n in 1usize..=3, e in prop::collection::vec(-1.0..1.0_f64, 9)) {
        let a = pd_from(n, &e, 0.5);
        let t = fourth_moment_tensor(&GibbsModel::gaussian(a.clone()), &IntegrationSpec::default()).unwrap();
        let g = a.inverse().unwrap();
        for [i, j, k, l] in lw_core::linalg::SymTensor4::unique_indices(n) {
            let wick = g.get(i, j) * g.get(k, l) + g.get(i, k) * g.get(j, l) + g.get(i, l) * g.get(j, k);
            prop_assert!((t.value.get(i, j, k, l) - wick).abs() <= 1e-10 * (1.0 + wick.abs()));
        }
    }

    #[test]
    fn outputs_are_symmetric(g in pd(2, 0.4), v in pd(2, 0.3), eps in 0.05..0.3_f64) {
        let ev = lw_functional(&g, &Interaction::coulomb(v).unwrap(), eps, &IntegrationSpec::default()).unwrap();
        prop_assert_eq!(ev.sigma.get(0, 1).to_bits(), ev.sigma.get(1, 0).to_bits());
        prop_assert_eq!(ev.a.get(0, 1).to_bits(), ev.a.get(1, 0).to_bits());
    }

    /// `F[G] <= 1/2 log det(2 pi e G)` for `U >= 0`, i.e. `Phi <= 0`.
    #[test]
    fn entropy_bound(g in pd(2, 0.3), v in pd(2, 0.3), eps in 0.01..0.5_f64) {
        let ev = lw_functional(&g, &Interaction::coulomb(v).unwrap(), eps, &IntegrationSpec::default()).unwrap();
        prop_assert!(ev.phi <= 10.0 * ev.error_estimate, "phi {}", ev.phi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn round_trip(n in 1usize..=2, e in prop::collection::vec(-1.0..1.0_f64, 4), w in prop::collection::vec(-1.0..1.0_f64, 4), eps in 0.05..0.3_f64) {
        let a = pd_from(n, &e, 0.5);
        let u = if n == 1 {
            Interaction::quartic_1d(0.5 + w[0].abs()).unwrap()
        } else {
            Interaction::coulomb(pd_from(2, &w, 0.3)).unwrap()
        };
        let spec = IntegrationSpec::precise();
        let g = green_function(&GibbsModel::new(a.clone(), u.clone(), eps).unwrap(), &spec).unwrap().value;
        let inv = invert_green(&g, &u, eps, &spec, 1e-10).unwrap();
        prop_assert!(inv.converged);
        prop_assert!(inv.residual_norm <= 1e-10);
        prop_assert!((&inv.a - &a).max_abs() <= 1e-5 * a.max_abs());
    }

    /// Newton from several starts lands on the same `A[G]`.
    #[test]
    fn inversion_unique(g in pd(2, 0.4), v in pd(2, 0.3)) {
        let u = Interaction::coulomb(v).unwrap();
        let spec = IntegrationSpec::precise();
        let ginv = g.inverse().unwrap();
        let mut found = Vec::new();
        for start in [None, Some(ginv.scale(1.3)), Some(&ginv + &SymMatrix::identity(2).scale(0.2))] {
            let opts = InversionOptions { newton_tol: 1e-11, initial: start, ..InversionOptions::default() };
            found.push(invert_green_with(&g, &u, 0.2, &spec, &opts).unwrap().a);
        }
        for a in &found[1..] {
            prop_assert!((a - &found[0]).max_abs() <= 1e-8);
        }
    }

    #[test]
    fn orthogonal_transform_of_radial_interaction(theta in 0.0..6.2_f64, g in pd(2, 0.4), scale in 0.3..2.0_f64) {
        // v proportional to the all-ones matrix makes U = c |x|^4 rotation invariant
        let v = SymMatrix::from_rows(&[vec![scale, scale], vec![scale, scale]]).unwrap();
        let u = Interaction::coulomb(&v + &SymMatrix::identity(2).scale(1e-3)).unwrap();
        let r = transformation_check(&g, &u, &rotation2(theta), 0.2, &IntegrationSpec::precise()).unwrap();
        prop_assert!(r.pass, "{r:?}");
    }
}

#[test]
fn gaussian_moments_carry_identity_for_zero() {
    let m = gibbs_moments(
        &GibbsModel::gaussian(SymMatrix::identity(3)),
        &IntegrationSpec::default(),
        false,
    )
    .unwrap();
    assert!((&m.second - &SymMatrix::identity(3)).max_abs() < 1e-14);
}

#[test]
fn phi_coefficients_scale_with_g() {
    let spec = IntegrationSpec::precise();
    let u = Interaction::coulomb(SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.8]]).unwrap()).unwrap();
    let g = SymMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 0.7]]).unwrap();
    let c1 = extract_bold_series(&g, &u, 2, &spec).unwrap();
    let c2 = extract_bold_series(&g.scale(2.0), &u, 2, &spec).unwrap();
    for k in 0..2 {
        let want = 4f64.powi(k as i32 + 1) * c1.phi_coeffs[k];
        let tol = c2.phi_uncertainty[k] + 4f64.powi(k as i32 + 1) * c1.phi_uncertainty[k];
        assert!(
            (c2.phi_coeffs[k] - want).abs() <= tol,
            "k={k}: {} vs {want} (tol {tol:e})",
            c2.phi_coeffs[k]
        );
    }
    for s in &c1.sigma_coeffs {
        assert_eq!(s.get(0, 1).to_bits(), s.get(1, 0).to_bits());
    }
}

#[test]
fn bold_and_bare_agree_at_first_order() {
    let spec = IntegrationSpec::precise();
    let a = SymMatrix::from_rows(&[vec![1.2, -0.2], vec![-0.2, 0.9]]).unwrap();
    let u = Interaction::coulomb(SymMatrix::from_rows(&[vec![1.0, 0.4], vec![0.4, 1.0]]).unwrap()).unwrap();
    let bold = extract_bold_series(&a.inverse().unwrap(), &u, 2, &spec).unwrap();
    let bare = lw_core::series::extract_bare_series(&a, &u, 2, &spec).unwrap();
    let gap = (&bold.sigma_coeffs[0] - &bare.sigma_coeffs[1]).max_abs();
    let tol = bold.sigma_uncertainty[0].max_abs() + 1e-3;
    assert!(gap <= tol, "gap {gap:e} tol {tol:e}");
}

#[test]
fn halving_eps0_is_stable() {
    let spec = IntegrationSpec::precise();
    let u = Interaction::quartic_1d(1.0).unwrap();
    let g = SymMatrix::scalar(1.0);
    let a = lw_core::series::extract_bold_series_at(&g, &u, 2, &spec, 1e-2).unwrap();
    let b = lw_core::series::extract_bold_series_at(&g, &u, 2, &spec, 5e-3).unwrap();
    for k in 0..2 {
        let d = (a.phi_coeffs[k] - b.phi_coeffs[k]).abs();
        assert!(d <= a.phi_uncertainty[k] + b.phi_uncertainty[k], "k={k}: {d:e}");
    }
}
