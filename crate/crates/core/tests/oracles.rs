//! Library values against independent Simpson oracles. Each frozen
//! constant was produced by the oracle in `common` and is re-derived here.

mod common;

use lw_core::duality::{invert_green, lw_functional, variational_check};
use lw_core::dyson::dyson_consistency;
use lw_core::integrate::{fourth_moment_tensor, gibbs_moments, green_function, IntegrationSpec};
use lw_core::rules::extension_limit;
use lw_core::series::extract_bare_series;
use lw_core::{GibbsModel, Interaction, SymMatrix};

const FOURTH_A1_C05: f64 = 1.238_964_014_824_734;
const DOUBLE_WELL_G: f64 = 1.786_929_939_148_429;
const OMEGA_A1_C03: f64 = -0.840_757_736_673_256;
const PHI1_G1_C02: f64 = -0.139_715_451_414_124;

fn quartic_model(a: f64, lambda: f64, eps: f64) -> GibbsModel {
    GibbsModel::new(SymMatrix::scalar(a), Interaction::quartic_1d(lambda).unwrap(), eps).unwrap()
}

#[test]
fn frozen_constants_match_oracle() {
    assert!((common::moments(1.0, 0.5).2 - FOURTH_A1_C05).abs() < 1e-12);
    assert!((common::moments(-1.0, 1.0).1 - DOUBLE_WELL_G).abs() < 1e-12);
    assert!((-common::moments(1.0, 0.3).0.ln() - OMEGA_A1_C03).abs() < 1e-12);
    assert!((common::phi_1d(1.0, 1.0, 0.2) - PHI1_G1_C02).abs() < 1e-10);
}

#[test]
fn fourth_moment_quartic() {
    let t = fourth_moment_tensor(&quartic_model(1.0, 1.0, 0.5), &IntegrationSpec::precise()).unwrap();
    assert!((t.value.get(0, 0, 0, 0) - FOURTH_A1_C05).abs() < 1e-9);
}

#[test]
fn double_well_green() {
    let g = green_function(&quartic_model(-1.0, 1.0, 1.0), &IntegrationSpec::precise()).unwrap();
    assert!((g.value.get(0, 0) - DOUBLE_WELL_G).abs() < 1e-9);
    assert!(g.abs_error < 1e-8);
}

#[test]
fn double_well_small_lambda() {
    let (_, m2, _) = common::moments(-1.0, 0.01);
    let m = gibbs_moments(&quartic_model(-1.0, 0.01, 1.0), &IntegrationSpec::default(), false).unwrap();
    assert!((0.01 * m.second.get(0, 0) - 0.01 * m2).abs() < 1e-7);
}

#[test]
fn variational_equality_quartic() {
    let r = variational_check(
        &SymMatrix::scalar(1.0),
        &Interaction::quartic_1d(1.0).unwrap(),
        0.3,
        &IntegrationSpec::precise(),
        4,
        7,
    )
    .unwrap();
    assert!((r.omega - OMEGA_A1_C03).abs() < 1e-10);
    assert!((r.objective_at_minimizer - OMEGA_A1_C03).abs() < 1e-8);
    assert!(r.pass, "{r:?}");
}

#[test]
fn phi_1d_matches_oracle() {
    let ev = lw_functional(
        &SymMatrix::scalar(1.0),
        &Interaction::quartic_1d(1.0).unwrap(),
        0.2,
        &IntegrationSpec::precise(),
    )
    .unwrap();
    assert!((ev.phi - PHI1_G1_C02).abs() < 1e-9);
}

#[test]
fn inversion_matches_bisection() {
    let g = 0.8;
    let c = 0.25;
    let a = common::invert_1d(g, c);
    let inv = invert_green(
        &SymMatrix::scalar(g),
        &Interaction::quartic_1d(1.0).unwrap(),
        c,
        &IntegrationSpec::precise(),
        1e-12,
    )
    .unwrap();
    assert!((inv.a.get(0, 0) - a).abs() < 1e-9);
}

#[test]
fn extension_rhs_is_one_dimensional_phi() {
    let r = extension_limit(
        &SymMatrix::scalar(1.0),
        &Interaction::coulomb(SymMatrix::identity(2)).unwrap(),
        &[0.2, 0.1, 0.05, 0.025],
        0.2,
        &IntegrationSpec::precise(),
        1e-2,
    )
    .unwrap();
    assert!((r.target - PHI1_G1_C02).abs() < 1e-9);
    assert!(r.pass);
}

#[test]
fn extension_three_to_two() {
    let gp = SymMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 0.8]]).unwrap();
    let r = extension_limit(
        &gp,
        &Interaction::coulomb(SymMatrix::identity(3)).unwrap(),
        &[0.2, 0.1, 0.05, 0.025],
        0.2,
        &IntegrationSpec::precise(),
        1e-2,
    )
    .unwrap();
    assert!(r.sequence.iter().all(|(_, phi, _)| phi.is_finite()));
    assert!(r.pass, "{r:?}");
}

#[test]
fn bare_first_order_richardson() {
    // (G(h) - 1) / h with one Richardson step
    let d = |h: f64| (common::moments(1.0, h).1 - 1.0) / h;
    let oracle = 2.0 * d(5e-4) - d(1e-3);
    assert!((oracle + 1.5).abs() < 1e-3);
    let u = Interaction::quartic_1d(1.0).unwrap();
    let s = extract_bare_series(&SymMatrix::scalar(1.0), &u, 2, &IntegrationSpec::precise()).unwrap();
    let g1 = s.g_coeffs[1].get(0, 0);
    assert!((g1 - oracle).abs() < 1e-3, "{g1} vs {oracle}");
    // degree-3 homogeneity in A^-1
    let s2 = extract_bare_series(&SymMatrix::scalar(2.0), &u, 2, &IntegrationSpec::precise()).unwrap();
    let g1_2 = s2.g_coeffs[1].get(0, 0);
    assert!(
        (g1_2 - g1 / 8.0).abs() < 1e-4 + s.g_uncertainty[1].get(0, 0),
        "{g1_2} vs {}",
        g1 / 8.0
    );
}

#[test]
fn dyson_consistency_examples() {
    let spec = IntegrationSpec::precise();
    let r = dyson_consistency(
        &SymMatrix::scalar(1.0),
        0.3,
        &Interaction::quartic_1d(1.0).unwrap(),
        &spec,
    )
    .unwrap();
    assert!(r.pass, "{r:?}");
    let r = dyson_consistency(
        &SymMatrix::identity(2),
        0.2,
        &Interaction::coulomb(SymMatrix::identity(2)).unwrap(),
        &spec,
    )
    .unwrap();
    assert!(r.pass, "{r:?}");
    let r = dyson_consistency(&SymMatrix::identity(2), 0.2, &Interaction::zero(2), &spec).unwrap();
    assert!(r.abs_gap < 1e-14);
}
