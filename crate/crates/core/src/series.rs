//! Coupling-series coefficients from samples on a geometric grid.
//!
//! Bold coefficients are fitted at fixed `G` from `Phi_G(eps)` and
//! `Sigma_G(eps)`; bare coefficients at fixed `A` from `G_A(eps)`. Fits are
//! least squares in `eps / eps0` with one extra nuisance order so that the
//! first omitted term does not bias the reported ones.

use rayon::prelude::*;
use serde::Serialize;

use crate::duality::{lw_functional_with, InversionOptions};
use crate::error::{LwError, Result};
use crate::integrate::{gibbs_moments, IntegrationSpec};
use crate::linalg::{least_squares, SymMatrix};
use crate::model::{GibbsModel, Interaction, InteractionKind};

pub const EPS0: f64 = 1e-2;
pub const MAX_ORDER: usize = 3;
/// Newton tolerance for each sample; coefficients of order `k` are read
/// off at the scale `eps^k`, so the samples must be far below it.
pub const SAMPLE_NEWTON_TOL: f64 = 1e-12;

/// `eps_m = eps0 / 2^m` for `m = 0..=order+2`.
pub fn eps_grid(order: usize, eps0: f64) -> Vec<f64> {
    (0..order + 3).map(|m| eps0 / 2f64.powi(m as i32)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesCoefficients {
    pub order: usize,
    /// `Phi^(1) .. Phi^(M)`.
    pub phi_coeffs: Vec<f64>,
    /// `Sigma^(1) .. Sigma^(M)`.
    pub sigma_coeffs: Vec<SymMatrix>,
    pub phi_uncertainty: Vec<f64>,
    /// Largest entrywise uncertainty of each `Sigma^(k)`.
    pub sigma_uncertainty: Vec<SymMatrix>,
    /// Largest absolute deviation of any sample from its fitted curve.
    pub fit_residual: f64,
    pub tolerance: f64,
    pub trusted: bool,
    pub eps_grid: Vec<f64>,
    pub phi_samples: Vec<f64>,
    pub sigma_samples: Vec<SymMatrix>,
}

/// One scalar polynomial fit with its diagnostics.
struct ScalarFit {
    coeffs: Vec<f64>,
    uncertainty: Vec<f64>,
    residual: f64,
    tolerance: f64,
}

/// Fits `y = sum_{k=lo}^{hi} c_k eps^k`. Uncertainties are twice the change
/// on dropping the largest `eps` (a Richardson-style bound on the remaining
/// truncation bias) plus propagated sample noise; the tolerance
/// on residuals adds the size of the highest fitted term at `eps0`.
fn fit_powers(eps: &[f64], y: &[f64], noise: f64, lo: usize, hi: usize) -> Result<ScalarFit> {
    let eps0 = eps[0];
    let solve = |rows: &[usize]| -> Result<Vec<f64>> {
        let a = nalgebra::DMatrix::from_fn(rows.len(), hi - lo + 1, |r, c| {
            (eps[rows[r]] / eps0).powi((lo + c) as i32)
        });
        let b: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
        let sol = least_squares(&a, &b).ok_or(LwError::ExtractionUnstable {
            residual: f64::NAN,
            tolerance: 0.0,
        })?;
        Ok(sol
            .iter()
            .enumerate()
            .map(|(c, v)| v / eps0.powi((lo + c) as i32))
            .collect())
    };
    let all: Vec<usize> = (0..eps.len()).collect();
    let coeffs = solve(&all)?;
    let reduced = solve(&all[1..])?;
    let eval = |c: &[f64], e: f64| {
        c.iter()
            .enumerate()
            .map(|(k, v)| v * e.powi((lo + k) as i32))
            .sum::<f64>()
    };
    let residual = eps
        .iter()
        .zip(y)
        .map(|(&e, &v)| (v - eval(&coeffs, e)).abs())
        .fold(0.0, f64::max);
    let smallest = *eps.last().unwrap();
    let uncertainty = coeffs
        .iter()
        .zip(&reduced)
        .enumerate()
        .map(|(k, (a, b))| 2.0 * (a - b).abs() + noise / smallest.powi((lo + k) as i32))
        .collect::<Vec<_>>();
    let top = coeffs.last().map_or(0.0, |c| c.abs() * eps0.powi(hi as i32));
    Ok(ScalarFit {
        coeffs,
        uncertainty,
        residual,
        tolerance: 10.0 * noise + top + 1e-14,
    })
}

/// Bold coefficients at fixed `G` up to order `M <= 3`.
pub fn extract_bold_series(
    g: &SymMatrix,
    u: &Interaction,
    order: usize,
    spec: &IntegrationSpec,
) -> Result<SeriesCoefficients> {
    extract_bold_series_at(g, u, order, spec, EPS0)
}

pub fn extract_bold_series_at(
    g: &SymMatrix,
    u: &Interaction,
    order: usize,
    spec: &IntegrationSpec,
    eps0: f64,
) -> Result<SeriesCoefficients> {
    if order == 0 || order > MAX_ORDER {
        return Err(LwError::InvalidInput(format!(
            "series order must be in 1..={MAX_ORDER}, got {order}"
        )));
    }
    g.require_positive_definite("G")?;
    let n = g.dim();
    let grid = eps_grid(order, eps0);
    if u.is_zero() {
        let zeros = vec![SymMatrix::zeros(n); order];
        return Ok(SeriesCoefficients {
            order,
            phi_coeffs: vec![0.0; order],
            sigma_coeffs: zeros.clone(),
            phi_uncertainty: vec![0.0; order],
            sigma_uncertainty: zeros,
            fit_residual: 0.0,
            tolerance: 0.0,
            trusted: true,
            phi_samples: vec![0.0; grid.len()],
            sigma_samples: vec![SymMatrix::zeros(n); grid.len()],
            eps_grid: grid,
        });
    }
    let opts = InversionOptions::with_tol(SAMPLE_NEWTON_TOL);
    let samples: Vec<_> = grid
        .par_iter()
        .map(|&e| lw_functional_with(g, u, e, spec, &opts))
        .collect::<Result<Vec<_>>>()?;
    let phi: Vec<f64> = samples.iter().map(|s| s.phi).collect();
    let phi_noise = samples.iter().map(|s| s.error_estimate).fold(0.0, f64::max);
    let ginv_scale = g.inverse()?.max_abs().powi(2);
    let sigma_noise = samples
        .iter()
        .map(|s| s.newton_residual * ginv_scale + 1e-15 * s.a.max_abs())
        .fold(0.0, f64::max);
    let hi = order + 1;
    let pf = fit_powers(&grid, &phi, phi_noise, 1, hi)?;
    let mut fit_residual = pf.residual;
    let mut tolerance = pf.tolerance;
    let mut sigma_coeffs = vec![SymMatrix::zeros(n); order];
    let mut sigma_uncertainty = vec![SymMatrix::zeros(n); order];
    for (i, j) in SymMatrix::packed_indices(n) {
        let ys: Vec<f64> = samples.iter().map(|s| s.sigma.get(i, j)).collect();
        let sf = fit_powers(&grid, &ys, sigma_noise, 1, hi)?;
        fit_residual = fit_residual.max(sf.residual);
        tolerance = tolerance.max(sf.tolerance);
        for k in 0..order {
            sigma_coeffs[k].set(i, j, sf.coeffs[k]);
            sigma_uncertainty[k].set(i, j, sf.uncertainty[k]);
        }
    }
    Ok(SeriesCoefficients {
        order,
        phi_coeffs: pf.coeffs[..order].to_vec(),
        sigma_coeffs,
        phi_uncertainty: pf.uncertainty[..order].to_vec(),
        sigma_uncertainty,
        fit_residual,
        tolerance,
        trusted: fit_residual <= tolerance,
        eps_grid: grid,
        phi_samples: phi,
        sigma_samples: samples.into_iter().map(|s| s.sigma).collect(),
    })
}

/// Like [`extract_bold_series`] but fails with `ExtractionUnstable` when
/// the fit is not trusted.
pub fn extract_bold_series_strict(
    g: &SymMatrix,
    u: &Interaction,
    order: usize,
    spec: &IntegrationSpec,
) -> Result<SeriesCoefficients> {
    let c = extract_bold_series(g, u, order, spec)?;
    if !c.trusted {
        return Err(LwError::ExtractionUnstable {
            residual: c.fit_residual,
            tolerance: c.tolerance,
        });
    }
    Ok(c)
}

/// Coupling matrix `v` of a homogeneous quartic interaction.
pub fn coulomb_matrix(u: &Interaction) -> Option<SymMatrix> {
    match u.kind() {
        InteractionKind::GeneralizedCoulomb { v } => Some(v.clone()),
        InteractionKind::Quartic1D { lambda } => Some(SymMatrix::scalar(*lambda)),
        _ => None,
    }
}

/// First-order bold self-energy of `U = 1/8 sum v_ij x_i^2 x_j^2`:
/// `Sigma_ij = -1/2 delta_ij sum_k v_ik G_kk - v_ij G_ij`.
pub fn closed_form_sigma1(g: &SymMatrix, v: &SymMatrix) -> Result<SymMatrix> {
    if g.dim() != v.dim() {
        return Err(LwError::DimensionMismatch {
            expected: v.dim(),
            found: g.dim(),
        });
    }
    g.require_positive_definite("G")?;
    v.require_positive_definite("v")?;
    let n = g.dim();
    Ok(SymMatrix::from_fn(n, |i, j| {
        let hartree = if i == j {
            -0.5 * (0..n).map(|k| v.get(i, k) * g.get(k, k)).sum::<f64>()
        } else {
            0.0
        };
        hartree - v.get(i, j) * g.get(i, j)
    }))
}

/// Second-order bold self-energy in one dimension, `(3/2) lambda^2 g^3`.
pub fn closed_form_sigma2_1d(g: f64, lambda: f64) -> f64 {
    1.5 * lambda * lambda * g.powi(3)
}

#[derive(Debug, Clone, Serialize)]
pub struct RelationRow {
    pub k: usize,
    pub phi_k: f64,
    /// `(1/2k) Tr[G Sigma^(k)]`.
    pub rhs: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RelationReport {
    pub rows: Vec<RelationRow>,
    pub pass: bool,
}

/// Tests `Phi^(k) = (1/2k) Tr[G Sigma^(k)]` for every extracted order.
pub fn check_coefficient_relation(coeffs: &SeriesCoefficients, g: &SymMatrix) -> RelationReport {
    let n = g.dim();
    let rows: Vec<RelationRow> = (0..coeffs.order)
        .map(|idx| {
            let k = idx + 1;
            let s = &coeffs.sigma_coeffs[idx];
            let su = &coeffs.sigma_uncertainty[idx];
            let w = 1.0 / (2.0 * k as f64);
            let rhs = w * (g.as_matrix() * s.as_matrix()).trace();
            let mut rhs_unc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    rhs_unc += (g.get(i, j) * su.get(i, j)).abs();
                }
            }
            let tolerance = coeffs.phi_uncertainty[idx] + w * rhs_unc + 1e-12;
            let gap = (coeffs.phi_coeffs[idx] - rhs).abs();
            RelationRow {
                k,
                phi_k: coeffs.phi_coeffs[idx],
                rhs,
                gap,
                tolerance,
                pass: gap <= tolerance,
            }
        })
        .collect();
    let pass = rows.iter().all(|r| r.pass);
    RelationReport { rows, pass }
}

#[derive(Debug, Clone, Serialize)]
pub struct BareSeries {
    pub order: usize,
    /// `g^(0) .. g^(M)`.
    pub g_coeffs: Vec<SymMatrix>,
    /// `sigma^(0) .. sigma^(M)` with `sigma(eps) = A - G_A(eps)^-1`.
    pub sigma_coeffs: Vec<SymMatrix>,
    pub g_uncertainty: Vec<SymMatrix>,
    pub fit_residual: f64,
    pub tolerance: f64,
    pub trusted: bool,
    pub eps_grid: Vec<f64>,
}

/// Bare coefficients of `G_A(eps)` and `sigma_A(eps)` at fixed `A`.
pub fn extract_bare_series(a: &SymMatrix, u: &Interaction, order: usize, spec: &IntegrationSpec) -> Result<BareSeries> {
    if order == 0 || order > MAX_ORDER {
        return Err(LwError::InvalidInput(format!(
            "series order must be in 1..={MAX_ORDER}, got {order}"
        )));
    }
    a.require_positive_definite("A")?;
    let n = a.dim();
    let grid = eps_grid(order, EPS0);
    let samples: Vec<_> = grid
        .par_iter()
        .map(|&e| gibbs_moments(&GibbsModel::new(a.clone(), u.clone(), e)?, spec, false))
        .collect::<Result<Vec<_>>>()?;
    let noise = samples.iter().map(|s| s.second_err).fold(0.0, f64::max);
    let a_scale = a.max_abs().powi(2);
    let sig: Vec<SymMatrix> = samples
        .iter()
        .map(|s| Ok(a - &s.second.inverse()?))
        .collect::<Result<Vec<_>>>()?;
    let hi = order + 1;
    let mut g_coeffs = vec![SymMatrix::zeros(n); order + 1];
    let mut g_unc = vec![SymMatrix::zeros(n); order + 1];
    let mut sigma_coeffs = vec![SymMatrix::zeros(n); order + 1];
    let mut fit_residual: f64 = 0.0;
    let mut tolerance: f64 = 0.0;
    for (i, j) in SymMatrix::packed_indices(n) {
        let ys: Vec<f64> = samples.iter().map(|s| s.second.get(i, j)).collect();
        let gf = fit_powers(&grid, &ys, noise, 0, hi)?;
        let ss: Vec<f64> = sig.iter().map(|s| s.get(i, j)).collect();
        let sf = fit_powers(&grid, &ss, noise * a_scale, 0, hi)?;
        fit_residual = fit_residual.max(gf.residual).max(sf.residual);
        tolerance = tolerance.max(gf.tolerance).max(sf.tolerance);
        for k in 0..=order {
            g_coeffs[k].set(i, j, gf.coeffs[k]);
            g_unc[k].set(i, j, gf.uncertainty[k]);
            sigma_coeffs[k].set(i, j, sf.coeffs[k]);
        }
    }
    Ok(BareSeries {
        order,
        g_coeffs,
        sigma_coeffs,
        g_uncertainty: g_unc,
        fit_residual,
        tolerance,
        trusted: fit_residual <= tolerance,
        eps_grid: grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quartic() -> Interaction {
        Interaction::quartic_1d(1.0).unwrap()
    }

    #[test]
    fn grid_is_geometric() {
        assert_eq!(eps_grid(2, 1e-2), vec![1e-2, 5e-3, 2.5e-3, 1.25e-3, 6.25e-4]);
    }

    #[test]
    fn fitter_recovers_polynomial() {
        let eps = eps_grid(2, 1e-2);
        let y: Vec<f64> = eps.iter().map(|e| -1.5 * e + 1.5 * e * e - 4.0 * e.powi(3)).collect();
        let f = fit_powers(&eps, &y, 1e-16, 1, 3).unwrap();
        assert!((f.coeffs[0] + 1.5).abs() < 1e-9);
        assert!((f.coeffs[1] - 1.5).abs() < 1e-6);
        assert!(f.residual <= f.tolerance);
    }

    #[test]
    fn zero_interaction_gives_zero_coefficients() {
        let c = extract_bold_series(
            &SymMatrix::identity(2),
            &Interaction::zero(2),
            2,
            &IntegrationSpec::precise(),
        )
        .unwrap();
        assert!(c.phi_coeffs.iter().all(|v| *v == 0.0));
        assert!(c.sigma_coeffs.iter().all(|s| s.max_abs() == 0.0));
    }

    #[test]
    fn closed_form_examples() {
        let s = closed_form_sigma1(&SymMatrix::scalar(2.0), &SymMatrix::scalar(0.7)).unwrap();
        assert!((s.get(0, 0) + 1.5 * 0.7 * 2.0).abs() < 1e-15);
        let s = closed_form_sigma1(&SymMatrix::diag(&[1.0, 2.0]), &SymMatrix::identity(2)).unwrap();
        assert_eq!(s, SymMatrix::diag(&[-1.5, -3.0]));
        let g = SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 2.0]]).unwrap();
        let a = closed_form_sigma1(&g, &SymMatrix::identity(2).scale(1e-3)).unwrap();
        let b = closed_form_sigma1(&g, &SymMatrix::identity(2).scale(2e-3)).unwrap();
        assert!((&b - &a.scale(2.0)).max_abs() < 1e-17);
    }

    #[test]
    fn bold_anchor_at_g_two() {
        let c = extract_bold_series(&SymMatrix::scalar(2.0), &quartic(), 2, &IntegrationSpec::precise()).unwrap();
        assert!(c.trusted, "{c:?}");
        assert!((c.sigma_coeffs[0].get(0, 0) + 3.0).abs() < 0.03);
        assert!((c.sigma_coeffs[1].get(0, 0) - 12.0).abs() < 0.6);
        assert!(check_coefficient_relation(&c, &SymMatrix::scalar(2.0)).pass);
    }

    #[test]
    fn bare_first_order_and_homogeneity() {
        let spec = IntegrationSpec::precise();
        let b1 = extract_bare_series(&SymMatrix::scalar(1.0), &quartic(), 2, &spec).unwrap();
        assert!(b1.trusted);
        let u0 = b1.g_uncertainty[0].get(0, 0);
        assert!(
            (b1.g_coeffs[0].get(0, 0) - 1.0).abs() <= 2.0 * u0 && u0 < 1e-7,
            "{b1:?}"
        );
        assert!(b1.sigma_coeffs[0].max_abs() < 1e-7);
        assert!((b1.g_coeffs[1].get(0, 0) + 1.5).abs() < 1e-4);
        let b2 = extract_bare_series(&SymMatrix::scalar(2.0), &quartic(), 2, &spec).unwrap();
        assert!((b2.g_coeffs[1].get(0, 0) - b1.g_coeffs[1].get(0, 0) / 8.0).abs() < 1e-4);
    }
}
