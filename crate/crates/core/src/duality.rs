//! The `A <-> G` correspondence and the functionals built on it.
//!
//! `invert_green` finds the quadratic form whose Gibbs measure has a
//! prescribed second moment. `F`, `Phi` and `Sigma` are then evaluated
//! through the dual:
//!
//! ```text
//! F[G]     = 1/2 Tr[A G] - Omega[A],        A = A[G]
//! Phi[G]   = 2 F[G] - log det G - N log(2 pi e)
//! Sigma[G] = A[G] - G^-1
//! ```

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{LwError, Result};
use crate::integrate::{gibbs_moments, GibbsMoments, IntegrationSpec};
use crate::linalg::{solve_dense, SymMatrix};
use crate::model::{domain_certificate, DomainVerdict, GibbsModel, Interaction};

pub const DEFAULT_NEWTON_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone)]
pub struct InversionOptions {
    pub newton_tol: f64,
    pub max_iter: usize,
    /// Starting point; `G^-1` when absent.
    pub initial: Option<SymMatrix>,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            newton_tol: DEFAULT_NEWTON_TOL,
            max_iter: DEFAULT_MAX_ITER,
            initial: None,
        }
    }
}

impl InversionOptions {
    pub fn with_tol(newton_tol: f64) -> Self {
        Self {
            newton_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct InversionResult {
    pub a: SymMatrix,
    /// `max |G[A] - G_target|`, from the integration at the returned `A`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Integration output at the returned `A`.
    pub moments: GibbsMoments,
}

/// Accepts `A` as a Newton iterate only with an analytic domain certificate.
fn admissible(model: &GibbsModel) -> bool {
    match domain_certificate(model) {
        Some(DomainVerdict::Inside) => true,
        Some(_) => false,
        None => model.a.is_positive_definite(),
    }
}

fn check_target(g: &SymMatrix, u: &Interaction) -> Result<()> {
    if g.dim() != u.dim() {
        return Err(LwError::DimensionMismatch {
            expected: u.dim(),
            found: g.dim(),
        });
    }
    g.require_positive_definite("G")
}

/// `dG_ij / da_kl` over packed upper-triangle coordinates, where `a_kl`
/// sets both `A_kl` and `A_lk`.
pub fn green_jacobian(m: &GibbsMoments) -> nalgebra::DMatrix<f64> {
    let n = m.second.dim();
    let four = m.fourth.as_ref().expect("Jacobian needs fourth moments");
    let idx = SymMatrix::packed_indices(n);
    let p = idx.len();
    nalgebra::DMatrix::from_fn(p, p, |r, c| {
        let (i, j) = idx[r];
        let (k, l) = idx[c];
        let weight = if k == l { 0.5 } else { 1.0 };
        -weight * (four.get(i, j, k, l) - m.second.get(i, j) * m.second.get(k, l))
    })
}

/// Newton solve of `G[A, eps U] = g_target`.
pub fn invert_green(
    g_target: &SymMatrix,
    u: &Interaction,
    eps: f64,
    spec: &IntegrationSpec,
    newton_tol: f64,
) -> Result<InversionResult> {
    invert_green_with(g_target, u, eps, spec, &InversionOptions::with_tol(newton_tol))
}

pub fn invert_green_with(
    g_target: &SymMatrix,
    u: &Interaction,
    eps: f64,
    spec: &IntegrationSpec,
    opts: &InversionOptions,
) -> Result<InversionResult> {
    check_target(g_target, u)?;
    let n = g_target.dim();
    let a0 = match &opts.initial {
        Some(a) => a.clone(),
        None => g_target.inverse()?,
    };
    let model = GibbsModel::new(a0, u.clone(), eps)?;
    if model.is_gaussian() {
        let a = g_target.inverse()?;
        let moments = gibbs_moments(&model.with_a(a.clone()), spec, false)?;
        let residual_norm = (&moments.second - g_target).max_abs();
        return Ok(InversionResult {
            a,
            residual_norm,
            iterations: 0,
            converged: residual_norm <= opts.newton_tol.max(1e-13 * g_target.max_abs()),
            moments,
        });
    }
    let mut current = model;
    if !admissible(&current) {
        return Err(LwError::LeftDomain);
    }
    let mut moments = gibbs_moments(&current, spec, true)?;
    let mut residual = (&moments.second - g_target).max_abs();
    for iter in 0..opts.max_iter {
        if residual <= opts.newton_tol {
            return Ok(InversionResult {
                a: current.a,
                residual_norm: residual,
                iterations: iter,
                converged: true,
                moments,
            });
        }
        let jac = green_jacobian(&moments);
        let r: Vec<f64> = (&moments.second - g_target).pack().iter().map(|v| -v).collect();
        let step = solve_dense(&jac, &r).ok_or(LwError::NoConvergence {
            iterations: iter,
            residual,
        })?;
        let step = SymMatrix::unpack(n, &step);
        let mut t = 1.0;
        let mut accepted = None;
        let mut any_inside = false;
        for _ in 0..MAX_HALVINGS {
            let trial = current.with_a(&current.a + &step.scale(t));
            if admissible(&trial) {
                any_inside = true;
                if let Ok(m) = gibbs_moments(&trial, spec, true) {
                    let res = (&m.second - g_target).max_abs();
                    if res < residual {
                        accepted = Some((trial, m, res));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((model, m, res)) => {
                current = model;
                moments = m;
                residual = res;
            }
            None if !any_inside => return Err(LwError::LeftDomain),
            None => {
                return Err(LwError::NoConvergence {
                    iterations: iter,
                    residual,
                })
            }
        }
    }
    if residual <= opts.newton_tol {
        return Ok(InversionResult {
            a: current.a,
            residual_norm: residual,
            iterations: opts.max_iter,
            converged: true,
            moments,
        });
    }
    Err(LwError::NoConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LwEvaluation {
    pub phi: f64,
    /// Concave conjugate `F[G]`.
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "A")]
    pub a: SymMatrix,
    pub sigma: SymMatrix,
    pub error_estimate: f64,
    /// Entrywise error bound for `sigma` from the Newton residual and the
    /// integration error of `G[A]`.
    pub sigma_error: f64,
    pub newton_residual: f64,
    pub newton_iterations: usize,
    pub method: String,
    pub n_evals: u64,
}

/// `mu - 1 - ln mu` without cancellation near `mu = 1`.
fn entropy_gap(mu: f64) -> f64 {
    let d = mu - 1.0;
    d - d.ln_1p()
}

fn evaluate(g: &SymMatrix, inv: InversionResult) -> Result<LwEvaluation> {
    let n = g.dim() as f64;
    let a = inv.a;
    let m = &inv.moments;
    let half_tr = 0.5 * (a.as_matrix() * g.as_matrix()).trace();
    let log_det_g = g.log_det()?;
    let (phi, f) = match (m.log_gauss_ratio, a.cholesky()) {
        (Some(log_s), Some(_)) => {
            // Phi = sum(mu - 1 - ln mu) + 2 log S, mu = eig(L_G^T A L_G)
            let lg = g.cholesky().expect("G checked positive definite");
            let c = SymMatrix::symmetrize(&(lg.transpose() * a.as_matrix() * &lg));
            let phi = c.eigenvalues().into_iter().map(entropy_gap).sum::<f64>() + 2.0 * log_s;
            (phi, 0.5 * (phi + log_det_g + n * (2.0 * PI).ln() + n))
        }
        _ => {
            let f = half_tr + m.log_z;
            (2.0 * f - log_det_g - n * (2.0 * PI).ln() - n, f)
        }
    };
    let ginv = g.inverse()?;
    let sigma = &a - &ginv;
    let round = 16.0 * f64::EPSILON * (a.max_abs() + ginv.max_abs());
    let sigma_error = match &m.fourth {
        Some(_) => {
            let jinv = green_jacobian(m).try_inverse();
            let norm = jinv.map_or(f64::INFINITY, |j| j.abs().row_sum().max());
            norm * (inv.residual_norm + m.second_err) + round
        }
        None => round,
    };
    // the dual value is stationary in A, so the Newton residual enters squared
    let a_err = inv.residual_norm * ginv.max_abs().powi(2);
    let error_estimate = 2.0 * m.log_z_err
        + 2.0 * inv.residual_norm * a_err
        + 8.0 * f64::EPSILON * (1.0 + half_tr.abs() + log_det_g.abs());
    Ok(LwEvaluation {
        phi,
        f,
        a,
        sigma,
        error_estimate,
        sigma_error,
        newton_residual: inv.residual_norm,
        newton_iterations: inv.iterations,
        method: m.method.to_string(),
        n_evals: m.n_evals,
    })
}

pub fn lw_functional(g: &SymMatrix, u: &Interaction, eps: f64, spec: &IntegrationSpec) -> Result<LwEvaluation> {
    lw_functional_with(g, u, eps, spec, &InversionOptions::default())
}

pub fn lw_functional_with(
    g: &SymMatrix,
    u: &Interaction,
    eps: f64,
    spec: &IntegrationSpec,
    opts: &InversionOptions,
) -> Result<LwEvaluation> {
    check_target(g, u)?;
    let inv = invert_green_with(g, u, eps, spec, opts)?;
    evaluate(g, inv)
}

/// `F[G] = 1/2 Tr[A G] - Omega[A]` at `A = A[G]`.
pub fn script_f(g: &SymMatrix, u: &Interaction, eps: f64, spec: &IntegrationSpec) -> Result<f64> {
    Ok(lw_functional(g, u, eps, spec)?.f)
}

/// `Sigma[G] = A[G] - G^-1`.
pub fn self_energy(g: &SymMatrix, u: &Interaction, eps: f64, spec: &IntegrationSpec) -> Result<SymMatrix> {
    Ok(lw_functional(g, u, eps, spec)?.sigma)
}

/// Half the central-difference gradient of `Phi` along the directions
/// `E^(ij)` (which carry a 2 on diagonal entries).
pub fn phi_gradient_fd(
    g: &SymMatrix,
    u: &Interaction,
    eps: f64,
    spec: &IntegrationSpec,
    opts: &InversionOptions,
    step: f64,
) -> Result<SymMatrix> {
    let n = g.dim();
    let mut out = SymMatrix::zeros(n);
    for (i, j) in SymMatrix::packed_indices(n) {
        let e = SymMatrix::unit_direction(n, i, j);
        let plus = lw_functional_with(&(g + &e.scale(step)), u, eps, spec, opts)?.phi;
        let minus = lw_functional_with(&(g - &e.scale(step)), u, eps, spec, opts)?.phi;
        out.set(i, j, 0.25 * (plus - minus) / step);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct VariationalReport {
    pub omega: f64,
    /// `1/2 Tr[A G*] - F[G*]` at `G* = G[A]`.
    pub objective_at_minimizer: f64,
    pub equality_gap: f64,
    /// Objective minus `Omega` at each perturbed `G'`; all should be `>= -tol`.
    pub probe_excess: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

/// Checks `Omega[A] = inf_G (1/2 Tr[A G] - F[G])` at `G[A]` and at random
/// positive definite perturbations of it.
pub fn variational_check(
    a: &SymMatrix,
    u: &Interaction,
    eps: f64,
    spec: &IntegrationSpec,
    n_probes: usize,
    seed: u64,
) -> Result<VariationalReport> {
    let model = GibbsModel::new(a.clone(), u.clone(), eps)?;
    let m = gibbs_moments(&model, spec, false)?;
    let omega = -m.log_z;
    let g_star = m.second.clone();
    let opts = InversionOptions {
        newton_tol: 1e-10,
        initial: Some(a.clone()),
        ..InversionOptions::default()
    };
    let objective = |g: &SymMatrix| -> Result<(f64, f64)> {
        let ev = lw_functional_with(g, u, eps, spec, &opts)?;
        Ok((0.5 * (a.as_matrix() * g.as_matrix()).trace() - ev.f, ev.error_estimate))
    };
    let (obj_star, err_star) = objective(&g_star)?;
    let tolerance = 5.0 * (err_star + m.log_z_err) + 1e-9 * (1.0 + omega.abs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = a.dim();
    let lmin = g_star.min_eigenvalue();
    let mut perturbations = vec![&g_star + &SymMatrix::identity(n).scale(0.1)];
    for _ in 1..n_probes {
        let s = SymMatrix::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let scale = 0.5 * lmin / s.max_abs().max(1e-12) / n as f64;
        perturbations.push(&g_star + &s.scale(scale));
    }
    let mut probe_excess = Vec::with_capacity(perturbations.len());
    for gp in perturbations.iter().take(n_probes.max(1)) {
        probe_excess.push(objective(gp)?.0 - omega);
    }
    let equality_gap = (obj_star - omega).abs();
    let pass = equality_gap <= tolerance && probe_excess.iter().all(|e| *e >= -tolerance);
    Ok(VariationalReport {
        omega,
        objective_at_minimizer: obj_star,
        equality_gap,
        probe_excess,
        tolerance,
        pass,
    })
}
