//! Numerical experiments for the structural identities of `Phi` and `Sigma`.
//!
//! Every check compares two independently computed quantities and passes
//! when their gap is within five times the combined error estimate.

use serde::Serialize;

use crate::duality::{lw_functional_with, InversionOptions, LwEvaluation};
use crate::error::{LwError, Result};
use crate::integrate::{divergence_probe, IntegrationSpec, ProbeOptions, ProbeVerdict};
use crate::linalg::{Matrix, SymMatrix};
use crate::model::{transform_interaction, GibbsModel, Interaction};

/// Newton tolerance used by rule checks.
pub const RULE_NEWTON_TOL: f64 = 1e-10;
/// Multiple of the propagated error allowed as gap.
pub const ERROR_MULTIPLE: f64 = 5.0;

#[derive(Debug, Clone, Serialize)]
pub struct RuleReport {
    pub rule_name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub abs_gap: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Error estimates and methods behind `lhs` and `rhs`.
    pub provenance: String,
}

impl RuleReport {
    pub fn new(rule_name: &str, lhs: f64, rhs: f64, abs_gap: f64, tolerance: f64, provenance: String) -> Self {
        Self {
            rule_name: rule_name.to_string(),
            lhs,
            rhs,
            abs_gap,
            tolerance,
            pass: abs_gap <= tolerance,
            provenance,
        }
    }

    /// Gap `|lhs - rhs|` against `5 x (err_l + err_r)`.
    fn compare(rule_name: &str, l: &LwEvaluation, r: &LwEvaluation) -> Self {
        let tolerance = ERROR_MULTIPLE * (l.error_estimate + r.error_estimate);
        Self::new(
            rule_name,
            l.phi,
            r.phi,
            (l.phi - r.phi).abs(),
            tolerance,
            format!(
                "lhs: err={:.3e} {} newton={:.1e}; rhs: err={:.3e} {} newton={:.1e}",
                l.error_estimate, l.method, l.newton_residual, r.error_estimate, r.method, r.newton_residual
            ),
        )
    }
}

fn lw(g: &SymMatrix, u: &Interaction, eps: f64, spec: &IntegrationSpec) -> Result<LwEvaluation> {
    lw_functional_with(g, u, eps, spec, &InversionOptions::with_tol(RULE_NEWTON_TOL))
}

/// `Phi[T G T^T, U]` against `Phi[G, U o T]`.
pub fn transformation_check(
    g: &SymMatrix,
    u: &Interaction,
    t: &Matrix,
    eps: f64,
    spec: &IntegrationSpec,
) -> Result<RuleReport> {
    if t.nrows() != g.dim() || t.ncols() != g.dim() {
        return Err(LwError::DimensionMismatch {
            expected: g.dim(),
            found: t.nrows(),
        });
    }
    if t.determinant().abs() <= 1e-10 {
        return Err(LwError::InvalidInput("transformation must be invertible".into()));
    }
    let lhs = lw(&g.congruence(t)?, u, eps, spec)?;
    let rhs = lw(g, &transform_interaction(u, t)?, eps, spec)?;
    Ok(RuleReport::compare("transform", &lhs, &rhs))
}

/// `Phi[s G, eps U]` against `Phi[G, s^2 eps U]` for homogeneous quartic `U`.
pub fn scaling_check(
    g: &SymMatrix,
    u: &Interaction,
    scale: f64,
    eps: f64,
    spec: &IntegrationSpec,
) -> Result<RuleReport> {
    if !u.is_homogeneous_quartic() {
        return Err(LwError::InvalidInput(
            "scaling rule needs a homogeneous quartic interaction".into(),
        ));
    }
    if !(scale > 0.0) {
        return Err(LwError::InvalidInput("scale must be > 0".into()));
    }
    let lhs = lw(&g.scale(scale), u, eps, spec)?;
    let rhs = lw(g, u, scale * scale * eps, spec)?;
    Ok(RuleReport::compare("scale", &lhs, &rhs))
}

fn fragment_of(u: &Interaction) -> Result<Vec<usize>> {
    u.fragment()
        .map(|f| f.to_vec())
        .ok_or_else(|| LwError::InvalidInput("interaction carries no fragment".into()))
}

/// Moves the off-fragment blocks of `g` while keeping `G_11` and positivity.
fn perturb_outside_fragment(g: &SymMatrix, frag: &[usize]) -> SymMatrix {
    let n = g.dim();
    let inside = |i: usize| frag.contains(&i);
    let mut h = g.clone();
    for i in 0..n {
        for j in i..n {
            if !(inside(i) && inside(j)) {
                h.set(i, j, 0.5 * g.get(i, j));
            }
        }
    }
    for i in (0..n).filter(|i| !inside(*i)) {
        h.set(i, i, g.get(i, i) + 0.5);
    }
    h
}

/// `Phi_N[G, U]` against `Phi_p[G_11, U]` for `U` living on a fragment,
/// plus invariance of `Phi_N` under changes of `G_12`, `G_22`.
pub fn projection_check(g: &SymMatrix, u: &Interaction, eps: f64, spec: &IntegrationSpec) -> Result<RuleReport> {
    let frag = fragment_of(u)?;
    let full = lw(g, u, eps, spec)?;
    let reduced = lw(&g.principal(&frag), &u.restrict_to_fragment()?, eps, spec)?;
    let g2 = perturb_outside_fragment(g, &frag);
    g2.require_positive_definite("perturbed G")?;
    let moved = lw(&g2, u, eps, spec)?;
    let gap = (full.phi - reduced.phi).abs().max((full.phi - moved.phi).abs());
    let tolerance = ERROR_MULTIPLE * (full.error_estimate + reduced.error_estimate.max(moved.error_estimate));
    Ok(RuleReport::new(
        "project",
        full.phi,
        reduced.phi,
        gap,
        tolerance,
        format!(
            "Phi_N={:.12e} Phi_p={:.12e} Phi_N(moved)={:.12e}; errs {:.2e}/{:.2e}/{:.2e}",
            full.phi, reduced.phi, moved.phi, full.error_estimate, reduced.error_estimate, moved.error_estimate
        ),
    ))
}

/// Vanishing of `Sigma` outside the fragment block and agreement of the
/// block with the fragment self-energy.
pub fn sparsity_check(g: &SymMatrix, u: &Interaction, eps: f64, spec: &IntegrationSpec) -> Result<RuleReport> {
    let frag = fragment_of(u)?;
    let full = lw(g, u, eps, spec)?;
    let reduced = lw(&g.principal(&frag), &u.restrict_to_fragment()?, eps, spec)?;
    let n = g.dim();
    let mut outside: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if !(frag.contains(&i) && frag.contains(&j)) {
                outside = outside.max(full.sigma.get(i, j).abs());
            }
        }
    }
    let block = full.sigma.principal(&frag);
    let mismatch = (&block - &reduced.sigma).max_abs();
    let tolerance = ERROR_MULTIPLE * (full.sigma_error + reduced.sigma_error);
    Ok(RuleReport::new(
        "sparse",
        outside,
        0.0,
        outside.max(mismatch),
        tolerance,
        format!(
            "max|Sigma outside|={outside:.3e} block mismatch={mismatch:.3e}; sigma errs {:.2e}/{:.2e}",
            full.sigma_error, reduced.sigma_error
        ),
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtensionReport {
    /// `(delta, Phi_N[diag(G_p, delta I)], error)`.
    pub sequence: Vec<(f64, f64, f64)>,
    pub limit: f64,
    /// Fitted `b` and rate `c` in `a + b delta^c`; reported, not asserted.
    pub fit_b: f64,
    pub fit_rate: f64,
    /// `Phi_p[G_p, U(., 0)]`.
    pub target: f64,
    pub target_error: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub warning: Option<String>,
}

/// Fits `a + b d^c` through three points; returns `(a, b, c)` or `None`
/// when the increments do not shrink geometrically.
pub fn fit_power_limit(d: [f64; 3], f: [f64; 3]) -> Option<(f64, f64, f64)> {
    let (d1, d2, d3) = (d[0], d[1], d[2]);
    let num = f[0] - f[1];
    let den = f[1] - f[2];
    if den == 0.0 {
        return (num == 0.0).then_some((f[2], 0.0, 0.0));
    }
    let r = num / den;
    if !(r > 1.0) {
        return None;
    }
    let ratio = |c: f64| (d1.powf(c) - d2.powf(c)) / (d2.powf(c) - d3.powf(c));
    // ratio(c) increases from its c->0 limit towards infinity
    let (mut lo, mut hi) = (1e-6, 1.0);
    while ratio(hi) < r {
        hi *= 2.0;
        if hi > 64.0 {
            return None;
        }
    }
    if ratio(lo) > r {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    let b = den / (d2.powf(c) - d3.powf(c));
    Some((f[2] - b * d3.powf(c), b, c))
}

/// Sequence `Phi_N[diag(G_p, delta I), U]` as `delta -> 0` against the
/// lower-dimensional value `Phi_p[G_p, U(., 0)]`.
pub fn extension_limit(
    g_p: &SymMatrix,
    u: &Interaction,
    deltas: &[f64],
    eps: f64,
    spec: &IntegrationSpec,
    tolerance: f64,
) -> Result<ExtensionReport> {
    if deltas.len() < 3 || deltas.windows(2).any(|w| w[1] >= w[0]) || deltas.iter().any(|d| *d <= 0.0) {
        return Err(LwError::InvalidInput(
            "delta schedule must be >= 3 decreasing positive values".into(),
        ));
    }
    let p = g_p.dim();
    let n = u.dim();
    if p >= n {
        return Err(LwError::InvalidInput(format!("fragment size {p} must be below {n}")));
    }
    if !u.growth().strong {
        return Err(LwError::InvalidInput("continuous extension needs strong growth".into()));
    }
    let mut sequence = Vec::with_capacity(deltas.len());
    for &d in deltas {
        let g = g_p.block_diag(&SymMatrix::identity(n - p).scale(d));
        let ev = lw(&g, u, eps, spec)?;
        if !ev.phi.is_finite() {
            return Err(LwError::InvalidInput(format!("Phi not finite at delta={d}")));
        }
        sequence.push((d, ev.phi, ev.error_estimate));
    }
    let target_ev = lw(g_p, &u.slice_leading(p)?, eps, spec)?;
    let k = sequence.len();
    let last3 = [sequence[k - 3], sequence[k - 2], sequence[k - 1]];
    let (limit, fit_b, fit_rate, warning) = match fit_power_limit(
        [last3[0].0, last3[1].0, last3[2].0],
        [last3[0].1, last3[1].1, last3[2].1],
    ) {
        Some((a, b, c)) => (a, b, c, None),
        None => (
            last3[2].1,
            f64::NAN,
            f64::NAN,
            Some("NonMonotoneWarning: increments at the smallest deltas do not shrink; using the last value".into()),
        ),
    };
    let gap = (limit - target_ev.phi).abs();
    Ok(ExtensionReport {
        sequence,
        limit,
        fit_b,
        fit_rate,
        target: target_ev.phi,
        target_error: target_ev.error_estimate,
        gap,
        tolerance,
        pass: gap <= tolerance,
        warning,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleRow {
    /// `"T_j"` with the value of `j`, or `"P"`.
    pub label: String,
    pub verdict: String,
    pub expected: String,
    pub doublings: usize,
    pub final_halfwidth: f64,
    pub final_log_z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleReport {
    pub rows: Vec<CounterexampleRow>,
    pub pass: bool,
}

/// The quadratic form `[[0, 0], [0, 1]]` used with the counterexample.
pub fn counterexample_a() -> SymMatrix {
    SymMatrix::diag(&[0.0, 1.0])
}

fn probe_row(label: String, u: Interaction, expect_divergent: bool, opts: &ProbeOptions) -> Result<CounterexampleRow> {
    let model = GibbsModel::new(counterexample_a(), u, 1.0)?;
    let v = divergence_probe(&model, opts)?;
    let h = v.history();
    let (l, lz) = *h.last().expect("probe records at least one box");
    let pass = if expect_divergent {
        matches!(v, ProbeVerdict::Divergent { .. })
    } else {
        matches!(v, ProbeVerdict::Convergent { .. })
    };
    Ok(CounterexampleRow {
        label,
        verdict: v.label().to_string(),
        expected: if expect_divergent { "Divergent" } else { "Convergent" }.to_string(),
        doublings: h.len() - 1,
        final_halfwidth: l,
        final_log_z: lz,
        pass,
    })
}

/// Divergence probes for `U o T_j`, `T_j = diag(1, 1/j)`, and for the limit
/// `U o P`, `P = diag(1, 0)`, at `A = [[0, 0], [0, 1]]`.
pub fn counterexample_experiment(js: &[u32], opts: &ProbeOptions) -> Result<CounterexampleReport> {
    let u = Interaction::counterexample();
    let mut rows = Vec::with_capacity(js.len() + 1);
    for &j in js {
        if j == 0 {
            return Err(LwError::InvalidInput("j must be >= 1".into()));
        }
        let t = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0 / j as f64]));
        rows.push(probe_row(format!("T_{j}"), transform_interaction(&u, &t)?, true, opts)?);
    }
    let p = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]));
    rows.push(probe_row("P".into(), transform_interaction(&u, &p)?, false, opts)?);
    let pass = rows.iter().all(|r| r.pass);
    Ok(CounterexampleReport { rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rotation2;

    fn quartic() -> Interaction {
        Interaction::quartic_1d(1.0).unwrap()
    }

    #[test]
    fn identity_transformation_has_zero_gap() {
        let r = transformation_check(
            &SymMatrix::scalar(1.0),
            &quartic(),
            &Matrix::identity(1, 1),
            0.1,
            &IntegrationSpec::precise(),
        )
        .unwrap();
        assert_eq!(r.abs_gap, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn one_dimensional_stretch() {
        let t = Matrix::from_element(1, 1, 2.0);
        let r = transformation_check(
            &SymMatrix::scalar(1.0),
            &quartic(),
            &t,
            0.1,
            &IntegrationSpec::precise(),
        )
        .unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn rotation_with_coulomb() {
        let v = SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let u = Interaction::coulomb(v).unwrap();
        let g = SymMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 0.8]]).unwrap();
        let r = transformation_check(&g, &u, &rotation2(0.7), 0.2, &IntegrationSpec::precise()).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn singular_transformation_rejected() {
        let t = Matrix::zeros(1, 1);
        assert!(transformation_check(
            &SymMatrix::scalar(1.0),
            &quartic(),
            &t,
            0.1,
            &IntegrationSpec::default()
        )
        .is_err());
    }

    #[test]
    fn scaling_identity_and_doubling() {
        let spec = IntegrationSpec::precise();
        let r = scaling_check(&SymMatrix::scalar(1.0), &quartic(), 1.0, 0.05, &spec).unwrap();
        assert_eq!(r.abs_gap, 0.0);
        let r = scaling_check(&SymMatrix::scalar(1.0), &quartic(), 2.0, 0.05, &spec).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn projection_and_sparsity_on_impurity() {
        let spec = IntegrationSpec::precise();
        let u = Interaction::impurity(quartic(), vec![0], 2).unwrap();
        let g = SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 2.0]]).unwrap();
        let r = projection_check(&g, &u, 0.2, &spec).unwrap();
        assert!(r.pass, "{r:?}");
        let r = sparsity_check(&g, &u, 0.2, &spec).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn zero_interaction_projection() {
        let u = Interaction::impurity(Interaction::zero(1), vec![0], 2).unwrap();
        let r = projection_check(&SymMatrix::diag(&[1.0, 2.0]), &u, 0.2, &IntegrationSpec::default()).unwrap();
        assert!(r.lhs.abs() < 1e-12 && r.rhs.abs() < 1e-12);
    }

    #[test]
    fn power_fit_recovers_limit() {
        let f = |d: f64| 0.3 - 2.0 * d.powf(1.7);
        let (a, b, c) = fit_power_limit([0.1, 0.05, 0.025], [f(0.1), f(0.05), f(0.025)]).unwrap();
        assert!((a - 0.3).abs() < 1e-10 && (b + 2.0).abs() < 1e-8 && (c - 1.7).abs() < 1e-9);
        assert!(fit_power_limit([0.1, 0.05, 0.025], [1.0, 2.0, 1.0]).is_none());
    }

    #[test]
    fn counterexample_small_j() {
        let r = counterexample_experiment(&[1], &ProbeOptions::default()).unwrap();
        assert!(r.pass, "{r:?}");
    }
}
