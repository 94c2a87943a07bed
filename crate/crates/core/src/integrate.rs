//! Gibbs integrals: partition function, second and fourth moments.
//!
//! Three engines sit behind one entry point, [`gibbs_moments`]:
//!
//! * Gauss-Hermite tensor grids after Cholesky reweighting by `A`, used
//!   whenever `A` is positive definite and `N <= 3`. The rule size grows
//!   until two successive rules agree to the target relative error.
//! * Iterated adaptive Gauss-Kronrod on a truncated box, for indefinite `A`
//!   (or when the Hermite grid does not settle). The box halfwidth grows
//!   until the moment-weighted integrand on the boundary is below
//!   `1e-14` of its interior maximum.
//! * Importance-sampled Monte Carlo for `4 <= N <= 6`, or on request.
//!
//! All engines work with a shifted exponent so that `Z` itself never has
//! to be representable; `log Z` is carried instead.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LwError, Result};
use crate::linalg::{Matrix, SymMatrix, SymTensor4};
use crate::model::{domain_certificate, DomainVerdict, GibbsModel};
use crate::quadrature::{hermite_rule, nested_cubature, uniform_breaks, CubatureOptions};

/// Largest dimension handled by any engine.
pub const MAX_DIM: usize = 6;
/// Largest dimension handled by quadrature.
pub const MAX_QUADRATURE_DIM: usize = 3;
/// Boundary decay threshold for automatic box truncation.
pub const BOX_BOUNDARY_DECAY: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    AutoQuadrature,
    MonteCarlo,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegrationSpec {
    pub method: Method,
    /// `None` selects 1e-8 for quadrature and 1e-3 for Monte Carlo.
    pub target_rel_error: Option<f64>,
    pub max_evals: u64,
    /// `None` selects the halfwidth automatically.
    pub truncation_box_halfwidth: Option<f64>,
    pub mc_samples: usize,
    pub rng_seed: u64,
}

impl Default for IntegrationSpec {
    fn default() -> Self {
        Self {
            method: Method::AutoQuadrature,
            target_rel_error: None,
            max_evals: 400_000_000,
            truncation_box_halfwidth: None,
            mc_samples: 200_000,
            rng_seed: 0,
        }
    }
}

impl IntegrationSpec {
    /// Quadrature at the accuracy needed by the duality solver.
    pub fn precise() -> Self {
        Self {
            target_rel_error: Some(1e-12),
            ..Self::default()
        }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        Self {
            method: Method::MonteCarlo,
            mc_samples: samples,
            rng_seed: seed,
            ..Self::default()
        }
    }

    pub fn rel_tol(&self) -> f64 {
        self.target_rel_error.unwrap_or(match self.method {
            Method::AutoQuadrature => 1e-8,
            Method::MonteCarlo => 1e-3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.rel_tol();
        if !(t > 0.0) {
            return Err(LwError::InvalidInput(format!("target_rel_error must be > 0, got {t}")));
        }
        if self.method == Method::MonteCarlo && self.mc_samples < 10_000 {
            return Err(LwError::InvalidInput(format!(
                "mc_samples must be >= 10000, got {}",
                self.mc_samples
            )));
        }
        if let Some(l) = self.truncation_box_halfwidth {
            if !(l > 0.0) {
                return Err(LwError::InvalidInput("box halfwidth must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Which engine produced a result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MethodUsed {
    GaussHermite { points_per_dim: usize },
    AdaptiveBox { halfwidth: f64, auto_truncated: bool },
    MonteCarlo { samples: usize, proposal_shift: f64 },
}

impl std::fmt::Display for MethodUsed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::GaussHermite { points_per_dim } => write!(f, "gauss-hermite({points_per_dim})"),
            Self::AdaptiveBox {
                halfwidth,
                auto_truncated,
            } => write!(
                f,
                "adaptive-box(L={halfwidth:.3}{})",
                if *auto_truncated { ",auto" } else { "" }
            ),
            Self::MonteCarlo { samples, .. } => write!(f, "monte-carlo({samples})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IntegrationResult<T> {
    pub value: T,
    /// Absolute error estimate; the standard error for Monte Carlo.
    pub abs_error: f64,
    pub n_evals: u64,
    pub method_used: MethodUsed,
}

/// Everything one pass over the Gibbs measure produces.
#[derive(Debug, Clone)]
pub struct GibbsMoments {
    pub log_z: f64,
    /// Absolute error of `log Z` (relative error of `Z`).
    pub log_z_err: f64,
    /// `log E_{N(0, A^-1)}[exp(-eps U)]` when the Hermite engine ran; this
    /// avoids cancellation in the LW functional.
    pub log_gauss_ratio: Option<f64>,
    pub second: SymMatrix,
    pub second_err: f64,
    pub fourth: Option<SymTensor4>,
    pub fourth_err: f64,
    pub n_evals: u64,
    pub method: MethodUsed,
}

/// Computes `log Z`, `G` and optionally the fourth-moment tensor.
pub fn gibbs_moments(model: &GibbsModel, spec: &IntegrationSpec, want_fourth: bool) -> Result<GibbsMoments> {
    spec.validate()?;
    let n = model.dim();
    if n > MAX_DIM {
        return Err(LwError::InvalidInput(format!(
            "dimension {n} exceeds the supported maximum {MAX_DIM}"
        )));
    }
    if domain_certificate(model) == Some(DomainVerdict::Outside) {
        return Err(LwError::DivergenceDetected(format!(
            "A = {:?} is outside dom Omega",
            model.a
        )));
    }
    if spec.method == Method::MonteCarlo || n > MAX_QUADRATURE_DIM {
        let mut s = spec.clone();
        s.method = Method::MonteCarlo;
        return monte_carlo(model, &s, want_fourth);
    }
    if model.a.is_positive_definite() && spec.truncation_box_halfwidth.is_none() {
        if let Some(m) = gauss_hermite(model, spec, want_fourth)? {
            return Ok(m);
        }
    }
    adaptive_box(model, spec, want_fourth)
}

pub fn partition_function(model: &GibbsModel, spec: &IntegrationSpec) -> Result<IntegrationResult<f64>> {
    let m = gibbs_moments(model, spec, false)?;
    let z = m.log_z.exp();
    Ok(IntegrationResult {
        value: z,
        abs_error: z * m.log_z_err,
        n_evals: m.n_evals,
        method_used: m.method,
    })
}

/// `Omega = -log Z`, with error `abs_error(Z) / Z`.
pub fn free_energy(model: &GibbsModel, spec: &IntegrationSpec) -> Result<IntegrationResult<f64>> {
    let m = gibbs_moments(model, spec, false)?;
    Ok(IntegrationResult {
        value: -m.log_z,
        abs_error: m.log_z_err,
        n_evals: m.n_evals,
        method_used: m.method,
    })
}

/// `G[A] = <x x^T>`; fails with `NotPositiveDefinite` if the estimate is
/// not positive definite.
pub fn green_function(model: &GibbsModel, spec: &IntegrationSpec) -> Result<IntegrationResult<SymMatrix>> {
    let m = gibbs_moments(model, spec, false)?;
    if !m.second.is_positive_definite() {
        return Err(LwError::NotPositiveDefinite(format!(
            "estimated Green's function {:?} (error {:.2e})",
            m.second, m.second_err
        )));
    }
    Ok(IntegrationResult {
        value: m.second,
        abs_error: m.second_err,
        n_evals: m.n_evals,
        method_used: m.method,
    })
}

/// `<x_i x_j x_k x_l>` under the Gibbs measure.
pub fn fourth_moment_tensor(model: &GibbsModel, spec: &IntegrationSpec) -> Result<IntegrationResult<SymTensor4>> {
    let m = gibbs_moments(model, spec, true)?;
    Ok(IntegrationResult {
        value: m.fourth.expect("fourth moments requested"),
        abs_error: m.fourth_err,
        n_evals: m.n_evals,
        method_used: m.method,
    })
}

/// Raw weighted sums over quadrature nodes or samples.
#[derive(Clone)]
struct Sums {
    s0: f64,
    s2: Vec<f64>,
    s4: Vec<f64>,
}

impl Sums {
    fn new(m2: usize, m4: usize) -> Self {
        Self {
            s0: 0.0,
            s2: vec![0.0; m2],
            s4: vec![0.0; m4],
        }
    }

    fn add(&mut self, w: f64, x: &[f64], idx2: &[(usize, usize)], idx4: &[[usize; 4]]) {
        self.s0 += w;
        for (k, &(i, j)) in idx2.iter().enumerate() {
            self.s2[k] += w * x[i] * x[j];
        }
        for (k, q) in idx4.iter().enumerate() {
            self.s4[k] += w * x[q[0]] * x[q[1]] * x[q[2]] * x[q[3]];
        }
    }

    fn merge(&mut self, o: &Sums) {
        self.s0 += o.s0;
        for (a, b) in self.s2.iter_mut().zip(&o.s2) {
            *a += b;
        }
        for (a, b) in self.s4.iter_mut().zip(&o.s4) {
            *a += b;
        }
    }
}

fn second_from_packed(n: usize, packed: &[f64]) -> SymMatrix {
    SymMatrix::unpack(n, packed)
}

fn fourth_from_unique(n: usize, idx4: &[[usize; 4]], vals: &[f64]) -> SymTensor4 {
    let mut t = SymTensor4::zeros(n);
    for (q, &v) in idx4.iter().zip(vals) {
        t.set_all_perms(q[0], q[1], q[2], q[3], v);
    }
    t
}

struct HermitePass {
    log_raw: f64,
    second: Vec<f64>,
    fourth: Vec<f64>,
    evals: u64,
}

fn hermite_pass(model: &GibbsModel, lt_inv: &Matrix, npts: usize, want4: bool) -> HermitePass {
    let n = model.dim();
    let rule = hermite_rule(npts);
    let idx2 = SymMatrix::packed_indices(n);
    let idx4 = if want4 {
        SymTensor4::unique_indices(n)
    } else {
        Vec::new()
    };
    let total = npts.pow(n as u32);
    let node = |flat: usize, y: &mut [f64], x: &mut [f64]| -> f64 {
        let mut r = flat;
        let mut w = 1.0;
        for d in 0..n {
            let k = r % npts;
            r /= npts;
            y[d] = rule.nodes[k];
            w *= rule.weights[k];
        }
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += lt_inv[(i, j)] * y[j];
            }
            x[i] = s;
        }
        w
    };
    let chunk = npts.max(64);
    let chunks: Vec<(usize, usize)> = (0..total).step_by(chunk).map(|s| (s, (s + chunk).min(total))).collect();
    // pass 1: interaction energies and their minimum
    let emin = chunks
        .par_iter()
        .map(|&(s, e)| {
            let mut y = [0.0; MAX_QUADRATURE_DIM];
            let mut x = [0.0; MAX_QUADRATURE_DIM];
            let mut m = f64::INFINITY;
            for f in s..e {
                let w = node(f, &mut y[..n], &mut x[..n]);
                if w > 0.0 {
                    m = m.min(model.interaction_energy(&x[..n]));
                }
            }
            m
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let emin = if emin.is_finite() { emin } else { 0.0 };
    let partial: Vec<Sums> = chunks
        .par_iter()
        .map(|&(s, e)| {
            let mut y = [0.0; MAX_QUADRATURE_DIM];
            let mut x = [0.0; MAX_QUADRATURE_DIM];
            let mut acc = Sums::new(idx2.len(), idx4.len());
            for f in s..e {
                let w = node(f, &mut y[..n], &mut x[..n]);
                if w == 0.0 {
                    continue;
                }
                let wt = w * (-(model.interaction_energy(&x[..n]) - emin)).exp();
                acc.add(wt, &x[..n], &idx2, &idx4);
            }
            acc
        })
        .collect();
    let mut tot = Sums::new(idx2.len(), idx4.len());
    for p in &partial {
        tot.merge(p);
    }
    HermitePass {
        log_raw: tot.s0.ln() - emin,
        second: tot.s2.iter().map(|v| v / tot.s0).collect(),
        fourth: tot.s4.iter().map(|v| v / tot.s0).collect(),
        evals: total as u64,
    }
}

fn hermite_schedule(n: usize) -> &'static [usize] {
    match n {
        1 => &[24, 36, 54, 80, 120, 180, 270, 400],
        2 => &[16, 24, 36, 54, 80, 120, 160],
        _ => &[12, 18, 27, 40, 56, 72, 96],
    }
}

/// Gauss-Hermite after Cholesky reweighting. Returns `None` if successive
/// rules never agree to the target.
fn gauss_hermite(model: &GibbsModel, spec: &IntegrationSpec, want4: bool) -> Result<Option<GibbsMoments>> {
    let n = model.dim();
    let l = model
        .a
        .cholesky()
        .ok_or_else(|| LwError::NotPositiveDefinite("Gauss-Hermite needs A > 0".into()))?;
    // x = L^{-T} y turns 1/2 x^T A x into 1/2 |y|^2
    let lt_inv = l
        .transpose()
        .try_inverse()
        .ok_or_else(|| LwError::NotPositiveDefinite("singular Cholesky factor".into()))?;
    let log_det_l: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let tol = spec.rel_tol();
    let idx4 = SymTensor4::unique_indices(n);

    if model.is_gaussian() {
        // exact for polynomial moments of degree <= 4 with 3 points
        let p = hermite_pass(model, &lt_inv, 3, want4);
        return Ok(Some(finish_hermite(n, p, None, log_det_l, &idx4, want4, 3, 0)));
    }

    let sched = hermite_schedule(n);
    let mut prev: Option<HermitePass> = None;
    let mut evals = 0u64;
    for &npts in sched {
        let cur = hermite_pass(model, &lt_inv, npts, want4);
        evals += cur.evals;
        if evals > spec.max_evals {
            break;
        }
        if let Some(p) = &prev {
            let diff = hermite_diff(n, p, &cur);
            if diff.max_rel <= tol {
                return Ok(Some(finish_hermite(
                    n,
                    cur,
                    Some(diff),
                    log_det_l,
                    &idx4,
                    want4,
                    npts,
                    evals,
                )));
            }
        }
        prev = Some(cur);
    }
    Ok(None)
}

struct HermiteDiff {
    max_rel: f64,
    log_z: f64,
    second: f64,
    fourth: f64,
}

fn hermite_diff(n: usize, a: &HermitePass, b: &HermitePass) -> HermiteDiff {
    let d_logz = (a.log_raw - b.log_raw).abs();
    let gb = second_from_packed(n, &b.second);
    let ga = second_from_packed(n, &a.second);
    let mut d2 = 0.0_f64;
    let mut d2_rel = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            let diff = (ga.get(i, j) - gb.get(i, j)).abs();
            let scale = (gb.get(i, i) * gb.get(j, j)).sqrt().max(f64::MIN_POSITIVE);
            d2 = d2.max(diff);
            d2_rel = d2_rel.max(diff / scale);
        }
    }
    let mut d4 = 0.0_f64;
    let mut d4_rel = 0.0_f64;
    if !b.fourth.is_empty() {
        let scale = b
            .fourth
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for (x, y) in a.fourth.iter().zip(&b.fourth) {
            d4 = d4.max((x - y).abs());
        }
        d4_rel = d4 / scale;
    }
    HermiteDiff {
        max_rel: d_logz.max(d2_rel).max(d4_rel),
        log_z: d_logz,
        second: d2,
        fourth: d4,
    }
}

#[allow(clippy::too_many_arguments)]
fn finish_hermite(
    n: usize,
    p: HermitePass,
    diff: Option<HermiteDiff>,
    log_det_l: f64,
    idx4: &[[usize; 4]],
    want4: bool,
    npts: usize,
    evals: u64,
) -> GibbsMoments {
    let nodes = (npts as f64).powi(n as i32);
    // rounding floor for sums of `nodes` positive terms
    let round = 4.0 * f64::EPSILON * nodes.sqrt().max(1.0);
    let second = second_from_packed(n, &p.second);
    let g_scale = second.max_abs();
    let (dz, d2, d4) = diff.map_or((0.0, 0.0, 0.0), |d| (d.log_z, d.second, d.fourth));
    let fourth = want4.then(|| fourth_from_unique(n, idx4, &p.fourth));
    let f_scale = p.fourth.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    GibbsMoments {
        log_z: p.log_raw - log_det_l,
        log_z_err: dz.max(round),
        log_gauss_ratio: Some(p.log_raw - 0.5 * n as f64 * (2.0 * PI).ln()),
        second,
        second_err: d2.max(round * g_scale),
        fourth,
        fourth_err: d4.max(round * f_scale),
        n_evals: if evals == 0 { p.evals } else { evals },
        method: MethodUsed::GaussHermite { points_per_dim: npts },
    }
}

/// Grid sample of the energy on `[-l, l]^n`: returns the minimum energy
/// and the maximum of the moment-weighted integrand on the boundary
/// relative to the interior maximum.
fn box_scan(model: &GibbsModel, l: f64, k: usize) -> (f64, f64) {
    let n = model.dim();
    let total = k.pow(n as u32);
    let coords = |flat: usize, x: &mut [f64]| -> bool {
        let mut r = flat;
        let mut on_boundary = false;
        for xi in x.iter_mut() {
            let i = r % k;
            r /= k;
            if i == 0 || i == k - 1 {
                on_boundary = true;
            }
            *xi = -l + 2.0 * l * i as f64 / (k - 1) as f64;
        }
        on_boundary
    };
    let mut energies = Vec::with_capacity(total);
    let mut x = vec![0.0; n];
    for f in 0..total {
        let b = coords(f, &mut x);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        energies.push((model.energy(&x), b, r2));
    }
    let emin = energies.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let mut interior_max = 0.0_f64;
    let mut boundary_max = 0.0_f64;
    for &(e, b, r2) in &energies {
        let w = (-(e - emin)).exp() * (1.0 + r2 * r2);
        if b {
            boundary_max = boundary_max.max(w);
        } else {
            interior_max = interior_max.max(w);
        }
    }
    (emin, boundary_max / interior_max.max(f64::MIN_POSITIVE))
}

/// Chooses a truncation halfwidth by growing the box until the boundary
/// integrand is negligible.
pub fn auto_halfwidth(model: &GibbsModel) -> Result<(f64, f64)> {
    let n = model.dim();
    let k = match n {
        1 => 801,
        2 => 81,
        _ => 25,
    };
    let mut l = 2.0;
    for _ in 0..60 {
        let (emin, ratio) = box_scan(model, l, k);
        if ratio < BOX_BOUNDARY_DECAY {
            return Ok((l, emin));
        }
        l *= 1.5;
    }
    Err(LwError::DivergenceDetected(format!(
        "integrand does not decay on boxes up to halfwidth {l:.3e}"
    )))
}

fn adaptive_box(model: &GibbsModel, spec: &IntegrationSpec, want4: bool) -> Result<GibbsMoments> {
    let n = model.dim();
    let (l, emin, auto) = match spec.truncation_box_halfwidth {
        Some(l) => {
            let k = match n {
                1 => 801,
                2 => 81,
                _ => 25,
            };
            (l, box_scan(model, l, k).0, false)
        }
        None => {
            let (l, e) = auto_halfwidth(model)?;
            (l, e, true)
        }
    };
    let idx2 = SymMatrix::packed_indices(n);
    let idx4 = if want4 {
        SymTensor4::unique_indices(n)
    } else {
        Vec::new()
    };
    let m = 1 + idx2.len() + idx4.len();
    let f = |x: &[f64]| -> Vec<f64> {
        let w = (-(model.energy(x) - emin)).exp();
        let mut out = Vec::with_capacity(m);
        out.push(w);
        for &(i, j) in &idx2 {
            out.push(w * x[i] * x[j]);
        }
        for q in &idx4 {
            out.push(w * x[q[0]] * x[q[1]] * x[q[2]] * x[q[3]]);
        }
        out
    };
    let panels = match n {
        1 => 32,
        2 => 16,
        _ => 8,
    };
    let breaks: Vec<Vec<f64>> = (0..n).map(|_| uniform_breaks(-l, l, panels)).collect();
    let opts = CubatureOptions {
        rel_tol: spec.rel_tol(),
        abs_floor: 0.0,
        max_panels: match n {
            1 => 20_000,
            2 => 2_000,
            _ => 400,
        },
        max_evals: spec.max_evals,
    };
    let r = nested_cubature(&f, &breaks, m, opts);
    let i0 = r.value[0];
    if !(i0 > 0.0 && i0.is_finite()) {
        return Err(LwError::DivergenceDetected(format!(
            "box integral of the Gibbs weight is {i0}"
        )));
    }
    let achieved = (0..m)
        .map(|q| r.err[q] / r.abs[q].max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    if !r.converged || r.evals > spec.max_evals {
        return Err(LwError::BudgetExceeded {
            evals: r.evals,
            achieved,
            target: spec.rel_tol(),
        });
    }
    let e0 = r.err[0] / i0;
    let second_vals: Vec<f64> = (0..idx2.len()).map(|k| r.value[1 + k] / i0).collect();
    let second_err = (0..idx2.len())
        .map(|k| (r.err[1 + k] + second_vals[k].abs() * r.err[0]) / i0)
        .fold(0.0, f64::max);
    let off = 1 + idx2.len();
    let fourth_vals: Vec<f64> = (0..idx4.len()).map(|k| r.value[off + k] / i0).collect();
    let fourth_err = (0..idx4.len())
        .map(|k| (r.err[off + k] + fourth_vals[k].abs() * r.err[0]) / i0)
        .fold(0.0, f64::max);
    Ok(GibbsMoments {
        log_z: i0.ln() - emin,
        log_z_err: e0,
        log_gauss_ratio: None,
        second: second_from_packed(n, &second_vals),
        second_err,
        fourth: want4.then(|| fourth_from_unique(n, &idx4, &fourth_vals)),
        fourth_err,
        n_evals: r.evals,
        method: MethodUsed::AdaptiveBox {
            halfwidth: l,
            auto_truncated: auto,
        },
    })
}

fn descend(model: &GibbsModel, mut x: Vec<f64>) -> Vec<f64> {
    let n = model.dim();
    let h = 1e-5;
    let mut e = model.energy(&x);
    let mut step = 1.0;
    for _ in 0..500 {
        let mut g = vec![0.0; n];
        let mut xp = x.clone();
        for i in 0..n {
            xp[i] = x[i] + h;
            let ep = model.energy(&xp);
            xp[i] = x[i] - h;
            let em = model.energy(&xp);
            xp[i] = x[i];
            g[i] = (ep - em) / (2.0 * h);
        }
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-9 {
            break;
        }
        let mut moved = false;
        while step > 1e-12 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
            let et = model.energy(&trial);
            if et < e {
                x = trial;
                e = et;
                step *= 1.5;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    x
}

/// Local minimizer of the energy by gradient descent with central
/// differences, started at the origin. The origin is a critical point of
/// even energies, so a saddle there is escaped along a coordinate axis.
fn locate_mode(model: &GibbsModel) -> Vec<f64> {
    let n = model.dim();
    let x = descend(model, vec![0.0; n]);
    if x.iter().any(|v| *v != 0.0) {
        return x;
    }
    let e0 = model.energy(&x);
    let mut best: Option<(f64, Vec<f64>)> = None;
    for d in 0..n {
        for s in [-1.0, 1.0] {
            let mut t = vec![0.0; n];
            t[d] = s * 1e-2;
            let et = model.energy(&t);
            if et < e0 && best.as_ref().is_none_or(|b| et < b.0) {
                best = Some((et, t));
            }
        }
    }
    match best {
        Some((_, t)) => descend(model, t),
        None => x,
    }
}

fn energy_is_even(model: &GibbsModel, seed: u64) -> bool {
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..64).all(|_| {
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = StandardNormal.sample(&mut rng);
                3.0 * s
            })
            .collect();
        let xm: Vec<f64> = x.iter().map(|v| -v).collect();
        let (a, b) = (model.energy(&x), model.energy(&xm));
        (a - b).abs() <= 1e-12 * (1.0 + a.abs())
    })
}

const MC_BATCH: usize = 8192;

/// Importance sampling with a Gaussian proposal of precision `A + eta I`
/// centred at the located mode (mirrored when the energy is even).
fn monte_carlo(model: &GibbsModel, spec: &IntegrationSpec, want4: bool) -> Result<GibbsMoments> {
    let n = model.dim();
    let lmin = model.a.min_eigenvalue();
    let eta = if lmin > 0.0 { 0.0 } else { 1.0 - lmin };
    let prec = &model.a + &SymMatrix::identity(n).scale(eta);
    let l = prec
        .cholesky()
        .ok_or_else(|| LwError::NotPositiveDefinite("Monte Carlo proposal precision".into()))?;
    let lt_inv = l
        .transpose()
        .try_inverse()
        .ok_or_else(|| LwError::NotPositiveDefinite("singular proposal".into()))?;
    let log_det_prec: f64 = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    let mode = locate_mode(model);
    let centred = mode.iter().any(|v| v.abs() > 1e-6);
    let mirror = centred && energy_is_even(model, spec.rng_seed ^ 0xabcdef);
    let centers: Vec<Vec<f64>> = if !centred {
        vec![vec![0.0; n]]
    } else if mirror {
        vec![mode.clone(), mode.iter().map(|v| -v).collect()]
    } else {
        vec![mode.clone()]
    };
    let log_norm = 0.5 * log_det_prec - 0.5 * n as f64 * (2.0 * PI).ln();
    let log_q = |x: &[f64]| -> f64 {
        let comps: Vec<f64> = centers
            .iter()
            .map(|c| {
                let d: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
                log_norm - 0.5 * prec.quad_form(&d)
            })
            .collect();
        let mx = comps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + (comps.iter().map(|c| (c - mx).exp()).sum::<f64>() / comps.len() as f64).ln()
    };

    let samples = spec.mc_samples;
    let n_batches = samples.div_ceil(MC_BATCH);
    let seed = spec.rng_seed;
    let batches: Vec<(Vec<f64>, Vec<f64>)> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = MC_BATCH.min(samples - b * MC_BATCH);
            let mut xs = Vec::with_capacity(count * n);
            let mut lws = Vec::with_capacity(count);
            let mut z = vec![0.0; n];
            for pick in 0..count {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                let c = &centers[pick % centers.len()];
                let x: Vec<f64> = (0..n)
                    .map(|i| c[i] + (0..n).map(|j| lt_inv[(i, j)] * z[j]).sum::<f64>())
                    .collect();
                let lw = -model.energy(&x) - log_q(&x);
                lws.push(lw);
                xs.extend_from_slice(&x);
            }
            (xs, lws)
        })
        .collect();
    let shift = batches
        .iter()
        .flat_map(|(_, l)| l.iter())
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(LwError::DivergenceDetected("all importance weights vanished".into()));
    }
    let idx2 = SymMatrix::packed_indices(n);
    let idx4 = if want4 {
        SymTensor4::unique_indices(n)
    } else {
        Vec::new()
    };
    let mut sums = Sums::new(idx2.len(), idx4.len());
    let mut sum_w2 = 0.0;
    for (xs, lws) in &batches {
        for (k, lw) in lws.iter().enumerate() {
            let w = (lw - shift).exp();
            sum_w2 += w * w;
            sums.add(w, &xs[k * n..(k + 1) * n], &idx2, &idx4);
        }
    }
    let nf = samples as f64;
    let mean_w = sums.s0 / nf;
    let var_w = (sum_w2 / nf - mean_w * mean_w).max(0.0);
    let log_z_err = (var_w / nf).sqrt() / mean_w;
    let r2: Vec<f64> = sums.s2.iter().map(|v| v / sums.s0).collect();
    let r4: Vec<f64> = sums.s4.iter().map(|v| v / sums.s0).collect();
    // delta-method standard errors of the ratio estimators
    let mut se2 = vec![0.0; idx2.len()];
    let mut se4 = vec![0.0; idx4.len()];
    for (xs, lws) in &batches {
        for (k, lw) in lws.iter().enumerate() {
            let w = (lw - shift).exp();
            let x = &xs[k * n..(k + 1) * n];
            for (q, &(i, j)) in idx2.iter().enumerate() {
                let d = x[i] * x[j] - r2[q];
                se2[q] += w * w * d * d;
            }
            for (q, ix) in idx4.iter().enumerate() {
                let d = x[ix[0]] * x[ix[1]] * x[ix[2]] * x[ix[3]] - r4[q];
                se4[q] += w * w * d * d;
            }
        }
    }
    let second_err = se2.iter().map(|v| v.sqrt() / sums.s0).fold(0.0, f64::max);
    let fourth_err = se4.iter().map(|v| v.sqrt() / sums.s0).fold(0.0, f64::max);
    Ok(GibbsMoments {
        log_z: mean_w.ln() + shift,
        log_z_err,
        log_gauss_ratio: None,
        second: second_from_packed(n, &r2),
        second_err,
        fourth: want4.then(|| fourth_from_unique(n, &idx4, &r4)),
        fourth_err,
        n_evals: samples as u64,
        method: MethodUsed::MonteCarlo {
            samples,
            proposal_shift: eta,
        },
    })
}

/// Options for [`divergence_probe`].
#[derive(Debug, Clone)]
pub struct ProbeOptions {
    /// First box halfwidth `L0`; boxes are `L0 * 2^m`.
    pub initial_halfwidth: f64,
    pub max_doublings: usize,
    /// Growth factor per doubling that counts as divergence.
    pub divergence_ratio: f64,
    /// Consecutive doublings that must agree on a verdict.
    pub window: usize,
    /// Relative increment below which a box sequence counts as settled.
    pub target_rel_error: f64,
    /// Relative accuracy of each shell integral.
    pub quad_rel_tol: f64,
    pub max_evals: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            initial_halfwidth: 1.0,
            max_doublings: 64,
            divergence_ratio: 1.5,
            window: 3,
            target_rel_error: 1e-8,
            quad_rel_tol: 1e-10,
            max_evals: 2_000_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProbeVerdict {
    Convergent { estimate: f64, history: Vec<(f64, f64)> },
    Divergent { history: Vec<(f64, f64)> },
    Inconclusive { history: Vec<(f64, f64)> },
}

impl ProbeVerdict {
    pub fn is_divergent(&self) -> bool {
        matches!(self, Self::Divergent { .. })
    }

    pub fn is_convergent(&self) -> bool {
        matches!(self, Self::Convergent { .. })
    }

    /// `(halfwidth, log Z_L)` per box.
    pub fn history(&self) -> &[(f64, f64)] {
        match self {
            Self::Convergent { history, .. } | Self::Divergent { history } | Self::Inconclusive { history } => history,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Convergent { .. } => "Convergent",
            Self::Divergent { .. } => "Divergent",
            Self::Inconclusive { .. } => "Inconclusive",
        }
    }
}

/// Breakpoints `{lo, hi}` plus every `+-L0 2^k` and `0` strictly inside.
fn geometric_breaks(lo: f64, hi: f64, l0: f64) -> Vec<f64> {
    let mut b = vec![lo, hi];
    if lo < 0.0 && hi > 0.0 {
        b.push(0.0);
    }
    let mut s = l0;
    while s < hi.abs().max(lo.abs()) {
        for v in [s, -s] {
            if v > lo && v < hi {
                b.push(v);
            }
        }
        s *= 2.0;
    }
    b.sort_by(|x, y| x.total_cmp(y));
    b.dedup();
    b
}

/// `log` of the integral of `exp(-h)` over a product of intervals.
fn log_box_integral(model: &GibbsModel, ranges: &[(f64, f64)], l0: f64, opts: &ProbeOptions) -> (f64, u64) {
    let n = model.dim();
    // energy shift from a coarse scan of the region
    let k = 9usize;
    let mut emin = f64::INFINITY;
    let mut x = vec![0.0; n];
    for flat in 0..k.pow(n as u32) {
        let mut r = flat;
        for d in 0..n {
            let i = r % k;
            r /= k;
            let (lo, hi) = ranges[d];
            x[d] = lo + (hi - lo) * i as f64 / (k - 1) as f64;
        }
        emin = emin.min(model.energy(&x));
    }
    let breaks: Vec<Vec<f64>> = ranges.iter().map(|&(lo, hi)| geometric_breaks(lo, hi, l0)).collect();
    let copts = CubatureOptions {
        rel_tol: opts.quad_rel_tol,
        abs_floor: 0.0,
        max_panels: 4000,
        max_evals: opts.max_evals,
    };
    let mut evals = 0;
    // the scan can miss narrow valleys; retry with the lowest energy the
    // quadrature itself visited
    for _ in 0..4 {
        let seen = std::sync::Mutex::new(emin);
        let f = |x: &[f64]| {
            let e = model.energy(x);
            if e < emin {
                let mut s = seen.lock().unwrap();
                *s = s.min(e);
            }
            vec![(-(e - emin)).exp()]
        };
        let r = nested_cubature(&f, &breaks, 1, copts);
        evals += r.evals;
        let v = r.value[0];
        let lowest = *seen.lock().unwrap();
        if v.is_finite() && (lowest >= emin - 600.0 || v == 0.0) {
            return (v.ln() - emin, evals);
        }
        emin = lowest;
    }
    (f64::NAN, evals)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Integrates over growing boxes `[-L, L]^N`, `L = L0 2^m`, and classifies
/// the sequence of truncated partition functions.
pub fn divergence_probe(model: &GibbsModel, opts: &ProbeOptions) -> Result<ProbeVerdict> {
    let n = model.dim();
    if n > MAX_QUADRATURE_DIM {
        return Err(LwError::InvalidInput(format!(
            "divergence probe supports N <= {MAX_QUADRATURE_DIM}"
        )));
    }
    let l0 = opts.initial_halfwidth;
    let mut history: Vec<(f64, f64)> = Vec::new();
    let mut evals = 0u64;
    let (lz0, e0) = log_box_integral(model, &vec![(-l0, l0); n], l0, opts);
    evals += e0;
    history.push((l0, lz0));
    let mut prev_l = l0;
    for _m in 1..=opts.max_doublings {
        let l = 2.0 * prev_l;
        // shell [-L, L]^N \ [-L', L']^N split by the first coordinate outside [-L', L']
        let mut log_shell = f64::NEG_INFINITY;
        for d in 0..n {
            for side in [-1.0, 1.0] {
                let mut ranges = Vec::with_capacity(n);
                for c in 0..n {
                    ranges.push(if c < d {
                        (-prev_l, prev_l)
                    } else if c == d {
                        if side < 0.0 {
                            (-l, -prev_l)
                        } else {
                            (prev_l, l)
                        }
                    } else {
                        (-l, l)
                    });
                }
                let (v, e) = log_box_integral(model, &ranges, l0, opts);
                evals += e;
                log_shell = log_add(log_shell, v);
            }
        }
        let lz_prev = history.last().unwrap().1;
        let lz = log_add(lz_prev, log_shell);
        history.push((l, lz));
        prev_l = l;

        if lz.is_nan() {
            return Ok(ProbeVerdict::Inconclusive { history });
        }
        if lz == f64::INFINITY {
            return Ok(ProbeVerdict::Divergent { history });
        }
        let k = history.len();
        if k > opts.window {
            let growth_ok = (k - opts.window..k).all(|i| history[i].1 - history[i - 1].1 > opts.divergence_ratio.ln());
            if growth_ok {
                return Ok(ProbeVerdict::Divergent { history });
            }
            // relative increments (Z_m - Z_{m-1}) / Z_m
            let incs: Vec<f64> = (k - opts.window..k)
                .map(|i| 1.0 - (history[i - 1].1 - history[i].1).exp())
                .collect();
            let settled = incs.iter().all(|v| *v < opts.target_rel_error)
                && incs.windows(2).all(|w| w[1] <= w[0] || w[1] < 1e-15);
            if settled {
                return Ok(ProbeVerdict::Convergent {
                    estimate: lz.exp(),
                    history,
                });
            }
        }
        if evals > opts.max_evals {
            break;
        }
    }
    Ok(ProbeVerdict::Inconclusive { history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Interaction;

    const ROOT_2PI: f64 = 2.506_628_274_631_000_7;

    #[test]
    fn gaussian_partition_functions() {
        let spec = IntegrationSpec::default();
        let z = partition_function(&GibbsModel::gaussian(SymMatrix::identity(1)), &spec).unwrap();
        assert!((z.value - ROOT_2PI).abs() < 1e-13);
        let z = partition_function(&GibbsModel::gaussian(SymMatrix::identity(2)), &spec).unwrap();
        assert!((z.value - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn gaussian_free_energies() {
        let spec = IntegrationSpec::default();
        for n in 1..=3 {
            let om = free_energy(&GibbsModel::gaussian(SymMatrix::identity(n)), &spec).unwrap();
            assert!((om.value + 0.5 * n as f64 * (2.0 * PI).ln()).abs() < 1e-13);
        }
        let om = free_energy(&GibbsModel::gaussian(SymMatrix::diag(&[2.0, 4.0])), &spec).unwrap();
        let exact = -0.5 * ((2.0 * PI).powi(2) / 8.0).ln();
        assert!((om.value - exact).abs() < 1e-13);
        assert!((om.value - (-0.798_156_295_569)).abs() < 1e-9);
    }

    #[test]
    fn gaussian_green_and_wick() {
        let spec = IntegrationSpec::default();
        let g = green_function(&GibbsModel::gaussian(SymMatrix::diag(&[2.0, 4.0])), &spec).unwrap();
        assert!((&g.value - &SymMatrix::diag(&[0.5, 0.25])).max_abs() < 1e-14);
        let t = fourth_moment_tensor(&GibbsModel::gaussian(SymMatrix::identity(1)), &spec).unwrap();
        assert!((t.value.get(0, 0, 0, 0) - 3.0).abs() < 1e-13);
        let t = fourth_moment_tensor(&GibbsModel::gaussian(SymMatrix::identity(2)), &spec).unwrap();
        assert!((t.value.get(0, 0, 1, 1) - 1.0).abs() < 1e-13);
        assert!(t.value.get(0, 0, 0, 1).abs() < 1e-14);
    }

    #[test]
    fn indefinite_gaussian_is_rejected() {
        let m = GibbsModel::gaussian(SymMatrix::scalar(-1.0));
        assert!(matches!(
            partition_function(&m, &IntegrationSpec::default()),
            Err(LwError::DivergenceDetected(_))
        ));
    }

    #[test]
    fn box_and_hermite_agree_on_interacting_model() {
        let u = Interaction::quartic_1d(1.0).unwrap();
        let m = GibbsModel::new(SymMatrix::scalar(1.0), u, 0.5).unwrap();
        let gh = gibbs_moments(&m, &IntegrationSpec::precise(), true).unwrap();
        assert!(matches!(gh.method, MethodUsed::GaussHermite { .. }));
        let spec = IntegrationSpec {
            truncation_box_halfwidth: Some(12.0),
            ..IntegrationSpec::precise()
        };
        let bx = gibbs_moments(&m, &spec, true).unwrap();
        assert!(matches!(bx.method, MethodUsed::AdaptiveBox { .. }));
        assert!((gh.log_z - bx.log_z).abs() < 1e-11);
        assert!((gh.second.get(0, 0) - bx.second.get(0, 0)).abs() < 1e-11);
        let (a, b) = (gh.fourth.unwrap(), bx.fourth.unwrap());
        assert!((a.get(0, 0, 0, 0) - b.get(0, 0, 0, 0)).abs() < 1e-10);
    }

    #[test]
    fn monte_carlo_spec_validation() {
        let spec = IntegrationSpec::monte_carlo(100, 1);
        let m = GibbsModel::gaussian(SymMatrix::identity(1));
        assert!(matches!(gibbs_moments(&m, &spec, false), Err(LwError::InvalidInput(_))));
    }

    #[test]
    fn monte_carlo_is_deterministic_per_seed() {
        let m = GibbsModel::new(
            SymMatrix::identity(4),
            Interaction::coulomb(SymMatrix::identity(4)).unwrap(),
            0.3,
        )
        .unwrap();
        let spec = IntegrationSpec::monte_carlo(20_000, 7);
        let a = gibbs_moments(&m, &spec, false).unwrap();
        let b = gibbs_moments(&m, &spec, false).unwrap();
        assert_eq!(a.log_z.to_bits(), b.log_z.to_bits());
        assert_eq!(a.second, b.second);
        let c = gibbs_moments(&m, &IntegrationSpec::monte_carlo(20_000, 8), false).unwrap();
        assert_ne!(a.log_z.to_bits(), c.log_z.to_bits());
        assert!((a.log_z - c.log_z).abs() < 5.0 * (a.log_z_err + c.log_z_err));
    }

    #[test]
    fn probe_examples() {
        let opts = ProbeOptions::default();
        let v = divergence_probe(&GibbsModel::gaussian(SymMatrix::scalar(-1.0)), &opts).unwrap();
        assert!(v.is_divergent());
        let v = divergence_probe(&GibbsModel::gaussian(SymMatrix::scalar(1.0)), &opts).unwrap();
        match v {
            ProbeVerdict::Convergent { estimate, .. } => assert!((estimate - ROOT_2PI).abs() < 1e-8),
            other => panic!("expected convergence, got {other:?}"),
        }
    }

    #[test]
    fn geometric_breaks_cover_range() {
        assert_eq!(
            geometric_breaks(-4.0, 4.0, 1.0),
            vec![-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0]
        );
        assert_eq!(geometric_breaks(2.0, 4.0, 1.0), vec![2.0, 4.0]);
    }
}
