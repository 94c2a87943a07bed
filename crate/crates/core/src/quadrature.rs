//! Quadrature primitives: Gauss-Hermite rules for the weight `exp(-y^2/2)`
//! and a nested, vector-valued adaptive Gauss-Kronrod integrator over
//! products of intervals.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

/// Nodes and weights for `\int f(y) exp(-y^2/2) dy ~ sum_i w_i f(y_i)`.
#[derive(Debug, Clone)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Cached Gauss-Hermite rule with `n` points for the weight `exp(-y^2/2)`.
pub fn hermite_rule(n: usize) -> Arc<HermiteRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<HermiteRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().unwrap().get(&n) {
        return r.clone();
    }
    let rule = Arc::new(compute_hermite(n));
    cache.lock().unwrap().insert(n, rule.clone());
    rule
}

/// Golub-Welsch eigenvalues of the Jacobi matrix for the physicists'
/// weight `exp(-t^2)`, polished by Newton on the orthonormal recurrence;
/// the rule is then rescaled to `exp(-y^2/2)` with `y = sqrt(2) t`.
fn compute_hermite(n: usize) -> HermiteRule {
    assert!(n >= 1);
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let nf = n as f64;
    let jacobi = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let mut guesses: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
    guesses.sort_by(|a, b| b.total_cmp(a));
    let m = n.div_ceil(2);
    let mut t = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..m {
        let mut z = guesses[i];
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        t[i] = z;
        t[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        t[m - 1] = 0.0;
    }
    let s2 = std::f64::consts::SQRT_2;
    HermiteRule {
        nodes: t.iter().rev().map(|x| x * s2).collect(),
        weights: w.iter().rev().map(|x| x * s2).collect(),
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of a vector-valued integration.
///
/// `value[k]` integrates component `k`, `abs[k]` integrates its absolute
/// value (used as the scale for relative error control) and `err[k]` is
/// the estimated absolute error.
#[derive(Debug, Clone)]
pub struct VecQuad {
    pub value: Vec<f64>,
    pub abs: Vec<f64>,
    pub err: Vec<f64>,
    pub evals: u64,
    pub converged: bool,
}

impl VecQuad {
    fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.value.len());
        v.extend_from_slice(&self.value);
        v.extend_from_slice(&self.abs);
        v.extend_from_slice(&self.err);
        v
    }
}

#[derive(Clone)]
struct Panel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    abs: Vec<f64>,
    inner_err: Vec<f64>,
    err: Vec<f64>,
    evals: u64,
    converged: bool,
}

/// Integrates a panel with the 15-point Kronrod rule. `f` returns
/// `(flat, evals, converged)` where `flat = [value(m), abs(m), err(m)]`.
fn kronrod_panel<F>(f: &F, a: f64, b: f64, m: usize, parallel: bool) -> Panel
where
    F: Fn(f64) -> (Vec<f64>, u64, bool) + Sync,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut pts = Vec::with_capacity(15);
    for k in 0..7 {
        pts.push(c - h * XGK[k]);
        pts.push(c + h * XGK[k]);
    }
    pts.push(c);
    let evals: Vec<(Vec<f64>, u64, bool)> = if parallel {
        pts.par_iter().map(|&x| f(x)).collect()
    } else {
        pts.iter().map(|&x| f(x)).collect()
    };
    let width = 3 * m;
    let mut kron = vec![0.0; width];
    let mut gauss = vec![0.0; m];
    let mut resasc = vec![0.0; m];
    let mut n_evals = 0;
    let mut converged = true;
    let weight_of = |idx: usize| -> (f64, f64) {
        if idx == 14 {
            (WGK[7], WG[3])
        } else {
            let k = idx / 2;
            let wg = if k % 2 == 1 { WG[k / 2] } else { 0.0 };
            (WGK[k], wg)
        }
    };
    for (idx, (vals, ne, conv)) in evals.iter().enumerate() {
        n_evals += ne;
        converged &= conv;
        let (wk, wg) = weight_of(idx);
        for q in 0..width {
            kron[q] += wk * vals[q];
        }
        for q in 0..m {
            gauss[q] += wg * vals[q];
        }
    }
    for q in 0..m {
        let mean = 0.5 * kron[q];
        let mut acc = 0.0;
        for (idx, (vals, _, _)) in evals.iter().enumerate() {
            let (wk, _) = weight_of(idx);
            acc += wk * (vals[q] - mean).abs();
        }
        resasc[q] = acc * h;
    }
    let mut value = vec![0.0; m];
    let mut abs = vec![0.0; m];
    let mut inner_err = vec![0.0; m];
    let mut err = vec![0.0; m];
    for q in 0..m {
        value[q] = kron[q] * h;
        abs[q] = kron[m + q].abs() * h;
        inner_err[q] = kron[2 * m + q].abs() * h;
        let diff = ((kron[q] - gauss[q]) * h).abs();
        let mut e = diff;
        if resasc[q] != 0.0 && diff != 0.0 {
            e = resasc[q] * (200.0 * diff / resasc[q]).powf(1.5).min(1.0);
        }
        let round = 50.0 * f64::EPSILON * abs[q];
        err[q] = e.max(round);
    }
    Panel {
        a,
        b,
        value,
        abs,
        inner_err,
        err,
        evals: n_evals,
        converged,
    }
}

/// Adaptive 1D integration of a vector-valued integrand over `[breaks[0], breaks.last()]`
/// with the given breakpoints as initial panels.
///
/// Stops when, for every component, the summed error is below
/// `rel_tol * abs_integral + abs_floor`.
pub fn adaptive_1d<F>(
    f: &F,
    breaks: &[f64],
    m: usize,
    rel_tol: f64,
    abs_floor: f64,
    max_panels: usize,
    parallel: bool,
) -> VecQuad
where
    F: Fn(f64) -> (Vec<f64>, u64, bool) + Sync,
{
    assert!(breaks.len() >= 2);
    let mut panels: Vec<Panel> = if parallel {
        breaks
            .windows(2)
            .map(|w| kronrod_panel(f, w[0], w[1], m, true))
            .collect()
    } else {
        breaks
            .windows(2)
            .map(|w| kronrod_panel(f, w[0], w[1], m, false))
            .collect()
    };
    let mut converged = false;
    loop {
        let mut total_err = vec![0.0; m];
        let mut total_abs = vec![0.0; m];
        for p in &panels {
            for q in 0..m {
                total_err[q] += p.err[q];
                total_abs[q] += p.abs[q];
            }
        }
        let tol: Vec<f64> = (0..m).map(|q| rel_tol * total_abs[q] + abs_floor).collect();
        if (0..m).all(|q| total_err[q] <= tol[q]) {
            converged = true;
            break;
        }
        if panels.len() >= max_panels {
            break;
        }
        // bisect the panel with the largest error relative to its component tolerance
        let score = |p: &Panel| -> f64 {
            (0..m)
                .map(|q| if tol[q] > 0.0 { p.err[q] / tol[q] } else { p.err[q] })
                .fold(0.0, f64::max)
        };
        let (worst, _) = panels
            .iter()
            .enumerate()
            .map(|(i, p)| (i, score(p)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if !(mid > p.a && mid < p.b) {
            // cannot bisect further; keep the panel and stop refining
            panels.push(p);
            break;
        }
        panels.push(kronrod_panel(f, p.a, mid, m, parallel));
        panels.push(kronrod_panel(f, mid, p.b, m, parallel));
    }
    // deterministic summation order
    panels.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut out = VecQuad {
        value: vec![0.0; m],
        abs: vec![0.0; m],
        err: vec![0.0; m],
        evals: 0,
        converged,
    };
    for p in &panels {
        out.evals += p.evals;
        out.converged &= p.converged;
        for q in 0..m {
            out.value[q] += p.value[q];
            out.abs[q] += p.abs[q];
            out.err[q] += p.err[q] + p.inner_err[q];
        }
    }
    out
}

/// Controls for [`nested_cubature`].
#[derive(Debug, Clone, Copy)]
pub struct CubatureOptions {
    pub rel_tol: f64,
    pub abs_floor: f64,
    pub max_panels: usize,
    /// Integrand evaluations after which the cubature gives up and reports
    /// `converged = false`.
    pub max_evals: u64,
}

/// Iterated adaptive Gauss-Kronrod over a product of intervals.
///
/// `breaks[d]` are the initial panel breakpoints of coordinate `d`. The
/// integrand returns `m` components; coordinate 0 is the innermost
/// integral, and the outermost level is evaluated in parallel.
pub fn nested_cubature<F>(f: &F, breaks: &[Vec<f64>], m: usize, opts: CubatureOptions) -> VecQuad
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let n = breaks.len();
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let used = AtomicU64::new(0);
    let mut r = nested_level(f, breaks, m, opts, n - 1, &mut x, true, &used);
    r.evals = r.evals.max(used.load(Ordering::Relaxed));
    r
}

#[allow(clippy::too_many_arguments)]
fn nested_level<F>(
    f: &F,
    breaks: &[Vec<f64>],
    m: usize,
    opts: CubatureOptions,
    d: usize,
    x: &mut [f64],
    top: bool,
    used: &AtomicU64,
) -> VecQuad
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let prefix: Vec<f64> = x.to_vec();
    let g = |t: f64| -> (Vec<f64>, u64, bool) {
        if used.load(Ordering::Relaxed) > opts.max_evals {
            return (vec![0.0; 3 * m], 0, false);
        }
        let mut xx = prefix.clone();
        xx[d] = t;
        if d == 0 {
            used.fetch_add(1, Ordering::Relaxed);
            let vals = f(&xx);
            let mut flat = Vec::with_capacity(3 * m);
            flat.extend_from_slice(&vals);
            flat.extend(vals.iter().map(|v| v.abs()));
            flat.extend(std::iter::repeat_n(0.0, m));
            (flat, 1, true)
        } else {
            let r = nested_level(f, breaks, m, opts, d - 1, &mut xx, false, used);
            (r.flatten(), r.evals, r.converged)
        }
    };
    adaptive_1d(
        &g,
        &breaks[d],
        m,
        opts.rel_tol,
        opts.abs_floor,
        opts.max_panels,
        top && d > 0,
    )
}

/// `k` equal panels on `[lo, hi]`.
pub fn uniform_breaks(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    (0..=k)
        .map(|i| {
            if i == k {
                hi
            } else {
                lo + (hi - lo) * i as f64 / k as f64
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_rule_integrates_gaussian_moments() {
        let root2pi = (2.0 * std::f64::consts::PI).sqrt();
        for &n in &[1usize, 2, 5, 20, 64, 200] {
            let r = hermite_rule(n);
            let m0: f64 = r.weights.iter().sum();
            assert!((m0 / root2pi - 1.0).abs() < 1e-13, "n={n} m0={m0}");
            if n >= 3 {
                let m2: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x * x).sum();
                let m4: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(4)).sum();
                assert!((m2 / root2pi - 1.0).abs() < 1e-12);
                assert!((m4 / root2pi - 3.0).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn hermite_nodes_sorted_and_symmetric() {
        let r = hermite_rule(31);
        for w in r.nodes.windows(2) {
            assert!(w[0] < w[1]);
        }
        for i in 0..31 {
            assert!((r.nodes[i] + r.nodes[30 - i]).abs() < 1e-13);
        }
        assert_eq!(r.nodes[15], 0.0);
    }

    #[test]
    fn adaptive_handles_jump() {
        let f = |x: f64| {
            let v = if x < 0.3 { 1.0 } else { 2.0 };
            (vec![v, v, 0.0], 1, true)
        };
        let r = adaptive_1d(&f, &[0.0, 1.0], 1, 1e-10, 0.0, 10_000, false);
        assert!(r.converged);
        assert!((r.value[0] - 1.7).abs() < 1e-9);
    }

    #[test]
    fn nested_gaussian_2d() {
        let f = |x: &[f64]| {
            let w = (-0.5 * (x[0] * x[0] + 2.0 * x[1] * x[1])).exp();
            vec![w, x[0] * x[0] * w]
        };
        let br = vec![uniform_breaks(-10.0, 10.0, 4), uniform_breaks(-10.0, 10.0, 4)];
        let opts = CubatureOptions {
            rel_tol: 1e-12,
            abs_floor: 0.0,
            max_panels: 200,
            max_evals: u64::MAX,
        };
        let r = nested_cubature(&f, &br, 2, opts);
        let exact = 2.0 * std::f64::consts::PI / 2f64.sqrt();
        assert!((r.value[0] / exact - 1.0).abs() < 1e-11);
        assert!((r.value[1] / r.value[0] - 1.0).abs() < 1e-11);
    }
}
