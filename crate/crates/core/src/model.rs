//! Gibbs models `h(x) = 1/2 x^T A x + eps U(x)`: interactions, growth
//! metadata and domain membership of the quadratic form.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LwError, Result};
use crate::integrate::{divergence_probe, ProbeOptions, ProbeVerdict};
use crate::linalg::{Matrix, SymMatrix};

/// Smallest eigenvalue accepted for the Coulomb matrix `v`.
pub const COULOMB_EIG_FLOOR: f64 = 1e-12;

/// Pure interaction callable `x -> U(x)`.
pub type InteractionFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Growth-condition metadata.
///
/// `weak_constant` is a `C_U` with `U(x) + C_U (1 + |x|^2) >= 0`; `strong`
/// claims that `U` eventually beats every quadratic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthMeta {
    pub weak_constant: Option<f64>,
    pub strong: bool,
}

impl GrowthMeta {
    pub const NONNEGATIVE: GrowthMeta = GrowthMeta {
        weak_constant: Some(0.0),
        strong: false,
    };
    pub const COERCIVE: GrowthMeta = GrowthMeta {
        weak_constant: Some(0.0),
        strong: true,
    };
}

#[derive(Clone)]
pub enum InteractionKind {
    Zero,
    /// `U(x) = 1/8 sum_ij v_ij x_i^2 x_j^2` with `v` positive definite.
    GeneralizedCoulomb {
        v: SymMatrix,
    },
    /// `U(x) = lambda x^4 / 8`.
    Quartic1D {
        lambda: f64,
    },
    /// Two-dimensional interaction with weak but not strong growth:
    /// `|x1|^4` when `|x1| <= 1/|x2|`, otherwise `|x2|^-4`.
    Counterexample,
    Custom {
        dim: usize,
        func: InteractionFn,
        growth: GrowthMeta,
        /// Degree if `U(t x) = t^d U(x)` for all `t > 0`.
        homogeneous_degree: Option<u32>,
        label: String,
    },
}

impl fmt::Debug for InteractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::GeneralizedCoulomb { v } => write!(f, "GeneralizedCoulomb({v:?})"),
            Self::Quartic1D { lambda } => write!(f, "Quartic1D({lambda})"),
            Self::Counterexample => write!(f, "Counterexample"),
            Self::Custom { dim, label, .. } => write!(f, "Custom[{label}; dim={dim}]"),
        }
    }
}

impl InteractionKind {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::GeneralizedCoulomb { v } => {
                let n = v.dim();
                let mut s = 0.0;
                for i in 0..n {
                    let xi2 = x[i] * x[i];
                    let mut row = 0.0;
                    for j in 0..n {
                        row += v.get(i, j) * x[j] * x[j];
                    }
                    s += xi2 * row;
                }
                0.125 * s
            }
            Self::Quartic1D { lambda } => 0.125 * lambda * x[0].powi(4),
            Self::Counterexample => {
                let (a, b) = (x[0].abs(), x[1].abs());
                if a * b <= 1.0 {
                    a.powi(4)
                } else {
                    b.powi(-4)
                }
            }
            Self::Custom { func, .. } => func(x),
        }
    }

    fn growth(&self) -> GrowthMeta {
        match self {
            Self::Zero | Self::Counterexample => GrowthMeta::NONNEGATIVE,
            Self::GeneralizedCoulomb { .. } => GrowthMeta::COERCIVE,
            Self::Quartic1D { lambda } => {
                if *lambda > 0.0 {
                    GrowthMeta::COERCIVE
                } else {
                    GrowthMeta::NONNEGATIVE
                }
            }
            Self::Custom { growth, .. } => *growth,
        }
    }

    fn homogeneous_degree(&self) -> Option<u32> {
        match self {
            Self::Zero | Self::GeneralizedCoulomb { .. } | Self::Quartic1D { .. } => Some(4),
            Self::Counterexample => None,
            Self::Custom { homogeneous_degree, .. } => *homogeneous_degree,
        }
    }
}

/// Interaction `U` on `R^N`, optionally acting only on a fragment of the
/// coordinates.
#[derive(Clone, Debug)]
pub struct Interaction {
    kind: InteractionKind,
    dim: usize,
    /// Impurity variables. When `embedded` is true the kind is evaluated on
    /// `x[fragment]`; otherwise the fragment is a marker for an interaction
    /// evaluated on all of `x` that ignores the other coordinates.
    fragment: Option<Vec<usize>>,
    embedded: bool,
}

impl Interaction {
    pub fn zero(dim: usize) -> Self {
        Self {
            kind: InteractionKind::Zero,
            dim,
            fragment: None,
            embedded: false,
        }
    }

    /// Generalized Coulomb interaction; `v` must be positive definite.
    pub fn coulomb(v: SymMatrix) -> Result<Self> {
        let lmin = v.min_eigenvalue();
        if !(lmin > COULOMB_EIG_FLOOR) {
            return Err(LwError::NotPositiveDefinite(format!(
                "Coulomb matrix v has smallest eigenvalue {lmin:e}"
            )));
        }
        let dim = v.dim();
        Ok(Self {
            kind: InteractionKind::GeneralizedCoulomb { v },
            dim,
            fragment: None,
            embedded: false,
        })
    }

    pub fn quartic_1d(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(LwError::InvalidInput(format!(
                "quartic coupling must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(Self {
            kind: InteractionKind::Quartic1D { lambda },
            dim: 1,
            fragment: None,
            embedded: false,
        })
    }

    pub fn counterexample() -> Self {
        Self {
            kind: InteractionKind::Counterexample,
            dim: 2,
            fragment: None,
            embedded: false,
        }
    }

    /// User-supplied interaction. Growth metadata must be declared; the weak
    /// constant is spot-checked on a randomized sample.
    pub fn custom(
        dim: usize,
        label: impl Into<String>,
        growth: GrowthMeta,
        homogeneous_degree: Option<u32>,
        func: InteractionFn,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(LwError::InvalidInput("interaction dimension must be >= 1".into()));
        }
        let u = Self {
            kind: InteractionKind::Custom {
                dim,
                func,
                growth,
                homogeneous_degree,
                label: label.into(),
            },
            dim,
            fragment: None,
            embedded: false,
        };
        u.verify_weak_growth(512, 0x5eed)?;
        Ok(u)
    }

    /// Embeds a `p`-dimensional interaction into `R^n`, acting on `fragment`.
    pub fn impurity(inner: Interaction, fragment: Vec<usize>, n: usize) -> Result<Self> {
        if inner.fragment.is_some() {
            return Err(LwError::InvalidInput("nested fragments are not supported".into()));
        }
        validate_fragment(&fragment, n)?;
        if inner.dim != fragment.len() {
            return Err(LwError::DimensionMismatch {
                expected: fragment.len(),
                found: inner.dim,
            });
        }
        if fragment.len() == n && fragment.iter().enumerate().all(|(i, &f)| i == f) {
            return Ok(inner);
        }
        Ok(Self {
            kind: inner.kind,
            dim: n,
            fragment: Some(fragment),
            embedded: true,
        })
    }

    /// Marks a full-dimensional interaction as depending only on `fragment`.
    /// The claim is spot-checked at random points.
    pub fn with_fragment_marker(mut self, fragment: Vec<usize>) -> Result<Self> {
        validate_fragment(&fragment, self.dim)?;
        self.fragment = Some(fragment);
        self.embedded = false;
        self.verify_fragment_invariance(256, 0xf4a9)?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &InteractionKind {
        &self.kind
    }

    pub fn fragment(&self) -> Option<&[usize]> {
        self.fragment.as_deref()
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, InteractionKind::Zero)
    }

    /// `U(x)`; `x` must have length `dim()`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match (&self.fragment, self.embedded) {
            (Some(frag), true) => {
                let mut buf = [0.0; 8];
                if frag.len() <= buf.len() {
                    for (k, &i) in frag.iter().enumerate() {
                        buf[k] = x[i];
                    }
                    self.kind.eval(&buf[..frag.len()])
                } else {
                    let y: Vec<f64> = frag.iter().map(|&i| x[i]).collect();
                    self.kind.eval(&y)
                }
            }
            _ => self.kind.eval(x),
        }
    }

    pub fn growth(&self) -> GrowthMeta {
        let g = self.kind.growth();
        match &self.fragment {
            Some(f) if f.len() < self.dim => GrowthMeta {
                weak_constant: g.weak_constant,
                strong: false,
            },
            _ => g,
        }
    }

    /// Growth of the interaction restricted to its fragment.
    pub fn fragment_growth(&self) -> GrowthMeta {
        self.kind.growth()
    }

    pub fn homogeneous_degree(&self) -> Option<u32> {
        self.kind.homogeneous_degree()
    }

    pub fn is_homogeneous_quartic(&self) -> bool {
        self.homogeneous_degree() == Some(4)
    }

    /// The interaction as a function on the fragment coordinates only.
    pub fn restrict_to_fragment(&self) -> Result<Interaction> {
        let frag = match &self.fragment {
            Some(f) => f.clone(),
            None => return Ok(self.clone()),
        };
        if self.embedded {
            return Ok(Interaction {
                kind: self.kind.clone(),
                dim: frag.len(),
                fragment: None,
                embedded: false,
            });
        }
        let full = self.clone_unmarked();
        let n = self.dim;
        let p = frag.len();
        let growth = self.kind.growth();
        Interaction::custom(
            p,
            format!("restrict({:?})", self.kind),
            GrowthMeta {
                weak_constant: growth.weak_constant,
                strong: false,
            },
            self.homogeneous_degree(),
            Arc::new(move |y: &[f64]| {
                let mut x = vec![0.0; n];
                for (k, &i) in frag.iter().enumerate() {
                    x[i] = y[k];
                }
                full.eval(&x)
            }),
        )
    }

    fn clone_unmarked(&self) -> Interaction {
        let mut c = self.clone();
        if !c.embedded {
            c.fragment = None;
        }
        c
    }

    /// `y -> U(y, 0)` on the leading `p` coordinates.
    pub fn slice_leading(&self, p: usize) -> Result<Interaction> {
        if p == 0 || p > self.dim {
            return Err(LwError::InvalidInput(format!(
                "cannot slice {p} leading coordinates of a {}-dim interaction",
                self.dim
            )));
        }
        if p == self.dim {
            return Ok(self.clone());
        }
        if self.fragment.is_none() {
            match &self.kind {
                InteractionKind::Zero => return Ok(Interaction::zero(p)),
                InteractionKind::GeneralizedCoulomb { v } => {
                    return Interaction::coulomb(v.leading_block(p));
                }
                _ => {}
            }
        }
        let full = self.clone();
        let n = self.dim;
        Interaction::custom(
            p,
            format!("slice({:?}, {p})", self.kind),
            self.growth(),
            self.homogeneous_degree(),
            Arc::new(move |y: &[f64]| {
                let mut x = vec![0.0; n];
                x[..p].copy_from_slice(y);
                full.eval(&x)
            }),
        )
    }

    /// Spot check of `U(x) + C_U (1 + |x|^2) >= 0`.
    pub fn verify_weak_growth(&self, samples: usize, seed: u64) -> Result<()> {
        let c = match self.growth().weak_constant {
            Some(c) => c,
            None => return Ok(()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; self.dim];
        for s in 0..samples {
            // radii spread over several decades
            let scale = 10f64.powf(-2.0 + 5.0 * (s as f64 / samples as f64));
            for xi in x.iter_mut() {
                *xi = scale * (2.0 * rng.random::<f64>() - 1.0);
            }
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let lhs = self.eval(&x) + c * (1.0 + r2);
            if lhs < -1e-12 * (1.0 + c * r2) {
                return Err(LwError::InvalidInput(format!(
                    "weak growth constant {c} violated at x = {x:?}"
                )));
            }
        }
        Ok(())
    }

    /// Spot check that `U` ignores the off-fragment coordinates.
    pub fn verify_fragment_invariance(&self, samples: usize, seed: u64) -> Result<()> {
        let frag = match &self.fragment {
            Some(f) => f,
            None => return Ok(()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; self.dim];
        let mut y = vec![0.0; self.dim];
        for _ in 0..samples {
            for i in 0..self.dim {
                x[i] = 4.0 * (2.0 * rng.random::<f64>() - 1.0);
                y[i] = if frag.contains(&i) {
                    x[i]
                } else {
                    4.0 * (2.0 * rng.random::<f64>() - 1.0)
                };
            }
            let (a, b) = (self.eval(&x), self.eval(&y));
            if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
                return Err(LwError::InvalidInput(format!(
                    "interaction depends on off-fragment coordinates at {x:?}"
                )));
            }
        }
        Ok(())
    }
}

fn validate_fragment(fragment: &[usize], n: usize) -> Result<()> {
    if fragment.is_empty() {
        return Err(LwError::InvalidInput("fragment must be non-empty".into()));
    }
    let mut seen = vec![false; n];
    for &i in fragment {
        if i >= n || seen[i] {
            return Err(LwError::InvalidInput(format!(
                "fragment index {i} out of range or repeated (N = {n})"
            )));
        }
        seen[i] = true;
    }
    Ok(())
}

/// `x -> U(T x)`.
///
/// Zero stays Zero; a Coulomb interaction under a diagonal `T` with nonzero
/// entries stays Coulomb with `v'_ij = v_ij t_i^2 t_j^2`; everything else
/// becomes `Custom`.
pub fn transform_interaction(u: &Interaction, t: &Matrix) -> Result<Interaction> {
    let n = u.dim();
    if t.nrows() != n || t.ncols() != n {
        return Err(LwError::DimensionMismatch {
            expected: n,
            found: t.nrows(),
        });
    }
    if u.is_zero() {
        return Ok(Interaction::zero(n));
    }
    let is_diag = (0..n).all(|i| (0..n).all(|j| i == j || t[(i, j)] == 0.0));
    if let (InteractionKind::GeneralizedCoulomb { v }, None) = (&u.kind, &u.fragment) {
        if is_diag && (0..n).all(|i| t[(i, i)] != 0.0) {
            let v2 = SymMatrix::from_fn(n, |i, j| v.get(i, j) * t[(i, i)].powi(2) * t[(j, j)].powi(2));
            if let Ok(c) = Interaction::coulomb(v2) {
                return Ok(c);
            }
        }
    }
    let svd = t.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let g = u.growth();
    let growth = GrowthMeta {
        weak_constant: g.weak_constant.map(|c| c * smax.max(1.0).powi(2)),
        strong: g.strong && smin > 0.0,
    };
    let inner = u.clone();
    let tt = t.clone();
    let composed = Interaction::custom(
        n,
        format!("{:?} o T", u.kind),
        growth,
        u.homogeneous_degree(),
        Arc::new(move |x: &[f64]| {
            let mut y = [0.0; 8];
            if n <= y.len() {
                for i in 0..n {
                    let mut s = 0.0;
                    for j in 0..n {
                        s += tt[(i, j)] * x[j];
                    }
                    y[i] = s;
                }
                inner.eval(&y[..n])
            } else {
                let yv: Vec<f64> = (0..n).map(|i| (0..n).map(|j| tt[(i, j)] * x[j]).sum()).collect();
                inner.eval(&yv)
            }
        }),
    )?;
    // a diagonal T keeps an embedded fragment structure
    if is_diag {
        if let Some(frag) = u.fragment() {
            if frag.iter().all(|&i| t[(i, i)] != 0.0) {
                return composed.with_fragment_marker(frag.to_vec());
            }
        }
    }
    Ok(composed)
}

/// `(A, U, eps)` with Hamiltonian `1/2 x^T A x + eps U(x)`.
#[derive(Clone, Debug)]
pub struct GibbsModel {
    pub a: SymMatrix,
    pub interaction: Interaction,
    pub epsilon: f64,
}

impl GibbsModel {
    pub fn new(a: SymMatrix, interaction: Interaction, epsilon: f64) -> Result<Self> {
        if a.dim() != interaction.dim() {
            return Err(LwError::DimensionMismatch {
                expected: a.dim(),
                found: interaction.dim(),
            });
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(LwError::InvalidInput(format!(
                "coupling must be finite and >= 0, got {epsilon}"
            )));
        }
        Ok(Self {
            a,
            interaction,
            epsilon,
        })
    }

    /// Non-interacting model with quadratic part `a`.
    pub fn gaussian(a: SymMatrix) -> Self {
        let n = a.dim();
        Self {
            a,
            interaction: Interaction::zero(n),
            epsilon: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn with_a(&self, a: SymMatrix) -> Self {
        Self {
            a,
            interaction: self.interaction.clone(),
            epsilon: self.epsilon,
        }
    }

    /// True when the interaction term vanishes identically.
    pub fn is_gaussian(&self) -> bool {
        self.epsilon == 0.0 || self.interaction.is_zero()
    }

    /// Unchecked `h(x)`.
    #[inline]
    pub fn energy(&self, x: &[f64]) -> f64 {
        let q = 0.5 * self.a.quad_form(x);
        if self.is_gaussian() {
            q
        } else {
            q + self.epsilon * self.interaction.eval(x)
        }
    }

    /// `eps U(x)` alone.
    #[inline]
    pub fn interaction_energy(&self, x: &[f64]) -> f64 {
        if self.is_gaussian() {
            0.0
        } else {
            self.epsilon * self.interaction.eval(x)
        }
    }
}

/// `h(x) = 1/2 x^T A x + eps U(x)`.
pub fn hamiltonian(model: &GibbsModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim() {
        return Err(LwError::DimensionMismatch {
            expected: model.dim(),
            found: x.len(),
        });
    }
    Ok(model.energy(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainVerdict {
    Inside,
    Outside,
    Unknown,
}

/// Analytic part of the domain test; `None` when no certificate applies.
pub fn domain_certificate(model: &GibbsModel) -> Option<DomainVerdict> {
    let a = &model.a;
    if model.is_gaussian() {
        return Some(if a.is_positive_definite() {
            DomainVerdict::Inside
        } else {
            DomainVerdict::Outside
        });
    }
    let u = &model.interaction;
    let g = u.growth();
    if g.strong {
        return Some(DomainVerdict::Inside);
    }
    if let Some(c) = g.weak_constant {
        // h >= 1/2 (lmin - 2 eps c) |x|^2 - eps c
        if a.min_eigenvalue() > 2.0 * model.epsilon * c.max(0.0) {
            return Some(DomainVerdict::Inside);
        }
    }
    if let Some(frag) = u.fragment() {
        let n = model.dim();
        let rest: Vec<usize> = (0..n).filter(|i| !frag.contains(i)).collect();
        if !rest.is_empty() {
            let a22 = a.principal(&rest);
            if !a22.is_positive_definite() {
                return Some(DomainVerdict::Outside);
            }
            // Schur complement A11 - A12 A22^-1 A21 on the fragment
            let a11 = a.principal(frag);
            let a22inv = a22.inverse().ok()?;
            let p = frag.len();
            let mut a12 = Matrix::zeros(p, rest.len());
            for (r, &i) in frag.iter().enumerate() {
                for (c, &j) in rest.iter().enumerate() {
                    a12[(r, c)] = a.get(i, j);
                }
            }
            let corr = &a12 * a22inv.as_matrix() * a12.transpose();
            let schur = SymMatrix::symmetrize(&(a11.as_matrix() - corr));
            let restricted = u.restrict_to_fragment().ok()?;
            let sub = GibbsModel::new(schur, restricted, model.epsilon).ok()?;
            return domain_certificate(&sub);
        }
    }
    None
}

/// Membership of `A` in `dom Omega`: analytic certificates first, then a
/// numerical divergence probe.
pub fn check_domain_membership(model: &GibbsModel) -> DomainVerdict {
    if let Some(v) = domain_certificate(model) {
        return v;
    }
    match divergence_probe(model, &ProbeOptions::default()) {
        Ok(ProbeVerdict::Divergent { .. }) => DomainVerdict::Outside,
        Ok(ProbeVerdict::Convergent { .. }) => DomainVerdict::Inside,
        _ => DomainVerdict::Unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hamiltonian_examples() {
        let m = GibbsModel::gaussian(SymMatrix::identity(1));
        assert_eq!(hamiltonian(&m, &[2.0]).unwrap(), 2.0);

        let m = GibbsModel::new(SymMatrix::scalar(-1.0), Interaction::quartic_1d(1.0).unwrap(), 1.0).unwrap();
        assert_eq!(hamiltonian(&m, &[2.0]).unwrap(), 0.0);

        let u = Interaction::coulomb(SymMatrix::identity(2)).unwrap();
        let m = GibbsModel::new(SymMatrix::identity(2), u, 1.0).unwrap();
        // 1 + (1/8)(1 + 2*0 + 1) with v = I: off-diagonal terms vanish
        assert_eq!(hamiltonian(&m, &[1.0, 1.0]).unwrap(), 1.25);
        assert!(matches!(
            hamiltonian(&m, &[1.0]),
            Err(LwError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn coulomb_all_ones_matches_hand_value() {
        // v with unit off-diagonal would be singular; use v = [[1, .5], [.5, 1]]
        let v = SymMatrix::new(2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        let u = Interaction::coulomb(v).unwrap();
        assert_eq!(u.eval(&[1.0, 1.0]), 0.125 * 3.0);
    }

    #[test]
    fn coulomb_requires_positive_definite_v() {
        let v = SymMatrix::new(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(Interaction::coulomb(v), Err(LwError::NotPositiveDefinite(_))));
    }

    #[test]
    fn quartic_matches_one_dimensional_coulomb() {
        let q = Interaction::quartic_1d(0.7).unwrap();
        let c = Interaction::coulomb(SymMatrix::scalar(0.7)).unwrap();
        for x in [-3.0, -0.2, 0.0, 1.5, 9.0] {
            assert!((q.eval(&[x]) - c.eval(&[x])).abs() <= 1e-15 * c.eval(&[x]));
        }
    }

    #[test]
    fn counterexample_piecewise() {
        let u = Interaction::counterexample();
        assert_eq!(u.eval(&[3.0, 0.0]), 81.0);
        assert_eq!(u.eval(&[0.5, 1.0]), 0.0625);
        assert_eq!(u.eval(&[4.0, 1.0]), 1.0);
        assert_eq!(u.eval(&[4.0, 0.5]), 16.0);
        // continuous across the switching curve
        assert!((u.eval(&[2.0, 0.5]) - 16.0).abs() < 1e-12);
    }

    #[test]
    fn transform_examples() {
        let z = transform_interaction(&Interaction::zero(2), &Matrix::identity(2, 2)).unwrap();
        assert!(z.is_zero());

        let u = Interaction::coulomb(SymMatrix::scalar(1.5)).unwrap();
        let t = Matrix::from_element(1, 1, 2.0);
        let ut = transform_interaction(&u, &t).unwrap();
        match ut.kind() {
            InteractionKind::GeneralizedCoulomb { v } => assert_eq!(v.get(0, 0), 1.5 * 16.0),
            k => panic!("unexpected kind {k:?}"),
        }

        let j = 4.0;
        let tj = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0 / j]);
        let ce = Interaction::counterexample();
        let ut = transform_interaction(&ce, &tj).unwrap();
        assert!(matches!(ut.kind(), InteractionKind::Custom { .. }));
        for x in [[0.3, 2.0], [5.0, 1.0], [10.0, 20.0]] {
            assert_eq!(ut.eval(&x), ce.eval(&[x[0], x[1] / j]));
        }
        assert!(!ut.growth().strong);
    }

    #[test]
    fn transform_rejects_wrong_dimension() {
        let u = Interaction::coulomb(SymMatrix::identity(2)).unwrap();
        assert!(transform_interaction(&u, &Matrix::identity(3, 3)).is_err());
    }

    #[test]
    fn custom_weak_growth_is_checked() {
        let bad = Interaction::custom(
            1,
            "neg",
            GrowthMeta {
                weak_constant: Some(0.1),
                strong: false,
            },
            None,
            Arc::new(|x: &[f64]| -x[0] * x[0]),
        );
        assert!(bad.is_err());
        let ok = Interaction::custom(
            1,
            "neg",
            GrowthMeta {
                weak_constant: Some(1.0),
                strong: false,
            },
            None,
            Arc::new(|x: &[f64]| -x[0] * x[0]),
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn fragment_marker_rejects_dependent_interaction() {
        let u = Interaction::coulomb(SymMatrix::identity(2)).unwrap();
        assert!(u.clone().with_fragment_marker(vec![0]).is_err());
        let quart = Interaction::custom(
            2,
            "x0^4",
            GrowthMeta::NONNEGATIVE,
            Some(4),
            Arc::new(|x: &[f64]| x[0].powi(4)),
        )
        .unwrap();
        assert!(quart.with_fragment_marker(vec![0]).is_ok());
    }

    #[test]
    fn impurity_embedding_and_restriction() {
        let inner = Interaction::quartic_1d(2.0).unwrap();
        let u = Interaction::impurity(inner, vec![1], 3).unwrap();
        assert_eq!(u.eval(&[5.0, 1.0, -7.0]), 0.25);
        assert!(!u.growth().strong);
        assert!(u.fragment_growth().strong);
        let r = u.restrict_to_fragment().unwrap();
        assert_eq!(r.dim(), 1);
        assert_eq!(r.eval(&[1.0]), 0.25);
        u.verify_fragment_invariance(64, 1).unwrap();
    }

    #[test]
    fn domain_examples() {
        let m = GibbsModel::gaussian(SymMatrix::identity(2));
        assert_eq!(check_domain_membership(&m), DomainVerdict::Inside);
        let m = GibbsModel::gaussian(SymMatrix::scalar(-1.0));
        assert_eq!(check_domain_membership(&m), DomainVerdict::Outside);
        let m = GibbsModel::new(SymMatrix::scalar(-1.0), Interaction::quartic_1d(1.0).unwrap(), 1.0).unwrap();
        assert_eq!(check_domain_membership(&m), DomainVerdict::Inside);
    }

    #[test]
    fn impurity_domain_uses_schur_complement() {
        let u = Interaction::impurity(Interaction::quartic_1d(1.0).unwrap(), vec![0], 2).unwrap();
        // A22 > 0, fragment block indefinite: still inside
        let a = SymMatrix::new(2, vec![-3.0, 0.5, 0.5, 1.0]).unwrap();
        let m = GibbsModel::new(a, u.clone(), 1.0).unwrap();
        assert_eq!(check_domain_membership(&m), DomainVerdict::Inside);
        // A22 < 0: the free direction diverges
        let a = SymMatrix::new(2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        let m = GibbsModel::new(a, u, 1.0).unwrap();
        assert_eq!(check_domain_membership(&m), DomainVerdict::Outside);
    }
}
