//! TOML experiment files.
//!
//! ```toml
//! # double well
//! [model]
//! A = [[-1.0]]
//! epsilon = 1.0
//!
//! [interaction]
//! kind = "quartic"      # zero | coulomb | quartic | counterexample
//! lambda = 1.0          # quartic
//! # v = [[1.0, 0.5], [0.5, 1.0]]   # coulomb
//! # fragment = [0]                 # embed on these coordinates of A
//!
//! [integration]         # all optional
//! method = "auto"       # auto | mc
//! rel_err = 1e-8
//! samples = 200000
//! seed = 0
//! box_halfwidth = 12.0
//!
//! [rule]                # optional knobs for `lw check`
//! T = [[2.0]]
//! scale = 2.0
//! deltas = [0.2, 0.1, 0.05, 0.025]
//! fragment_dim = 1
//! js = [1, 2, 4, 8]
//! ```
//!
//! A Green's function file holds a single `G = [[...]]` entry.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LwError, Result};
use crate::integrate::{IntegrationSpec, Method};
use crate::linalg::{Matrix, SymMatrix};
use crate::model::{GibbsModel, Interaction};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub epsilon: f64,
    /// Optional inline Green's function.
    #[serde(rename = "G", default)]
    pub g: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSection {
    pub kind: String,
    pub lambda: Option<f64>,
    pub v: Option<Vec<Vec<f64>>>,
    pub fragment: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSection {
    pub method: Option<String>,
    pub rel_err: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub box_halfwidth: Option<f64>,
    pub max_evals: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSection {
    #[serde(rename = "T")]
    pub t: Option<Vec<Vec<f64>>>,
    pub scale: Option<f64>,
    pub deltas: Option<Vec<f64>>,
    pub fragment_dim: Option<usize>,
    pub js: Option<Vec<u32>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub model: ModelSection,
    pub interaction: InteractionSection,
    #[serde(default)]
    pub integration: IntegrationSection,
    #[serde(default)]
    pub rule: RuleSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GreenFile {
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

fn parse_toml<T: serde::de::DeserializeOwned>(src: &str) -> Result<T> {
    toml::from_str(src).map_err(|e| LwError::Parse {
        line: e.span().map_or(0, |s| line_of(src, s.start)),
        message: e.message().to_string(),
    })
}

/// Re-tags an error from a field with the line where the field appears.
fn at_field(src: &str, field: &str, err: LwError) -> LwError {
    let line = src
        .lines()
        .position(|l| l.trim_start().starts_with(field))
        .map_or(0, |i| i + 1);
    LwError::Parse {
        line,
        message: format!("{field}: {err}"),
    }
}

impl ModelFile {
    pub fn parse(src: &str) -> Result<Self> {
        let f: Self = parse_toml(src)?;
        // validate eagerly so errors point at the offending field
        f.gibbs_model().map_err(|e| match e {
            LwError::Parse { .. } => e,
            other => at_field(src, "A", other),
        })?;
        f.integration_spec().map_err(|e| at_field(src, "[integration]", e))?;
        Ok(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn interaction(&self) -> Result<Interaction> {
        let s = &self.interaction;
        let inner = match s.kind.as_str() {
            "zero" => {
                let n = s.fragment.as_ref().map_or(self.model.a.len(), |f| f.len());
                Interaction::zero(n)
            }
            "quartic" => Interaction::quartic_1d(
                s.lambda
                    .ok_or_else(|| LwError::InvalidInput("quartic interaction needs `lambda`".into()))?,
            )?,
            "coulomb" => Interaction::coulomb(SymMatrix::from_rows(
                s.v.as_ref()
                    .ok_or_else(|| LwError::InvalidInput("coulomb interaction needs `v`".into()))?,
            )?)?,
            "counterexample" => Interaction::counterexample(),
            other => {
                return Err(LwError::InvalidInput(format!(
                    "unknown interaction kind `{other}` (expected zero, coulomb, quartic or counterexample)"
                )))
            }
        };
        match &s.fragment {
            Some(f) => Interaction::impurity(inner, f.clone(), self.model.a.len()),
            None => Ok(inner),
        }
    }

    pub fn a(&self) -> Result<SymMatrix> {
        SymMatrix::from_rows(&self.model.a)
    }

    pub fn gibbs_model(&self) -> Result<GibbsModel> {
        GibbsModel::new(self.a()?, self.interaction()?, self.model.epsilon)
    }

    pub fn inline_g(&self) -> Result<Option<SymMatrix>> {
        self.model.g.as_ref().map(|g| SymMatrix::from_rows(g)).transpose()
    }

    pub fn seed(&self) -> u64 {
        self.integration.seed.unwrap_or(0)
    }

    pub fn integration_spec(&self) -> Result<IntegrationSpec> {
        let s = &self.integration;
        let mut spec = IntegrationSpec::default();
        match s.method.as_deref() {
            None | Some("auto") => {}
            Some("mc") => spec.method = Method::MonteCarlo,
            Some(other) => return Err(LwError::InvalidInput(format!("unknown method `{other}`"))),
        }
        spec.target_rel_error = s.rel_err;
        if let Some(n) = s.samples {
            spec.mc_samples = n;
        }
        spec.rng_seed = self.seed();
        spec.truncation_box_halfwidth = s.box_halfwidth;
        if let Some(m) = s.max_evals {
            spec.max_evals = m;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn rule_t(&self) -> Option<Matrix> {
        self.rule.t.as_ref().map(|rows| {
            let n = rows.len();
            Matrix::from_fn(n, rows.first().map_or(0, |r| r.len()), |i, j| rows[i][j])
        })
    }
}

pub fn load_green(path: &Path) -> Result<SymMatrix> {
    let f: GreenFile = parse_toml(&std::fs::read_to_string(path)?)?;
    SymMatrix::from_rows(&f.g)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOUBLE_WELL: &str = r#"
# comment
[model]
A = [[-1.0]]
epsilon = 1.0

[interaction]
kind = "quartic"
lambda = 1.0
"#;

    #[test]
    fn parses_double_well() {
        let f = ModelFile::parse(DOUBLE_WELL).unwrap();
        let m = f.gibbs_model().unwrap();
        assert_eq!(m.a.get(0, 0), -1.0);
        assert_eq!(m.epsilon, 1.0);
        assert_eq!(f.seed(), 0);
    }

    #[test]
    fn syntax_error_reports_line() {
        let src = "[model]\nA = [[1.0]]\nepsilon = \n";
        match ModelFile::parse(src) {
            Err(LwError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_rejected() {
        let src = "[model]\nA = [[1.0]]\nepsilom = 0.1\n[interaction]\nkind = \"zero\"\n";
        match ModelFile::parse(src) {
            Err(LwError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("epsilom"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn semantic_error_points_at_field() {
        let src = "[model]\nA = [[1.0, 2.0], [0.0, 1.0]]\n[interaction]\nkind = \"zero\"\n";
        match ModelFile::parse(src) {
            Err(LwError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("symmetric"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn impurity_embedding() {
        let src = "[model]\nA = [[1.0, 0.0], [0.0, 1.0]]\nepsilon = 0.2\n[interaction]\nkind = \"quartic\"\nlambda = 1.0\nfragment = [0]\n";
        let f = ModelFile::parse(src).unwrap();
        let u = f.interaction().unwrap();
        assert_eq!(u.dim(), 2);
        assert_eq!(u.fragment(), Some(&[0usize][..]));
    }
}
