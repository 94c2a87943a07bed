//! The `lw` command line.
//!
//! Every command prints a CSV table headed by `# lw <cmd>` and
//! `# seed = N` comment lines. With `--out DIR` the table goes to
//! `DIR/result.csv` next to a `DIR/summary.json`. Exit codes: 0 success,
//! 2 a rule or criterion failed, 1 any error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::duality::{invert_green, lw_functional_with, InversionOptions};
use crate::dyson::{asymptotic_comparison, solve_dyson, DysonStatus, SigmaModel};
use crate::error::{LwError, Result};
use crate::integrate::{gibbs_moments, IntegrationSpec, Method, ProbeOptions};
use crate::linalg::SymMatrix;
use crate::modelfile::{load_green, ModelFile};
use crate::reproduce::{fmt, reproduce_bundle};
use crate::rules::{
    counterexample_experiment, extension_limit, projection_check, scaling_check, sparsity_check, transformation_check,
    RuleReport,
};
use crate::series::{coulomb_matrix, extract_bold_series};

#[derive(Debug, Parser)]
#[command(name = "lw", version, about = "Green's function duality for Gibbs measures")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Auto,
    Mc,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// TOML file holding `G = [[...]]`; overrides an inline `G`.
    #[arg(long = "G", value_name = "PATH")]
    pub g: Option<PathBuf>,
    #[arg(long)]
    pub rel_err: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Write result.csv and summary.json here instead of printing.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RuleArg {
    Transform,
    Scale,
    Project,
    Sparse,
    Extend,
    Counterexample,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SigmaArg {
    Exact,
    Bold1,
    Bold2,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition function and free energy.
    Z(Common),
    /// Green's function `G[A]`.
    Green(Common),
    /// Coupling matrix `A[G]`.
    Invert(Common),
    /// `Phi[G]`, `F[G]` and `Sigma[G]`.
    #[command(alias = "lw")]
    Eval(Common),
    /// Self-energy `Sigma[G]`.
    Sigma(Common),
    /// Bold series coefficients.
    Series {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2)]
        order: usize,
    },
    /// One exact rule.
    Check {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        rule: RuleArg,
    },
    /// Dyson equation at the model's `A`.
    Dyson {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "exact")]
        sigma: SigmaArg,
        /// Double-well sweep `a:b:n` over `n` geometric values of lambda.
        #[arg(long, value_name = "a:b:n")]
        lambda_sweep: Option<String>,
    },
    /// Continuous extension to lower dimension.
    Extend(Common),
    /// Divergence probe on the counterexample family.
    Counterexample(Common),
    /// Every acceptance experiment into one directory.
    Reproduce(Common),
}

/// A command's tabular output.
struct Output {
    cmd: &'static str,
    seed: u64,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
    pass: Option<bool>,
    extra: serde_json::Value,
}

impl Output {
    fn new(cmd: &'static str, seed: u64, header: Vec<&'static str>) -> Self {
        Self {
            cmd,
            seed,
            header,
            rows: Vec::new(),
            pass: None,
            extra: serde_json::Value::Null,
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn csv(&self) -> String {
        let mut s = format!("# lw {}\n# seed = {}\n{}\n", self.cmd, self.seed, self.header.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    fn emit(&self, out: Option<&Path>) -> Result<()> {
        match out {
            None => print!("{}", self.csv()),
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("result.csv"), self.csv())?;
                let summary = json!({
                    "command": self.cmd,
                    "seed": self.seed,
                    "rows": self.rows.len(),
                    "pass": self.pass,
                    "details": self.extra,
                });
                std::fs::write(
                    dir.join("summary.json"),
                    serde_json::to_string_pretty(&summary).map_err(|e| LwError::InvalidInput(e.to_string()))?,
                )?;
            }
        }
        Ok(())
    }

    fn exit_code(&self) -> i32 {
        if self.pass == Some(false) {
            2
        } else {
            0
        }
    }
}

impl Common {
    fn file(&self) -> Result<ModelFile> {
        let path = self
            .model
            .as_ref()
            .ok_or_else(|| LwError::InvalidInput("this command needs --model".into()))?;
        ModelFile::load(path)
    }

    fn seed(&self, file: Option<&ModelFile>) -> u64 {
        self.seed.or(file.map(ModelFile::seed)).unwrap_or(0)
    }

    fn spec(&self, file: Option<&ModelFile>) -> Result<IntegrationSpec> {
        let mut spec = match file {
            Some(f) => f.integration_spec()?,
            None => IntegrationSpec::default(),
        };
        if let Some(m) = self.method {
            spec.method = match m {
                MethodArg::Auto => Method::AutoQuadrature,
                MethodArg::Mc => Method::MonteCarlo,
            };
        }
        if let Some(r) = self.rel_err {
            spec.target_rel_error = Some(r);
        }
        if let Some(n) = self.samples {
            spec.mc_samples = n;
        }
        spec.rng_seed = self.seed(file);
        spec.validate()?;
        Ok(spec)
    }

    /// `G` from `--G`, else from the model file.
    fn green(&self, file: &ModelFile) -> Result<SymMatrix> {
        if let Some(p) = &self.g {
            return load_green(p);
        }
        file.inline_g()?
            .ok_or_else(|| LwError::InvalidInput("this command needs --G or an inline `G` in [model]".into()))
    }
}

fn entry_rows(out: &mut Output, quantity: &str, m: &SymMatrix, err: f64) {
    for (i, j) in SymMatrix::packed_indices(m.dim()) {
        out.push(vec![format!("{quantity}[{i}][{j}]"), fmt(m.get(i, j)), fmt(err)]);
    }
}

fn rule_rows(out: &mut Output, r: &RuleReport) {
    out.push(vec![
        r.rule_name.clone(),
        fmt(r.lhs),
        fmt(r.rhs),
        fmt(r.abs_gap),
        fmt(r.tolerance),
        verdict(r.pass),
    ]);
}

fn verdict(pass: bool) -> String {
    if pass { "PASS" } else { "FAIL" }.to_string()
}

const VALUE_HEADER: [&str; 3] = ["quantity", "value", "error"];
const RULE_HEADER: [&str; 6] = ["rule", "lhs", "rhs", "gap", "tolerance", "verdict"];

fn parse_sweep(s: &str) -> Result<Vec<f64>> {
    let bad = || LwError::InvalidInput(format!("lambda sweep must look like a:b:n, got `{s}`"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].parse().map_err(|_| bad())?;
    let b: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if !(a > 0.0 && b > 0.0) || n == 0 {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    let r = (b / a).powf(1.0 / (n - 1) as f64);
    Ok((0..n).map(|k| a * r.powi(k as i32)).collect())
}

fn dyson(common: &Common, sigma: SigmaArg, sweep: Option<&str>) -> Result<Output> {
    let file = common.file()?;
    let seed = common.seed(Some(&file));
    let spec = common.spec(Some(&file))?;
    if let Some(s) = sweep {
        let table = asymptotic_comparison(&parse_sweep(s)?, &spec)?;
        let mut out = Output::new(
            "dyson",
            seed,
            vec!["lambda", "lambda_g_exact", "error", "lambda_g_bold1"],
        );
        for r in &table.rows {
            out.push(vec![
                fmt(r.lambda),
                fmt(r.lambda_g_exact),
                fmt(r.lambda_g_exact_err),
                fmt(r.lambda_g_bold1),
            ]);
        }
        out.pass = Some(table.exact_pass && table.bold1_pass);
        out.extra = json!({
            "exact_rel_dev": table.exact_rel_dev,
            "bold1_rel_dev": table.bold1_rel_dev,
            "exact_pass": table.exact_pass,
            "bold1_pass": table.bold1_pass,
        });
        return Ok(out);
    }
    let m = file.gibbs_model()?;
    let model = match sigma {
        SigmaArg::Exact => SigmaModel::Exact {
            eps: m.epsilon,
            u: m.interaction.clone(),
            spec,
        },
        SigmaArg::Bold1 | SigmaArg::Bold2 => {
            let v = coulomb_matrix(&m.interaction)
                .ok_or_else(|| LwError::InvalidInput("bold models need a quartic or coulomb interaction".into()))?;
            SigmaModel::bold(if matches!(sigma, SigmaArg::Bold1) { 1 } else { 2 }, v, m.epsilon)?
        }
    };
    let sol = solve_dyson(&m.a, &model, 1e-10, 200)?;
    let mut out = Output::new("dyson", seed, vec!["quantity", "value", "residual"]);
    let status = match &sol.status {
        DysonStatus::Solved => "solved",
        DysonStatus::NoPhysicalSolution { .. } => "no_physical_solution",
        DysonStatus::NotFound => "not_found",
    };
    out.push(vec!["status".into(), status.into(), fmt(sol.residual)]);
    if let Some(g) = &sol.g {
        entry_rows(&mut out, "G", g, sol.residual);
    }
    out.extra = json!({ "sigma": model.label(), "solution": sol });
    Ok(out)
}

fn check(common: &Common, rule: RuleArg) -> Result<Output> {
    if matches!(rule, RuleArg::Counterexample) {
        return counterexample(common);
    }
    if matches!(rule, RuleArg::Extend) {
        return extend(common);
    }
    let file = common.file()?;
    let seed = common.seed(Some(&file));
    let spec = common.spec(Some(&file))?;
    let g = common.green(&file)?;
    let u = file.interaction()?;
    let eps = file.model.epsilon;
    let report = match rule {
        RuleArg::Transform => {
            let t = file
                .rule_t()
                .ok_or_else(|| LwError::InvalidInput("transform rule needs `T` in [rule]".into()))?;
            transformation_check(&g, &u, &t, eps, &spec)?
        }
        RuleArg::Scale => scaling_check(&g, &u, file.rule.scale.unwrap_or(2.0), eps, &spec)?,
        RuleArg::Project => projection_check(&g, &u, eps, &spec)?,
        RuleArg::Sparse => sparsity_check(&g, &u, eps, &spec)?,
        RuleArg::Extend | RuleArg::Counterexample => unreachable!("handled above"),
    };
    let mut out = Output::new("check", seed, RULE_HEADER.to_vec());
    rule_rows(&mut out, &report);
    out.pass = Some(report.pass);
    out.extra = serde_json::to_value(&report).unwrap_or_default();
    Ok(out)
}

fn extend(common: &Common) -> Result<Output> {
    let file = common.file()?;
    let seed = common.seed(Some(&file));
    let spec = common.spec(Some(&file))?;
    let g_p = common.green(&file)?;
    let deltas = file.rule.deltas.clone().unwrap_or_else(|| vec![0.2, 0.1, 0.05, 0.025]);
    let r = extension_limit(&g_p, &file.interaction()?, &deltas, file.model.epsilon, &spec, 1e-2)?;
    let mut out = Output::new("extend", seed, vec!["delta", "phi", "error"]);
    for (d, phi, e) in &r.sequence {
        out.push(vec![fmt(*d), fmt(*phi), fmt(*e)]);
    }
    out.push(vec!["limit".into(), fmt(r.limit), fmt(r.gap)]);
    out.push(vec!["target".into(), fmt(r.target), fmt(r.target_error)]);
    out.pass = Some(r.pass);
    out.extra = serde_json::to_value(&r).unwrap_or_default();
    Ok(out)
}

fn counterexample(common: &Common) -> Result<Output> {
    let file = common.model.as_ref().map(|p| ModelFile::load(p)).transpose()?;
    let js = file
        .as_ref()
        .and_then(|f| f.rule.js.clone())
        .unwrap_or_else(|| vec![1, 2, 4, 8]);
    let r = counterexample_experiment(&js, &ProbeOptions::default())?;
    let mut out = Output::new(
        "counterexample",
        common.seed(file.as_ref()),
        vec!["map", "verdict", "expected", "doublings", "halfwidth", "log_z"],
    );
    for row in &r.rows {
        out.push(vec![
            row.label.clone(),
            row.verdict.clone(),
            row.expected.clone(),
            row.doublings.to_string(),
            fmt(row.final_halfwidth),
            fmt(row.final_log_z),
        ]);
    }
    out.pass = Some(r.pass);
    out.extra = serde_json::to_value(&r).unwrap_or_default();
    Ok(out)
}

fn execute(cmd: &Command) -> Result<Output> {
    match cmd {
        Command::Z(c) => {
            let file = c.file()?;
            let spec = c.spec(Some(&file))?;
            let m = gibbs_moments(&file.gibbs_model()?, &spec, false)?;
            let mut out = Output::new("z", c.seed(Some(&file)), VALUE_HEADER.to_vec());
            let z = m.log_z.exp();
            out.push(vec!["Z".into(), fmt(z), fmt(z * m.log_z_err)]);
            out.push(vec!["log_Z".into(), fmt(m.log_z), fmt(m.log_z_err)]);
            out.push(vec!["Omega".into(), fmt(-m.log_z), fmt(m.log_z_err)]);
            out.extra = json!({ "method": m.method.to_string(), "n_evals": m.n_evals });
            Ok(out)
        }
        Command::Green(c) => {
            let file = c.file()?;
            let spec = c.spec(Some(&file))?;
            let m = gibbs_moments(&file.gibbs_model()?, &spec, false)?;
            m.second.require_positive_definite("G")?;
            let mut out = Output::new("green", c.seed(Some(&file)), VALUE_HEADER.to_vec());
            entry_rows(&mut out, "G", &m.second, m.second_err);
            out.extra = json!({ "method": m.method.to_string(), "n_evals": m.n_evals });
            Ok(out)
        }
        Command::Invert(c) => {
            let file = c.file()?;
            let spec = c.spec(Some(&file))?;
            let g = c.green(&file)?;
            let inv = invert_green(&g, &file.interaction()?, file.model.epsilon, &spec, 1e-10)?;
            let mut out = Output::new("invert", c.seed(Some(&file)), VALUE_HEADER.to_vec());
            entry_rows(&mut out, "A", &inv.a, inv.residual_norm);
            out.extra = json!({
                "converged": inv.converged,
                "iterations": inv.iterations,
                "residual_norm": inv.residual_norm,
            });
            Ok(out)
        }
        Command::Eval(c) | Command::Sigma(c) => {
            let sigma_only = matches!(cmd, Command::Sigma(_));
            let file = c.file()?;
            let spec = c.spec(Some(&file))?;
            let g = c.green(&file)?;
            let ev = lw_functional_with(
                &g,
                &file.interaction()?,
                file.model.epsilon,
                &spec,
                &InversionOptions::with_tol(1e-10),
            )?;
            let name = if sigma_only { "sigma" } else { "eval" };
            let mut out = Output::new(name, c.seed(Some(&file)), VALUE_HEADER.to_vec());
            if !sigma_only {
                out.push(vec!["Phi".into(), fmt(ev.phi), fmt(ev.error_estimate)]);
                out.push(vec!["F".into(), fmt(ev.f), fmt(0.5 * ev.error_estimate)]);
            }
            entry_rows(&mut out, "Sigma", &ev.sigma, ev.sigma_error);
            out.extra = serde_json::to_value(&ev).unwrap_or_default();
            Ok(out)
        }
        Command::Series { common, order } => {
            let file = common.file()?;
            let spec = common.spec(Some(&file))?;
            let g = common.green(&file)?;
            let s = extract_bold_series(&g, &file.interaction()?, *order, &spec)?;
            let mut out = Output::new("series", common.seed(Some(&file)), VALUE_HEADER.to_vec());
            for k in 0..s.order {
                out.push(vec![
                    format!("Phi^({})", k + 1),
                    fmt(s.phi_coeffs[k]),
                    fmt(s.phi_uncertainty[k]),
                ]);
                let sig = &s.sigma_coeffs[k];
                let unc = &s.sigma_uncertainty[k];
                for (i, j) in SymMatrix::packed_indices(g.dim()) {
                    out.push(vec![
                        format!("Sigma^({})[{i}][{j}]", k + 1),
                        fmt(sig.get(i, j)),
                        fmt(unc.get(i, j)),
                    ]);
                }
            }
            out.pass = Some(s.trusted);
            out.extra = json!({ "fit_residual": s.fit_residual, "tolerance": s.tolerance, "trusted": s.trusted });
            Ok(out)
        }
        Command::Check { common, rule } => check(common, *rule),
        Command::Dyson {
            common,
            sigma,
            lambda_sweep,
        } => dyson(common, *sigma, lambda_sweep.as_deref()),
        Command::Extend(c) => extend(c),
        Command::Counterexample(c) => counterexample(c),
        Command::Reproduce(_) => unreachable!("handled in run"),
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("LW_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        // a second call fails harmlessly when the pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Runs one parsed invocation and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    configure_threads();
    if let Command::Reproduce(c) = &cli.command {
        let dir = c.out.clone().unwrap_or_else(|| PathBuf::from("lw-reproduce"));
        let summary = reproduce_bundle(&dir, c.seed.unwrap_or(0))?;
        for r in &summary.criteria {
            println!("{:>2} {:<22} {}", r.id, r.name, verdict(r.pass));
        }
        for f in &summary.failures {
            eprintln!("{f}");
        }
        return Ok(if summary.all_pass() { 0 } else { 2 });
    }
    let common = match &cli.command {
        Command::Z(c)
        | Command::Green(c)
        | Command::Invert(c)
        | Command::Eval(c)
        | Command::Sigma(c)
        | Command::Extend(c)
        | Command::Counterexample(c)
        | Command::Reproduce(c) => c,
        Command::Series { common, .. } | Command::Check { common, .. } | Command::Dyson { common, .. } => common,
    };
    let out = execute(&cli.command)?;
    out.emit(common.out.as_deref())?;
    Ok(out.exit_code())
}

/// Entry point used by the binary: parses `args` and maps errors to exit
/// code 1.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
