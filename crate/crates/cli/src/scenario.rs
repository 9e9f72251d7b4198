//! Scenario files: a strict TOML schema, defaults and validation.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use hjb_core::branch::{default_ladder, BranchConfig, LamSpec};
use hjb_core::checks::{CheckSpec, Severity, TheoremId};
use hjb_core::operator::{ControlCoeffs, ControlFamily, DiscreteOperator, Envelope};
use hjb_core::solver::SolveParams;
use hjb_core::spectral::EigenParams;
use hjb_core::{build_grid, Grid, GridFunction};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub lam: LamInput,
    pub grid: GridSpec,
    pub family: FamilySpec,
    #[serde(default)]
    pub h: HSpec,
    #[serde(default)]
    pub branch: BranchSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub eigen: EigenSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteSection>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// One `[a, b]` per axis.
    pub extents: Vec<[f64; 2]>,
    /// Interior nodes per axis.
    pub n: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpec {
    /// Row-major `dim x dim` diffusion matrix.
    pub a: Vec<f64>,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeSpec {
    pub lambda: f64,
    pub big_lambda: f64,
    pub gamma: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Laplacian,
    Linear {
        a: Vec<f64>,
        #[serde(default)]
        b: Vec<f64>,
        #[serde(default)]
        c: f64,
    },
    FiniteSup {
        controls: Vec<ControlSpec>,
        /// Tight envelope of the controls when omitted.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        envelope: Option<EnvelopeSpec>,
    },
    PucciPlus {
        lambda: f64,
        big_lambda: f64,
    },
    PucciMinus {
        lambda: f64,
        big_lambda: f64,
    },
    Fucik {
        b_plus: f64,
        #[serde(default)]
        b_minus: f64,
    },
}

/// Spectral parameter: a number or a position relative to an eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LamInput {
    Value(f64),
    Relative(LamSpec),
}

impl Default for LamInput {
    fn default() -> Self {
        LamInput::Value(0.0)
    }
}

impl LamInput {
    pub fn to_spec(self) -> LamSpec {
        match self {
            LamInput::Value(value) => LamSpec::Value { value },
            LamInput::Relative(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coeff: f64,
    /// Exponent per axis.
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mode {
    pub amp: f64,
    /// `sin(k pi s)` per axis, `s` the coordinate rescaled to `[0, 1]`.
    pub k: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HSpec {
    #[default]
    Zero,
    Polynomial {
        terms: Vec<Term>,
    },
    Sines {
        modes: Vec<Mode>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BranchSection {
    pub t_range: [f64; 2],
    pub n_samples: usize,
    /// Rungs `eps_k = 2^-k`, `k = 1..=ladder_count`.
    pub ladder_count: usize,
    pub random_starts: usize,
}

impl Default for BranchSection {
    fn default() -> Self {
        BranchSection { t_range: [-1.0, 1.0], n_samples: 11, ladder_count: 20, random_starts: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveSection {
    /// Coefficient of `phi_1^+` in the right-hand side for the `solve` command.
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    pub max_policy_iters: usize,
    pub blowup_norm: f64,
}

impl Default for SolveSection {
    fn default() -> Self {
        let d = SolveParams::default();
        SolveSection { t: 0.0, tol: d.tol, max_policy_iters: d.max_policy_iters, blowup_norm: d.blowup_norm }
    }
}

impl SolveSection {
    pub fn params(&self) -> SolveParams {
        SolveParams { tol: self.tol, max_policy_iters: self.max_policy_iters, blowup_norm: self.blowup_norm }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EigenSection {
    pub shift_margin: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub residual_tol: f64,
}

impl Default for EigenSection {
    fn default() -> Self {
        let d = EigenParams::default();
        EigenSection { shift_margin: d.shift_margin, tol: d.tol, max_iters: d.max_iters, residual_tol: d.residual_tol }
    }
}

impl EigenSection {
    pub fn params(&self) -> EigenParams {
        EigenParams {
            shift_margin: self.shift_margin,
            tol: self.tol,
            max_iters: self.max_iters,
            residual_tol: self.residual_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    pub checks: Vec<CheckEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckEntry {
    pub theorem: TheoremId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<Severity>,
    /// Overrides the statement's default spectral parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lam: Option<LamInput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<HSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

/// Reads and validates a scenario. Every failure is a schema error naming
/// the offending key path.
pub fn parse_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Schema {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, CliError> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::Schema { path: "<document>".into(), msg: e.to_string() })?;
    let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let msg = e.inner().message().to_string();
        let mut path = e.path().to_string();
        // tagged enums buffer their content, so the path stops at the enum
        if let Some(key) = msg.strip_prefix("unknown field `").and_then(|r| r.split('`').next()) {
            if !path.ends_with(key) {
                path = if path == "." { key.to_string() } else { format!("{path}.{key}") };
            }
        }
        CliError::Schema { path, msg }
    })?;
    sc.validate()?;
    Ok(sc)
}

/// TOML text that parses back to the same scenario.
pub fn emit_scenario(sc: &Scenario) -> Result<String, CliError> {
    toml::to_string(sc).map_err(|e| CliError::Schema { path: "<emit>".into(), msg: e.to_string() })
}

fn schema(path: impl Into<String>, msg: impl Into<String>) -> CliError {
    CliError::Schema { path: path.into(), msg: msg.into() }
}

impl Scenario {
    fn validate(&self) -> Result<(), CliError> {
        let dim = self.grid.extents.len();
        if dim != 1 && dim != 2 {
            return Err(schema("grid.extents", format!("need 1 or 2 axes, got {dim}")));
        }
        if self.grid.n.len() != dim {
            return Err(schema("grid.n", format!("need {dim} entries to match grid.extents")));
        }
        for (i, &n) in self.grid.n.iter().enumerate() {
            if n < 3 {
                return Err(schema(format!("grid.n[{i}]"), format!("need at least 3 interior nodes, got {n}")));
            }
        }
        for (i, [a, b]) in self.grid.extents.iter().enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(schema(format!("grid.extents[{i}]"), format!("need a < b, got [{a}, {b}]")));
            }
        }
        if self.seeds.is_empty() {
            return Err(schema("seeds", "need at least one seed"));
        }
        let [t0, t1] = self.branch.t_range;
        if !(t0 < t1) {
            return Err(schema("branch.t_range", format!("need t_min < t_max, got [{t0}, {t1}]")));
        }
        if self.branch.n_samples < 2 {
            return Err(schema("branch.n_samples", "need at least 2"));
        }
        if self.branch.ladder_count == 0 {
            return Err(schema("branch.ladder_count", "need at least 1"));
        }
        if let Some(tol) = self.solve.tol {
            if !(tol > 0.0) {
                return Err(schema("solve.tol", "must be positive"));
            }
        }
        if !(self.solve.blowup_norm > 0.0) || self.solve.max_policy_iters == 0 {
            return Err(schema("solve", "blowup_norm and max_policy_iters must be positive"));
        }
        if !(self.eigen.tol > 0.0 && self.eigen.residual_tol > 0.0 && self.eigen.shift_margin > 0.0)
            || self.eigen.max_iters == 0
        {
            return Err(schema("eigen", "tolerances, shift_margin and max_iters must be positive"));
        }
        check_h(&self.h, dim, "h")?;
        check_family(&self.family, dim, "family")?;
        if let Some(s) = &self.suite {
            if s.checks.is_empty() {
                return Err(schema("suite.checks", "need at least one check"));
            }
            for (i, c) in s.checks.iter().enumerate() {
                if let Some(f) = &c.family {
                    check_family(f, dim, &format!("suite.checks[{i}].family"))?;
                }
                if let Some(h) = &c.h {
                    check_h(h, dim, &format!("suite.checks[{i}].h"))?;
                }
                for key in c.params.keys() {
                    if !c.theorem_keys().any(|k| k == key) {
                        let known: Vec<&str> = c.theorem_keys().collect();
                        let msg = if known.is_empty() {
                            format!("unknown parameter ({} takes none)", c.theorem)
                        } else {
                            format!("unknown parameter (expected one of: {})", known.join(", "))
                        };
                        return Err(schema(format!("suite.checks[{i}].params.{key}"), msg));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn seed(&self, over: Option<u64>) -> u64 {
        over.unwrap_or(self.seeds[0])
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        Ok(build_grid(self.grid.extents.len(), &self.grid.extents, &self.grid.n)?)
    }

    pub fn operator(&self) -> Result<DiscreteOperator, CliError> {
        self.operator_for(&self.family)
    }

    fn operator_for(&self, fam: &FamilySpec) -> Result<DiscreteOperator, CliError> {
        let g = self.grid()?;
        Ok(DiscreteOperator::new(build_family(fam, g.dim())?, g, 0.0)?)
    }

    pub fn h_fun(&self) -> Result<GridFunction, CliError> {
        Ok(sample_h(&self.h, &self.grid()?))
    }

    pub fn branch_config(&self, seed: u64) -> Result<BranchConfig, CliError> {
        let mut cfg = BranchConfig::new(
            self.operator()?,
            self.lam.to_spec(),
            self.h_fun()?,
            self.branch.t_range,
            self.branch.n_samples,
        );
        cfg.ladder = default_ladder(self.branch.ladder_count);
        cfg.solve = self.solve.params();
        cfg.eigen = self.eigen.params();
        cfg.seed = seed;
        cfg.random_starts = self.branch.random_starts;
        Ok(cfg)
    }

    pub fn check_specs(&self, seed: u64) -> Result<Vec<CheckSpec>, CliError> {
        let Some(suite) = &self.suite else {
            return Err(schema("suite", "the suite command needs a [suite] section"));
        };
        let g = self.grid()?;
        let mut specs = Vec::new();
        for c in &suite.checks {
            let op = self.operator_for(c.family.as_ref().unwrap_or(&self.family))?;
            let h = sample_h(c.h.as_ref().unwrap_or(&self.h), &g);
            let mut spec = CheckSpec::new(c.theorem, op).with_h(h).with_seed(seed);
            if let Some(l) = &c.label {
                spec = spec.with_label(l);
            }
            if let Some(s) = c.severity {
                spec = spec.with_severity(s);
            }
            if let Some(l) = c.lam {
                spec = spec.with_lam(l.to_spec());
            }
            for (k, v) in &c.params {
                spec = spec.with_param(k, *v);
            }
            specs.push(spec);
        }
        Ok(specs)
    }
}

impl CheckEntry {
    fn theorem_keys(&self) -> impl Iterator<Item = &'static str> {
        let g = Grid::interval(0.0, 1.0, 3).expect("static grid");
        let op = DiscreteOperator::new(ControlFamily::laplacian(1), g, 0.0).expect("laplacian");
        CheckSpec::new(self.theorem, op).allowed_params().iter().map(|(k, _)| *k)
    }
}

fn check_h(h: &HSpec, dim: usize, path: &str) -> Result<(), CliError> {
    match h {
        HSpec::Zero => Ok(()),
        HSpec::Polynomial { terms } => {
            for (i, t) in terms.iter().enumerate() {
                if t.powers.len() != dim {
                    return Err(schema(format!("{path}.terms[{i}].powers"), format!("need {dim} exponents")));
                }
            }
            Ok(())
        }
        HSpec::Sines { modes } => {
            for (i, m) in modes.iter().enumerate() {
                if m.k.len() != dim {
                    return Err(schema(format!("{path}.modes[{i}].k"), format!("need {dim} wave numbers")));
                }
            }
            Ok(())
        }
    }
}

fn check_family(f: &FamilySpec, dim: usize, path: &str) -> Result<(), CliError> {
    let check_control = |a: &[f64], b: &[f64], p: &str| -> Result<(), CliError> {
        if a.len() != dim * dim {
            return Err(schema(format!("{p}.a"), format!("need {} entries (row-major {dim}x{dim})", dim * dim)));
        }
        if !b.is_empty() && b.len() != dim {
            return Err(schema(format!("{p}.b"), format!("need {dim} entries")));
        }
        Ok(())
    };
    match f {
        FamilySpec::Linear { a, b, .. } => check_control(a, b, path),
        FamilySpec::FiniteSup { controls, .. } => {
            if controls.is_empty() {
                return Err(schema(format!("{path}.controls"), "need at least one control"));
            }
            for (i, c) in controls.iter().enumerate() {
                check_control(&c.a, &c.b, &format!("{path}.controls[{i}]"))?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

fn coeffs(a: &[f64], b: &[f64], c: f64, dim: usize) -> ControlCoeffs {
    let b = if b.is_empty() { vec![0.0; dim] } else { b.to_vec() };
    ControlCoeffs::new(a.to_vec(), b, c)
}

pub fn build_family(f: &FamilySpec, dim: usize) -> Result<ControlFamily, CliError> {
    Ok(match f {
        FamilySpec::Laplacian => ControlFamily::laplacian(dim),
        FamilySpec::Linear { a, b, c } => ControlFamily::linear(coeffs(a, b, *c, dim))?,
        FamilySpec::FiniteSup { controls, envelope } => {
            let cs: Vec<ControlCoeffs> = controls.iter().map(|c| coeffs(&c.a, &c.b, c.c, dim)).collect();
            let env = match envelope {
                Some(e) => Envelope::new(e.lambda, e.big_lambda, e.gamma, e.delta),
                None => Envelope::tight(&cs),
            };
            ControlFamily::finite_sup(cs, env)?
        }
        FamilySpec::PucciPlus { lambda, big_lambda } => ControlFamily::pucci_plus(dim, *lambda, *big_lambda)?,
        FamilySpec::PucciMinus { lambda, big_lambda } => ControlFamily::pucci_minus(dim, *lambda, *big_lambda)?,
        FamilySpec::Fucik { b_plus, b_minus } => ControlFamily::fucik(dim, *b_plus, *b_minus)?,
    })
}

pub fn sample_h(h: &HSpec, g: &Grid) -> GridFunction {
    let unit = |p: [f64; 2], axis: usize| {
        let [a, b] = g.extent(axis);
        (p[axis] - a) / (b - a)
    };
    match h {
        HSpec::Zero => GridFunction::zeros(g),
        HSpec::Polynomial { terms } => GridFunction::sample(g, |x, y| {
            terms.iter().map(|t| t.coeff * t.powers.iter().zip([x, y]).map(|(&e, v)| v.powi(e as i32)).product::<f64>()).sum()
        }),
        HSpec::Sines { modes } => GridFunction::sample(g, |x, y| {
            modes
                .iter()
                .map(|m| m.amp * m.k.iter().enumerate().map(|(i, &k)| (k as f64 * PI * unit([x, y], i)).sin()).product::<f64>())
                .sum()
        }),
    }
}
