//! Executable property suites for each theorem-level statement, plus a
//! markdown traceability report.
//!
//! A [`CheckSpec`] names a statement, an operator, a right-hand side profile
//! `h`, an optional spectral parameter and a small set of numeric knobs.
//! [`run_suite`] first validates every check against its regime (computing the
//! discrete eigenvalues) and only then runs the checks in parallel.
//! Evidence-severity checks attach metrics and never fail.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branch::{Alternative, BranchConfig, BranchExplorer, LamSpec};
use crate::error::{Error, Result};
use crate::grid::{build_grid, Grid, GridFunction, SubdomainMask};
use crate::operator::DiscreteOperator;
use crate::solver::{check_abp, solve, AbpSide};
use crate::spectral::{hopf_constant, principal_eigen, simplicity_probe, subdomain_gap, Sign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TheoremId {
    #[serde(rename = "T1.1")]
    T1_1,
    #[serde(rename = "T1.2")]
    T1_2,
    #[serde(rename = "T1.3")]
    T1_3,
    #[serde(rename = "T1.4")]
    T1_4,
    #[serde(rename = "T1.5")]
    T1_5,
    #[serde(rename = "T1.6")]
    T1_6,
    #[serde(rename = "T2.1")]
    T2_1,
    #[serde(rename = "T2.3")]
    T2_3,
    #[serde(rename = "T2.4")]
    T2_4,
    #[serde(rename = "L2.8")]
    L2_8,
    #[serde(rename = "P4.4")]
    P4_4,
    #[serde(rename = "P6.1")]
    P6_1,
}

impl TheoremId {
    pub const ALL: [TheoremId; 12] = [
        TheoremId::T1_1,
        TheoremId::T1_2,
        TheoremId::T1_3,
        TheoremId::T1_4,
        TheoremId::T1_5,
        TheoremId::T1_6,
        TheoremId::T2_1,
        TheoremId::T2_3,
        TheoremId::T2_4,
        TheoremId::L2_8,
        TheoremId::P4_4,
        TheoremId::P6_1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TheoremId::T1_1 => "T1.1",
            TheoremId::T1_2 => "T1.2",
            TheoremId::T1_3 => "T1.3",
            TheoremId::T1_4 => "T1.4",
            TheoremId::T1_5 => "T1.5",
            TheoremId::T1_6 => "T1.6",
            TheoremId::T2_1 => "T2.1",
            TheoremId::T2_3 => "T2.3",
            TheoremId::T2_4 => "T2.4",
            TheoremId::L2_8 => "L2.8",
            TheoremId::P4_4 => "P4.4",
            TheoremId::P6_1 => "P6.1",
        }
    }

    /// One-line statement of what the check exercises.
    pub fn statement(self) -> &'static str {
        match self {
            TheoremId::T1_1 => "below lambda_1^+: one solution per t, pointwise decreasing and convex in t",
            TheoremId::T1_2 => "at lambda_1^+: solvable exactly above a threshold t*+, unique there, negative for large t",
            TheoremId::T1_3 => "between the eigenvalues: no solution below a fold t*, two solutions above it",
            TheoremId::T1_4 => "at lambda_1^-: a finite threshold t*- separates non-existence from existence",
            TheoremId::T1_5 => "just above lambda_1^-: solutions for every t, sup u grows as t increases",
            TheoremId::T1_6 => "both eigenvalues of F + lambda in (-d0, 0): at most one solution",
            TheoremId::T2_1 => "the principal eigenfunction is unique up to scaling (with isolation evidence)",
            TheoremId::T2_3 => "positive lambda_1^+: sup u^- is controlled by the positive part of the forcing",
            TheoremId::T2_4 => "a positive supersolution has a positive boundary slope",
            TheoremId::L2_8 => "a convex combination of solutions is a supersolution of the combined problem",
            TheoremId::P4_4 => "just above lambda_1^-: nonpositive nonzero forcing gives negative solutions",
            TheoremId::P6_1 => "restricting to a subdomain of half measure raises lambda_1^+",
        }
    }

    fn keys(self) -> &'static [(&'static str, f64)] {
        match self {
            TheoremId::T1_1 => &[("t_min", -5.0), ("t_max", 5.0), ("samples", 21.0)],
            TheoremId::T1_2 => &[("t_min", -10.0), ("t_max", 10.0), ("samples", 11.0), ("bracket_tol", 1e-3)],
            TheoremId::T1_3 => &[("t_min", -2.0), ("t_max", 3.0), ("samples", 11.0), ("probe_offset", 1.0)],
            TheoremId::T1_4 => &[("t_min", -5.0), ("t_max", 5.0), ("samples", 11.0), ("probe_offset", 0.5)],
            TheoremId::T1_5 => &[("t_min", -100.0), ("t_max", 100.0), ("samples", 21.0)],
            TheoremId::T1_6 => &[("n_rhs", 10.0), ("n_starts", 8.0)],
            TheoremId::T2_1 => &[("starts", 5.0), ("tol", 1e-6), ("isolation_samples", 4.0)],
            TheoremId::T2_3 => &[("trials", 5.0)],
            TheoremId::T2_4 => &[],
            TheoremId::L2_8 => &[("t0", 0.0), ("t1", 2.0), ("k", 0.5)],
            TheoremId::P4_4 => &[],
            TheoremId::P6_1 => &[("expected_ratio", f64::NAN)],
        }
    }

    /// Spectral parameter used when the check does not set one.
    fn default_lam(self) -> LamSpec {
        match self {
            TheoremId::T1_2 => LamSpec::AtLamPlus { offset: 0.0 },
            TheoremId::T1_4 => LamSpec::AtLamMinus { offset: 0.0 },
            TheoremId::T1_5 | TheoremId::P4_4 => LamSpec::AtLamMinus { offset: 0.1 },
            _ => LamSpec::Value { value: 0.0 },
        }
    }
}

impl fmt::Display for TheoremId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TheoremId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TheoremId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Spec(format!("unknown theorem id {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Assert,
    Evidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    Evidence,
}

impl fmt::Display for CheckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckStatus::Pass => "Pass",
            CheckStatus::Fail => "Fail",
            CheckStatus::Evidence => "Evidence",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheckSpec {
    pub theorem_id: TheoremId,
    pub label: String,
    pub op: DiscreteOperator,
    pub h: GridFunction,
    /// Defaults per statement: `lambda_1^+` for T1.2, `lambda_1^-` for T1.4,
    /// `lambda_1^- + 0.1` for T1.5 and P4.4, and `lambda_1^- + (lambda_1^- -
    /// lambda_1^+)` for T1.6; zero otherwise.
    pub lam: Option<LamSpec>,
    pub params: BTreeMap<String, f64>,
    pub severity: Severity,
    pub seed: u64,
}

impl CheckSpec {
    pub fn new(theorem_id: TheoremId, op: DiscreteOperator) -> Self {
        let h = GridFunction::zeros(op.grid());
        let severity = if theorem_id == TheoremId::T1_5 { Severity::Evidence } else { Severity::Assert };
        CheckSpec {
            theorem_id,
            label: theorem_id.as_str().to_string(),
            op,
            h,
            lam: None,
            params: BTreeMap::new(),
            severity,
            seed: 0,
        }
    }

    pub fn with_h(mut self, h: GridFunction) -> Self {
        self.h = h;
        self
    }

    pub fn with_lam(mut self, lam: LamSpec) -> Self {
        self.lam = Some(lam);
        self
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = label.to_string();
        self
    }

    pub fn with_severity(mut self, severity: Severity) -> Self {
        self.severity = severity;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Knob names accepted for this statement with their defaults.
    pub fn allowed_params(&self) -> &'static [(&'static str, f64)] {
        self.theorem_id.keys()
    }

    fn param(&self, key: &str) -> f64 {
        let default = self.theorem_id.keys().iter().find(|(k, _)| *k == key).map(|(_, v)| *v).unwrap_or(f64::NAN);
        self.params.get(key).copied().unwrap_or(default)
    }

    fn count(&self, key: &str) -> usize {
        self.param(key).max(0.0).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub theorem_id: TheoremId,
    pub label: String,
    pub severity: Severity,
    pub status: CheckStatus,
    pub metrics: BTreeMap<String, f64>,
    /// Paths of evidence files, filled in by whoever writes them.
    pub artifacts: Vec<String>,
    /// The exact condition evaluated.
    pub invariant: String,
    pub note: String,
}

/// A check validated against its regime, with eigenvalues in hand.
struct Prepared<'a> {
    spec: &'a CheckSpec,
    ex: BranchExplorer,
    base: BTreeMap<String, f64>,
}

fn spec_err(spec: &CheckSpec, msg: String) -> Error {
    Error::Spec(format!("{} ({}): {msg}", spec.label, spec.theorem_id))
}

fn prepare(spec: &CheckSpec) -> Result<Prepared<'_>> {
    for key in spec.params.keys() {
        if !spec.theorem_id.keys().iter().any(|(k, _)| k == key) {
            return Err(spec_err(spec, format!("unknown parameter {key:?}")));
        }
    }
    let id = spec.theorem_id;
    let has_t = spec.theorem_id.keys().iter().any(|(k, _)| *k == "t_min");
    let (t_range, samples) =
        if has_t { ([spec.param("t_min"), spec.param("t_max")], spec.count("samples")) } else { ([0.0, 1.0], 2) };
    let plus = principal_eigen(&spec.op, Sign::Plus, &Default::default())?.lam;
    let minus = principal_eigen(&spec.op, Sign::Minus, &Default::default())?.lam;
    let lam_spec = spec.lam.unwrap_or(match id {
        TheoremId::T1_6 => LamSpec::AtLamMinus { offset: minus - plus },
        _ => id.default_lam(),
    });
    let lam = lam_spec.resolve(plus, minus);
    let nondegenerate = minus - plus > 1e-8 * (1.0 + plus.abs());
    let eps_cfg = 0.05 * minus.abs();
    let regime = match id {
        TheoremId::T1_1 => (lam < plus, format!("needs lambda < lambda_1^+ = {plus}")),
        TheoremId::T1_2 => (
            nondegenerate && (lam - plus).abs() <= 1e-8 * (1.0 + plus.abs()),
            format!("needs lambda = lambda_1^+ = {plus} < lambda_1^- = {minus}"),
        ),
        TheoremId::T1_3 => (
            plus < lam && lam < minus,
            format!("needs lambda_1^+ = {plus} < lambda < lambda_1^- = {minus}, i.e. eigenvalues of F + lambda of opposite sign"),
        ),
        TheoremId::T1_4 => (
            nondegenerate && (lam - minus).abs() <= 1e-8 * (1.0 + minus.abs()),
            format!("needs lambda = lambda_1^- = {minus} > lambda_1^+ = {plus}"),
        ),
        TheoremId::T1_5 | TheoremId::P4_4 => (
            minus < lam && lam <= minus + eps_cfg,
            format!("needs lambda in (lambda_1^-, lambda_1^- + {eps_cfg}] = ({minus}, {}]", minus + eps_cfg),
        ),
        TheoremId::T1_6 => (lam > minus, format!("needs lambda above lambda_1^- = {minus}")),
        TheoremId::T2_3 => (lam < plus, format!("needs lambda_1^+ of F + lambda positive (lambda_1^+ = {plus})")),
        _ => (true, String::new()),
    };
    if !regime.0 {
        return Err(spec_err(spec, format!("regime mismatch at lambda = {lam}: {}", regime.1)));
    }
    let mut cfg = BranchConfig::new(spec.op.clone(), LamSpec::Value { value: lam }, spec.h.clone(), t_range, samples);
    cfg.seed = spec.seed;
    let ex = BranchExplorer::new(cfg).map_err(|e| spec_err(spec, e.to_string()))?;

    let mut base = BTreeMap::new();
    base.insert("lambda".into(), lam);
    base.insert("lam_plus".into(), plus);
    base.insert("lam_minus".into(), minus);
    base.insert("grid_h".into(), spec.op.grid().h().iter().copied().fold(0.0, f64::max));
    if let Some(ext) = extrapolated_plus(&spec.op, plus)? {
        base.insert("lam_plus_extrapolated".into(), ext);
    }
    Ok(Prepared { spec, ex, base })
}

/// Richardson extrapolation of `lambda_1^+` from the grid and its
/// half-resolution coarsening, when every axis has an odd node count.
fn extrapolated_plus(op: &DiscreteOperator, fine: f64) -> Result<Option<f64>> {
    let g = op.grid();
    if op.mask().is_some() || g.n().iter().any(|&n| n % 2 == 0 || n < 7) {
        return Ok(None);
    }
    let extents: Vec<[f64; 2]> = (0..g.dim()).map(|a| g.extent(a)).collect();
    let coarse_n: Vec<usize> = g.n().iter().map(|&n| (n - 1) / 2).collect();
    let coarse = build_grid(g.dim(), &extents, &coarse_n)?;
    let Ok(cop) = DiscreteOperator::new(op.family().clone(), coarse, op.shift()) else {
        return Ok(None);
    };
    let c = principal_eigen(&cop, Sign::Plus, &Default::default())?.lam;
    Ok(Some((4.0 * fine - c) / 3.0))
}

struct Outcome {
    pass: bool,
    metrics: BTreeMap<String, f64>,
    invariant: &'static str,
    note: String,
}

impl Outcome {
    fn new(invariant: &'static str) -> Self {
        Outcome { pass: true, metrics: BTreeMap::new(), invariant, note: String::new() }
    }

    fn m(&mut self, key: &str, v: f64) {
        self.metrics.insert(key.to_string(), v);
    }

    fn require(&mut self, ok: bool, what: &str) {
        if !ok {
            self.pass = false;
            if !self.note.is_empty() {
                self.note.push_str("; ");
            }
            self.note.push_str(what);
        }
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn check_t1_1(p: &Prepared) -> Result<Outcome> {
    let mut o = Outcome::new(
        "max_x (u_{t_next} - u_t) < 0 at every node pair and midpoint excess <= 1e-9 * max(1, max |u|) \
         and min u(t_min) > 0 and max u(t_max) < 0",
    );
    let b = p.ex.sweep_subcritical()?;
    let scale = b.points.iter().map(|q| q.u.sup_norm()).fold(1.0, f64::max);
    let (mono, conv, lip) = (b.monotone_excess(), b.convexity_excess(), b.lipschitz());
    let lo = b.points.first().map(|q| q.u.min()).unwrap_or(f64::NAN);
    let hi = b.points.last().map(|q| q.u.max()).unwrap_or(f64::NAN);
    o.m("monotone_excess", mono);
    o.m("convexity_excess", conv);
    o.m("lipschitz", lip);
    o.m("min_u_at_t_min", lo);
    o.m("max_u_at_t_max", hi);
    o.m("max_residual", b.max_residual());
    o.require(mono < 0.0, "branch not strictly decreasing");
    o.require(conv <= 1e-9 * scale, "midpoint convexity violated");
    o.require(lip.is_finite(), "Lipschitz constant not finite");
    o.require(lo > 0.0, "solution at t_min not positive");
    o.require(hi < 0.0, "solution at t_max not negative");
    Ok(o)
}

fn check_t1_2(p: &Prepared) -> Result<Outcome> {
    let mut o = Outcome::new(
        "ladder brackets nested and bracket width <= bracket_tol and one solution at t* + 1 \
         and max u(t_max) < 0",
    );
    let crit = p.ex.locate_tstar_resonance(Sign::Plus)?;
    let tr = p.ex.trace_resonant_branch(Sign::Plus, crit.t_star)?;
    o.m("t_star", crit.t_star);
    o.m("bracket_lo", crit.bracket[0]);
    o.m("bracket_hi", crit.bracket[1]);
    o.m("bracket_width", crit.width());
    o.m("t_star_refined", tr.t_star);
    o.m(
        "alternative",
        match tr.alternative {
            Alternative::NoSolution => 1.0,
            Alternative::Ray => 2.0,
            Alternative::Open => 0.0,
        },
    );
    if let Some(u) = &tr.u_star {
        o.m("u_star_norm", u.sup_norm());
    }
    o.m("ray_residual_max", tr.ray_residuals.iter().map(|r| r.1).fold(0.0, f64::max));
    let c = p.ex.census_at(crit.t_star + 1.0)?;
    o.m("distinct_at_t_star_plus_1", c.distinct() as f64);
    let hi = tr.branch.points.first().map(|q| q.u.max()).unwrap_or(f64::NAN);
    o.m("max_u_at_t_max", hi);
    o.require(crit.brackets_monotone(1e-8), "ladder brackets not nested");
    o.require(crit.width() <= p.spec.param("bracket_tol"), "bracket too wide");
    o.require(c.distinct() == 1, "not unique above t*");
    o.require(hi < 0.0, "solution at t_max not negative");
    Ok(o)
}

fn check_t1_3(p: &Prepared) -> Result<Outcome> {
    let mut o = Outcome::new(
        "fold reached and at least 2 distinct solutions (gap > 1e-4) at t* + probe_offset \
         and 0 converged starts at t* - 0.5 and minimal branch decreasing",
    );
    let fold = p.ex.trace_fold()?;
    let t_star = fold.critical.t_star;
    o.m("t_star", t_star);
    o.m("bracket_lo", fold.critical.bracket[0]);
    o.m("bracket_hi", fold.critical.bracket[1]);
    o.m("reached_fold", flag(fold.reached_fold));
    let above = p.ex.census_at(t_star + p.spec.param("probe_offset"))?;
    let below = p.ex.census_at(t_star - 0.5)?;
    o.m("distinct_above", above.distinct() as f64);
    o.m("pair_gap_above", if above.distinct() >= 2 { above.min_pair_gap() } else { f64::NAN });
    o.m("converged_below", below.converged as f64);
    o.m("minimal_monotone_excess", fold.minimal.monotone_excess());
    o.require(fold.reached_fold, "fold not reached");
    o.require(above.distinct() >= 2 && above.min_pair_gap() > 1e-4, "fewer than two solutions above the fold");
    o.require(below.converged == 0, "solution found below the fold");
    o.require(fold.minimal.monotone_excess() < 0.0, "minimal branch not decreasing");
    Ok(o)
}

fn check_t1_4(p: &Prepared) -> Result<Outcome> {
    let mut o = Outcome::new(
        "ladder brackets nested and no solution at t*- - probe_offset and a solution at t*- + probe_offset",
    );
    let crit = p.ex.locate_tstar_resonance(Sign::Minus)?;
    let off = p.spec.param("probe_offset");
    let lam = p.ex.lam();
    o.m("t_star", crit.t_star);
    o.m("bracket_lo", crit.bracket[0]);
    o.m("bracket_hi", crit.bracket[1]);
    let below = p.ex.solvable(lam, crit.t_star - off, None)?;
    let eps = *p.ex.config().ladder.last().expect("validated ladder");
    let (warm, _) = p.ex.solve_at(lam + eps, crit.t_star + off, None)?;
    let above = p.ex.solvable(lam, crit.t_star + off, Some(&warm))?;
    o.m("solvable_below", flag(below.is_some()));
    o.m("solvable_above", flag(above.is_some()));
    o.require(crit.brackets_monotone(1e-8), "ladder brackets not nested");
    o.require(below.is_none(), "solution found below t*-");
    o.require(above.is_some(), "no solution above t*-");
    Ok(o)
}

fn check_t1_5(p: &Prepared) -> Result<Outcome> {
    let mut o = Outcome::new("every sample solved and sup u(t_max) > sup u(t_max / 2) > 0");
    let reg = p.ex.sweep_negative_regime()?;
    let samples = p.ex.config().n_samples;
    o.m("solved_samples", reg.branch.points.len() as f64);
    if let Some(t) = reg.t_minus {
        o.m("t_minus", t);
    }
    for (t, s) in &reg.growth {
        o.m(&format!("sup_u_at_{t}"), *s);
    }
    let growing = reg.growth.len() == 2 && reg.growth[1].1 > reg.growth[0].1 && reg.growth[0].1 > 0.0;
    o.require(reg.branch.points.len() == samples, "missing samples");
    o.require(growing, "sup u not growing");
    Ok(o)
}

fn check_t1_6(p: &Prepared) -> Result<Outcome> {
    let mut o = Outcome::new("every right-hand side yields exactly one solution, basins agree within 10 * tol");
    let rep = p.ex.uniqueness_probe_teo6(p.spec.count("n_rhs"), p.spec.count("n_starts"))?;
    o.m("d0", rep.d0);
    o.m("shifted_lam_plus", rep.lam_plus);
    o.m("shifted_lam_minus", rep.lam_minus);
    o.m("cases", rep.cases.len() as f64);
    o.m("max_distinct", rep.cases.iter().map(|c| c.distinct).max().unwrap_or(0) as f64);
    let gap = rep.cases.iter().map(|c| c.max_agreement_gap / c.tol.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
    o.m("max_agreement_over_tol", gap);
    if let Some(c) = rep.cases.iter().find(|c| c.label == "constant") {
        o.m("constant_rhs_min_u", c.min_u);
        o.m("constant_rhs_max_u", c.max_u);
    }
    o.require(rep.all_unique(), "a right-hand side has zero or several solutions");
    o.require(gap <= 10.0, "basins disagree");
    Ok(o)
}

fn check_t2_1(p: &Prepared) -> Result<Outcome> {
    let mut o = Outcome::new("max sup-distance between eigenfunctions from positive random starts <= tol");
    let spec = p.spec;
    let worst = simplicity_probe(&spec.op, Sign::Plus, &Default::default(), spec.count("starts"), spec.seed)?;
    o.m("max_eigenfunction_gap", worst);
    o.require(worst <= spec.param("tol"), "distinct eigenfunctions found");

    // isolation evidence: F[u] = -lambda u has only u = 0 just above lambda_1^-
    let minus = p.ex.eigen_minus().lam;
    let width = 0.025 * minus.abs();
    let n = spec.count("isolation_samples");
    let zero = GridFunction::zeros(spec.op.grid());
    let mut nontrivial = 0usize;
    for i in 1..=n {
        let lam = minus + width * i as f64 / (n + 1) as f64;
        let starts = p.ex.start_battery(1.0, i as u64);
        let c = p.ex.census(lam, &zero, &starts, f64::NAN)?;
        nontrivial += c.solutions.iter().filter(|u| u.sup_norm() > 1e-8).count();
    }
    o.m("isolation_lambdas", n as f64);
    o.m("isolation_nontrivial_found", nontrivial as f64);
    Ok(o)
}

fn check_t2_3(p: &Prepared) -> Result<Outcome> {
    let mut o = Outcome::new(
        "f <= 0 gives u >= 0 and sup u^- / |f^+|_{L^N} is finite and invariant under f -> 2 f",
    );
    let spec = p.spec;
    let op = spec.op.with_shift(spec.op.shift() + p.ex.lam());
    let g = *op.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let params = Default::default();
    let mut worst_ratio: f64 = 0.0;
    let mut worst_scaling: f64 = 0.0;
    let mut worst_neg: f64 = 0.0;
    for _ in 0..spec.count("trials") {
        let vals: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = op.restrict(&GridFunction::from_values(&g, vals)?);
        let (u, r1) = solve(&op, &f, &params, None)?;
        let (u2, r2) = solve(&op, &f.scale(2.0), &params, None)?;
        let nonpos = f.map(|x| -x.abs());
        let (w, r3) = solve(&op, &nonpos, &params, None)?;
        if !(r1.converged() && r2.converged() && r3.converged()) {
            return Err(Error::Regime("ABP probe solve did not converge".into()));
        }
        let a = check_abp(&op, &u, &f, AbpSide::Minus)?;
        let b = check_abp(&op, &u2, &f.scale(2.0), AbpSide::Minus)?;
        worst_ratio = worst_ratio.max(a.ratio);
        worst_scaling = worst_scaling.max((a.ratio - b.ratio).abs() / a.ratio.max(1e-300));
        worst_neg = worst_neg.max((-w.min()).max(0.0));
    }
    o.m("max_ratio", worst_ratio);
    o.m("ratio_scaling_defect", worst_scaling);
    o.m("max_negative_part_for_nonpositive_f", worst_neg);
    o.require(worst_neg == 0.0, "negative solution for nonpositive forcing");
    o.require(worst_ratio.is_finite(), "unbounded ratio");
    o.require(worst_scaling <= 1e-8, "ratio not scale invariant");
    Ok(o)
}

fn check_t2_4(p: &Prepared) -> Result<Outcome> {
    let mut o = Outcome::new("phi_1^+ > 0 at interior nodes and min |phi| / h at edge-adjacent nodes > 0");
    let pair = p.ex.eigen_plus();
    let c = hopf_constant(&p.spec.op, pair);
    let min_phi = p.spec.op.restrict(&pair.phi).values().iter().enumerate()
        .filter(|(k, _)| p.spec.op.mask().is_none_or(|m| m.contains(*k)))
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    o.m("hopf_constant", c);
    o.m("min_phi", min_phi);
    o.require(min_phi > 0.0, "eigenfunction not positive");
    o.require(c > 0.0 && c.is_finite(), "no positive boundary slope");
    Ok(o)
}

fn check_l2_8(p: &Prepared) -> Result<Outcome> {
    let mut o = Outcome::new("(F + lambda)[k u1 + (1 - k) u0] <= k f1 + (1 - k) f0 + 1e-10 * max(1, |f|) at every node");
    let spec = p.spec;
    let (t0, t1, k) = (spec.param("t0"), spec.param("t1"), spec.param("k"));
    if !(0.0..=1.0).contains(&k) {
        return Err(Error::Spec(format!("L2.8 needs k in [0, 1], got {k}")));
    }
    let lam = p.ex.lam();
    let (u0, r0) = p.ex.solve_at(lam, t0, None)?;
    let (u1, r1) = p.ex.solve_at(lam, t1, Some(&u0))?;
    if !(r0.converged() && r1.converged()) {
        return Err(Error::Regime("endpoint solves did not converge".into()));
    }
    let op = spec.op.with_shift(spec.op.shift() + lam);
    let (f0, f1) = (p.ex.rhs(t0), p.ex.rhs(t1));
    let mix = u1.scale(k).axpy(1.0 - k, &u0);
    let target = f1.scale(k).axpy(1.0 - k, &f0);
    let excess = op.restrict(&(&op.apply(&mix)? - &target)).max();
    let fscale = f0.sup_norm().max(f1.sup_norm()).max(1.0);
    o.m("max_excess", excess);
    o.m("rhs_scale", fscale);
    o.require(excess <= 1e-10 * fscale, "combination is not a supersolution");
    Ok(o)
}

fn check_p4_4(p: &Prepared) -> Result<Outcome> {
    let mut o = Outcome::new("for f = -k phi_1^+, k in {0.5, 1, 2}: every solution found has max u < 0");
    let mut worst = f64::NEG_INFINITY;
    for k in [0.5, 1.0, 2.0] {
        let f = p.ex.eigen_plus().phi.scale(-k);
        let starts = p.ex.start_battery(1.0, k.to_bits());
        let c = p.ex.census(p.ex.lam(), &f, &starts, f64::NAN)?;
        if c.solutions.is_empty() {
            o.require(false, "no solution found");
        }
        for u in &c.solutions {
            worst = worst.max(u.max());
        }
        o.m(&format!("max_u_k_{k}"), c.solutions.iter().map(|u| u.max()).fold(f64::NEG_INFINITY, f64::max));
    }
    o.require(worst < 0.0, "a solution is not negative");
    Ok(o)
}

fn check_p6_1(p: &Prepared) -> Result<Outcome> {
    let mut o = Outcome::new("lambda_1^+(lower half) - lambda_1^+(full) > 0 (and |ratio - expected| <= 0.5% when set)");
    let mask = SubdomainMask::lower_half(p.spec.op.grid())?;
    let (full, sub) = subdomain_gap(&p.spec.op, &mask, &Default::default())?;
    o.m("lam_full", full);
    o.m("lam_sub", sub);
    o.m("gap", sub - full);
    o.m("ratio", sub / full);
    o.require(sub > full, "no gap");
    let expected = p.spec.param("expected_ratio");
    if expected.is_finite() {
        o.require((sub / full - expected).abs() <= 5e-3 * expected, "ratio off the expected value");
    }
    Ok(o)
}

fn execute(p: &Prepared) -> CheckResult {
    let spec = p.spec;
    let run = match spec.theorem_id {
        TheoremId::T1_1 => check_t1_1(p),
        TheoremId::T1_2 => check_t1_2(p),
        TheoremId::T1_3 => check_t1_3(p),
        TheoremId::T1_4 => check_t1_4(p),
        TheoremId::T1_5 => check_t1_5(p),
        TheoremId::T1_6 => check_t1_6(p),
        TheoremId::T2_1 => check_t2_1(p),
        TheoremId::T2_3 => check_t2_3(p),
        TheoremId::T2_4 => check_t2_4(p),
        TheoremId::L2_8 => check_l2_8(p),
        TheoremId::P4_4 => check_p4_4(p),
        TheoremId::P6_1 => check_p6_1(p),
    };
    let (pass, mut metrics, invariant, note) = match run {
        Ok(o) => (o.pass, o.metrics, o.invariant.to_string(), o.note),
        Err(e) => (false, BTreeMap::new(), String::from("check completed without error"), e.to_string()),
    };
    for (k, v) in &p.base {
        metrics.entry(k.clone()).or_insert(*v);
    }
    let status = match (spec.severity, pass) {
        (Severity::Evidence, _) => CheckStatus::Evidence,
        (Severity::Assert, true) => CheckStatus::Pass,
        (Severity::Assert, false) => CheckStatus::Fail,
    };
    CheckResult {
        theorem_id: spec.theorem_id,
        label: spec.label.clone(),
        severity: spec.severity,
        status,
        metrics,
        artifacts: Vec::new(),
        invariant,
        note,
    }
}

/// Validates every spec, then runs them on the current rayon pool. Results
/// are ordered by theorem id, then label.
pub fn run_suite(specs: &[CheckSpec]) -> Result<Vec<CheckResult>> {
    let prepared: Vec<Prepared> = specs.iter().map(prepare).collect::<Result<_>>()?;
    let mut results: Vec<CheckResult> = prepared.par_iter().map(execute).collect();
    results.sort_by(|a, b| (a.theorem_id, &a.label).cmp(&(b.theorem_id, &b.label)));
    Ok(results)
}

/// True when some Assert-severity check failed.
pub fn any_failed(results: &[CheckResult]) -> bool {
    results.iter().any(|r| r.status == CheckStatus::Fail)
}

/// One row per result: id, statement, label with invariant, status, metrics.
pub fn emit_traceability(results: &[CheckResult]) -> String {
    let mut s = String::from("| theorem | statement | check | status | metrics |\n|---|---|---|---|---|\n");
    for r in results {
        let metrics = if r.metrics.is_empty() {
            "-".to_string()
        } else {
            r.metrics.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect::<Vec<_>>().join(", ")
        };
        let mut check = format!("{}: `{}`", r.label, r.invariant);
        if !r.note.is_empty() {
            check.push_str(&format!(" ({})", r.note));
        }
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} |\n",
            r.theorem_id,
            r.theorem_id.statement(),
            check.replace('|', "\\|"),
            r.status,
            metrics
        ));
    }
    s
}

/// One check per statement on `(0, 1)` with `n` interior nodes, using the
/// operator families each statement is exercised with.
pub fn default_specs(n: usize) -> Result<Vec<CheckSpec>> {
    use crate::operator::ControlFamily;
    use std::f64::consts::PI;
    let g = Grid::interval(0.0, 1.0, n)?;
    let op = |fam: ControlFamily| DiscreteOperator::new(fam, g, 0.0);
    let hh = 1.0 / (n + 1) as f64;
    let mu = 2.0 / (hh * hh) * (1.0 - (PI * hh).cos());
    let sine2 = GridFunction::sample(&g, |x, _| 0.5 * (2.0 * PI * x).sin());
    let parabola = GridFunction::sample(&g, |x, _| x * (1.0 - x));
    let lap = op(ControlFamily::laplacian(1))?;
    let mask = SubdomainMask::lower_half(&g)?;
    let (full, half) = subdomain_gap(&lap, &mask, &Default::default())?;
    let d0 = 0.5 * (half - full);
    Ok(vec![
        CheckSpec::new(TheoremId::T1_1, op(ControlFamily::fucik(1, 5.0, 0.0)?)?).with_h(sine2.clone()),
        CheckSpec::new(TheoremId::T1_2, op(ControlFamily::fucik(1, mu, 0.0)?)?),
        CheckSpec::new(TheoremId::T1_3, op(ControlFamily::fucik(1, 15.0, 0.0)?)?),
        CheckSpec::new(TheoremId::T1_4, op(ControlFamily::fucik(1, mu + 4.0, 0.0)?)?).with_h(parabola),
        CheckSpec::new(TheoremId::T1_5, op(ControlFamily::fucik(1, 3.0, 0.0)?)?).with_h(sine2.clone()),
        CheckSpec::new(TheoremId::T1_6, op(ControlFamily::fucik(1, d0 / 4.0, 0.0)?)?).with_h(sine2).with_seed(7),
        CheckSpec::new(TheoremId::T2_1, lap.clone()).with_seed(11),
        CheckSpec::new(TheoremId::T2_3, op(ControlFamily::pucci_minus(1, 1.0, 2.0)?)?).with_seed(3),
        CheckSpec::new(TheoremId::T2_4, op(ControlFamily::pucci_plus(1, 1.0, 2.0)?)?),
        CheckSpec::new(TheoremId::L2_8, op(ControlFamily::fucik(1, 5.0, 0.0)?)?),
        CheckSpec::new(TheoremId::P4_4, op(ControlFamily::fucik(1, 3.0, 0.0)?)?),
        CheckSpec::new(TheoremId::P6_1, lap).with_param("expected_ratio", 4.0),
    ])
}
