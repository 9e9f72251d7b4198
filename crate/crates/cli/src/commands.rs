//! Subcommand implementations. Each writes its artifacts into the output
//! directory and returns the exit code for a completed run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hjb_core::branch::{Branch, BranchExplorer, CriticalReport, LamSpec};
use hjb_core::checks::{any_failed, emit_traceability, run_suite};
use hjb_core::spectral::{eigen_bisect_crosscheck, principal_eigen, Sign};
use hjb_core::Error;
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::output::{bifurcation_svg, read_branch_csv, write_json, write_text, Marker, Series};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Eigen,
    Solve,
    Branch,
    Tstar,
    Suite,
    Diagram,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Eigen => "eigen",
            Command::Solve => "solve",
            Command::Branch => "branch",
            Command::Tstar => "tstar",
            Command::Suite => "suite",
            Command::Diagram => "diagram",
        }
    }
}

pub struct RunOutcome {
    pub exit_code: i32,
    pub artifacts: Vec<String>,
}

struct Ctx<'a> {
    sc: &'a Scenario,
    out: &'a Path,
    seed: u64,
    artifacts: Vec<String>,
}

impl Ctx<'_> {
    fn text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let p = write_text(self.out, name, text)?;
        self.artifacts.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<(), CliError> {
        let p = write_json(self.out, name, v)?;
        self.artifacts.push(p);
        Ok(())
    }
}

/// Runs `cmd` on the current rayon pool.
pub fn run_command(cmd: Command, sc: &Scenario, out: &Path, seed: u64) -> Result<RunOutcome, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(format!("creating {}", out.display()), e))?;
    let mut ctx = Ctx { sc, out, seed, artifacts: Vec::new() };
    let code = match cmd {
        Command::Eigen => eigen(&mut ctx)?,
        Command::Solve => solve(&mut ctx)?,
        Command::Branch => branch(&mut ctx)?,
        Command::Tstar => tstar(&mut ctx)?,
        Command::Suite => suite(&mut ctx)?,
        Command::Diagram => diagram(&mut ctx)?,
    };
    Ok(RunOutcome { exit_code: code, artifacts: ctx.artifacts })
}

fn eigen(ctx: &mut Ctx) -> Result<i32, CliError> {
    let op = ctx.sc.operator()?;
    let params = ctx.sc.eigen.params();
    let (plus, minus) =
        rayon::join(|| principal_eigen(&op, Sign::Plus, &params), || principal_eigen(&op, Sign::Minus, &params));
    let (plus, minus) = (plus?, minus?);
    let cross = |lam: f64, sign: Sign| eigen_bisect_crosscheck(&op, sign, [lam - 1.0, lam + 1.0], 45);
    let (bp, bm) = rayon::join(|| cross(plus.lam, Sign::Plus), || cross(minus.lam, Sign::Minus));
    ctx.text("eigen_plus.csv", &plus.phi.to_csv())?;
    ctx.text("eigen_minus.csv", &minus.phi.to_csv())?;
    let summary = json!({
        "plus": plus.summary(),
        "minus": minus.summary(),
        "bisection": { "plus": bp?, "minus": bm? },
        "grid_h": op.grid().h(),
    });
    ctx.json("summary.json", &summary)?;
    Ok(0)
}

fn explorer(ctx: &Ctx) -> Result<BranchExplorer, CliError> {
    Ok(BranchExplorer::new(ctx.sc.branch_config(ctx.seed)?)?)
}

fn solve(ctx: &mut Ctx) -> Result<i32, CliError> {
    let ex = explorer(ctx)?;
    let t = ctx.sc.solve.t;
    let (u, rep) = ex.solve_at(ex.lam(), t, None)?;
    if !rep.converged() {
        return Err(Error::Regime(format!("solve at t = {t} ended with {:?}", rep.status)).into());
    }
    ctx.text("solution.csv", &u.to_csv())?;
    ctx.json("solve_report.json", &json!({ "t": t, "lambda": ex.lam(), "report": rep }))?;
    Ok(0)
}

enum Regime {
    Subcritical,
    Resonance(Sign),
    Fold,
    Negative,
}

fn regime(ex: &BranchExplorer, lam: LamSpec) -> Result<Regime, CliError> {
    let (plus, minus, l) = (ex.eigen_plus().lam, ex.eigen_minus().lam, ex.lam());
    let near = |a: f64, b: f64| (a - b).abs() <= 1e-8 * (1.0 + b.abs());
    Ok(match lam {
        LamSpec::AtLamPlus { offset: 0.0 } => Regime::Resonance(Sign::Plus),
        LamSpec::AtLamMinus { offset: 0.0 } => Regime::Resonance(Sign::Minus),
        _ if near(l, plus) => Regime::Resonance(Sign::Plus),
        _ if near(l, minus) => Regime::Resonance(Sign::Minus),
        _ if l < plus => Regime::Subcritical,
        _ if l < minus => Regime::Fold,
        _ if l <= minus + 0.05 * minus.abs() => Regime::Negative,
        _ => {
            return Err(Error::Regime(format!(
                "lambda = {l} lies beyond the traced regimes (lambda_1^+ = {plus}, lambda_1^- = {minus}, \
                 negative regime up to {})",
                minus + 0.05 * minus.abs()
            ))
            .into())
        }
    })
}

fn branch_summary(b: &Branch) -> serde_json::Value {
    json!({ "label": b.label, "lambda": b.lam, "points": b.points.len(), "metrics": b.metrics })
}

fn branch(ctx: &mut Ctx) -> Result<i32, CliError> {
    let ex = explorer(ctx)?;
    let mut summary = BTreeMap::new();
    match regime(&ex, ctx.sc.lam.to_spec())? {
        Regime::Subcritical => {
            let b = ex.sweep_subcritical()?;
            ctx.text("branch.csv", &b.to_csv())?;
            summary.insert("branch", branch_summary(&b));
        }
        Regime::Resonance(sign) => {
            let crit = ex.locate_tstar_resonance(sign)?;
            let tr = ex.trace_resonant_branch(sign, crit.t_star)?;
            ctx.text("branch.csv", &tr.branch.to_csv())?;
            ctx.json("critical.json", &crit)?;
            summary.insert("branch", branch_summary(&tr.branch));
            summary.insert(
                "resonance",
                json!({
                    "t_star_refined": tr.t_star,
                    "alternative": tr.alternative,
                    "u_star_norm": tr.u_star.as_ref().map(|u| u.sup_norm()),
                    "ray_residuals": tr.ray_residuals,
                    "ray_tol": tr.ray_tol,
                }),
            );
        }
        Regime::Fold => {
            let fold = ex.trace_fold()?;
            ctx.text("branch.csv", &fold.minimal.to_csv())?;
            ctx.text("branch_second.csv", &fold.second.to_csv())?;
            ctx.json("critical.json", &fold.critical)?;
            summary.insert("branch", branch_summary(&fold.minimal));
            summary.insert("second", branch_summary(&fold.second));
            summary.insert("fold", json!({ "reached_fold": fold.reached_fold, "turned": fold.turned }));
        }
        Regime::Negative => {
            let reg = ex.sweep_negative_regime()?;
            ctx.text("branch.csv", &reg.branch.to_csv())?;
            summary.insert("branch", branch_summary(&reg.branch));
            summary.insert(
                "negative_regime",
                json!({ "t_minus": reg.t_minus, "antimaximum": reg.antimaximum, "growth": reg.growth }),
            );
        }
    }
    summary.insert(
        "eigen",
        json!({ "plus": ex.eigen_plus().summary(), "minus": ex.eigen_minus().summary(), "lambda": ex.lam() }),
    );
    ctx.json("branch.json", &summary)?;
    Ok(0)
}

fn tstar(ctx: &mut Ctx) -> Result<i32, CliError> {
    let ex = explorer(ctx)?;
    let crit: CriticalReport = match regime(&ex, ctx.sc.lam.to_spec())? {
        Regime::Resonance(sign) => ex.locate_tstar_resonance(sign)?,
        Regime::Fold => ex.trace_fold()?.critical,
        _ => {
            return Err(Error::Regime(format!(
                "no critical t at lambda = {}: needs resonance or lambda_1^+ < lambda < lambda_1^-",
                ex.lam()
            ))
            .into())
        }
    };
    ctx.json("critical.json", &crit)?;
    Ok(0)
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

fn suite(ctx: &mut Ctx) -> Result<i32, CliError> {
    let specs = ctx.sc.check_specs(ctx.seed)?;
    let mut results = run_suite(&specs)?;
    let dir = ctx.out.join("checks");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    for (i, r) in results.iter_mut().enumerate() {
        let name = format!("{:02}_{}.json", i, file_stem(&r.label));
        r.artifacts.push(PathBuf::from("checks").join(&name).display().to_string());
        let p = write_json(&dir, &name, &*r)?;
        ctx.artifacts.push(p);
    }
    ctx.json("suite.json", &results)?;
    ctx.text("traceability.md", &emit_traceability(&results))?;
    for r in &results {
        eprintln!("{} [{}]: {}{}", r.theorem_id, r.label, r.status, if r.note.is_empty() { String::new() } else { format!(" ({})", r.note) });
    }
    Ok(if any_failed(&results) { 1 } else { 0 })
}

fn diagram(ctx: &mut Ctx) -> Result<i32, CliError> {
    if !ctx.out.join("branch.csv").exists() {
        branch(ctx)?;
    }
    let mut series = vec![Series { label: "branch".into(), points: read_branch_csv(&ctx.out.join("branch.csv"))? }];
    let second = ctx.out.join("branch_second.csv");
    if second.exists() {
        series.push(Series { label: "second branch".into(), points: read_branch_csv(&second)? });
    }
    let mut markers = Vec::new();
    let crit = ctx.out.join("critical.json");
    if crit.exists() {
        let text = std::fs::read_to_string(&crit).map_err(|e| CliError::io(format!("reading {}", crit.display()), e))?;
        let c: CriticalReport =
            serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", crit.display())))?;
        markers.push(Marker { label: format!("t* = {:.4e}", c.t_star), t: c.t_star });
    }
    let svg = bifurcation_svg(&ctx.sc.name, &series, &markers);
    ctx.text("bifurcation.svg", &svg)?;
    Ok(0)
}

