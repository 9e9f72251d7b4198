//! Howard (policy) iteration for `F_h[u] = f`, plus comparison and ABP probes.
//!
//! Each step freezes the maximizing control at every node and solves the
//! resulting linear system by banded LU. When the full Newton step does not
//! decrease the sup-norm residual, step lengths `1/2, 1/4, ...` are tried and
//! the first one that does is taken.
//!
//! The residual threshold is `max(tol, 16 eps scale |u|)`: at fine grids the
//! floating-point error of evaluating `F_h[u]` alone is of order
//! `eps * |u| / h^2`, and no iteration can push the residual below that.
//!
//! The solver does not steer between multiple solutions. When `F + lambda` is
//! not proper the result is whichever solution the start `u0` leads to.

use serde::{Deserialize, Serialize};

use crate::banded::BandLu;
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::operator::{DiscreteOperator, Linearization};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    /// Residual tolerance; `None` means `max(1e-10 |f|, 1e-13)`.
    pub tol: Option<f64>,
    pub max_policy_iters: usize,
    /// Iterates with a larger sup-norm are reported as `Diverged`.
    pub blowup_norm: f64,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams { tol: None, max_policy_iters: 200, blowup_norm: 1e8 }
    }
}

impl SolveParams {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                return Err(Error::Config(format!("tol must be positive, got {t}")));
            }
        }
        if self.max_policy_iters == 0 {
            return Err(Error::Config("max_policy_iters must be at least 1".into()));
        }
        if !(self.blowup_norm > 1.0) {
            return Err(Error::Config(format!("blowup_norm must exceed 1, got {}", self.blowup_norm)));
        }
        Ok(())
    }

    pub fn tol_for(&self, f: &GridFunction) -> f64 {
        self.tol.unwrap_or_else(|| (1e-10 * f.sup_norm()).max(1e-13))
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = Some(tol);
        self
    }

    pub fn with_blowup(mut self, m: f64) -> Self {
        self.blowup_norm = m;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    Diverged,
    MaxIters,
    SingularLinearization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub iters: usize,
    pub residual_history: Vec<f64>,
    pub active_control_changes: Vec<usize>,
    /// Threshold actually applied to the final residual.
    pub tol_used: f64,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }

    /// Largest increase of the residual after the first step.
    pub fn descent_violation(&self) -> f64 {
        self.residual_history
            .windows(2)
            .skip(1)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

const MAX_HALVINGS: usize = 12;

/// Solves `apply(op, u) = f` starting from `u0` (zero by default).
pub fn solve(
    op: &DiscreteOperator,
    f: &GridFunction,
    params: &SolveParams,
    u0: Option<&GridFunction>,
) -> Result<(GridFunction, SolveReport)> {
    params.validate()?;
    if f.grid() != op.grid() {
        return Err(Error::Usage("right-hand side does not live on the operator grid".into()));
    }
    let f = op.restrict(f);
    let mut u = match u0 {
        Some(u0) => {
            if u0.grid() != op.grid() {
                return Err(Error::Usage("initial guess does not live on the operator grid".into()));
            }
            op.restrict(u0)
        }
        None => GridFunction::zeros(op.grid()),
    };
    let tol = params.tol_for(&f);
    let scale = op.scale().max(1.0);
    let floor = |u: &GridFunction| tol.max(16.0 * f64::EPSILON * scale * u.sup_norm());

    let mut history = Vec::new();
    let mut changes = Vec::new();
    let mut prev_policy: Option<Vec<usize>> = None;
    let mut res = op.residual(&u, &f)?.sup_norm();
    history.push(res);

    let status = loop {
        if !u.is_finite() || u.sup_norm() > params.blowup_norm {
            break SolveStatus::Diverged;
        }
        if res <= floor(&u) {
            break SolveStatus::Converged;
        }
        if history.len() > params.max_policy_iters {
            break SolveStatus::MaxIters;
        }
        let Linearization { stencil, policy } = op.linearize_at(&u)?;
        changes.push(match &prev_policy {
            Some(p) => p.iter().zip(&policy).filter(|(a, b)| a != b).count(),
            None => 0,
        });
        let lu = match factorize(&stencil, scale) {
            Some(lu) => lu,
            None => break SolveStatus::SingularLinearization,
        };
        let newton = GridFunction::from_raw(op.grid(), lu.solve(f.values()));
        if !newton.is_finite() {
            break SolveStatus::SingularLinearization;
        }
        let step = &newton - &u;
        let mut next = newton;
        let mut next_res = op.residual(&next, &f)?.sup_norm();
        if !(next_res < res) {
            let mut theta = 0.5;
            for _ in 0..MAX_HALVINGS {
                let trial = u.axpy(theta, &step);
                let r = op.residual(&trial, &f)?.sup_norm();
                if r < res {
                    next = trial;
                    next_res = r;
                    break;
                }
                theta *= 0.5;
            }
        }
        u = next;
        res = next_res;
        history.push(res);
        prev_policy = Some(policy);
    };

    let report = SolveReport {
        status,
        iters: history.len(),
        residual_history: history,
        active_control_changes: changes,
        tol_used: floor(&u),
    };
    Ok((u, report))
}

fn factorize(stencil: &crate::operator::Stencil, scale: f64) -> Option<BandLu> {
    stencil.to_band(-scale).factorize().ok()
}

/// Outcome of a discrete comparison check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// Whether `F[u] <= F[v]` holds within tolerance, i.e. the check applies.
    pub premise_holds: bool,
    /// `max (F[u] - F[v])^+`
    pub premise_excess: f64,
    /// `max (v - u)^+`, relevant only when the premise holds.
    pub violation: f64,
}

impl ComparisonReport {
    pub fn passed(&self, tol: f64) -> bool {
        !self.premise_holds || self.violation <= tol
    }
}

/// If `F[u] <= F[v]` then `u >= v` is expected (operator with positive
/// principal eigenvalue). Reports the worst ordering violation.
pub fn check_comparison(op: &DiscreteOperator, u: &GridFunction, v: &GridFunction) -> Result<ComparisonReport> {
    let fu = op.apply(u)?;
    let fv = op.apply(v)?;
    let excess = (&fu - &fv).max().max(0.0);
    let tol = 1e-10 * op.scale() * u.sup_norm().max(v.sup_norm()).max(1.0);
    let premise_holds = excess <= tol;
    let violation = if premise_holds { op.restrict(&(v - u)).max().max(0.0) } else { 0.0 };
    Ok(ComparisonReport { premise_holds, premise_excess: excess, violation })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbpSide {
    /// `sup u^+` against `|f^-|_{L^N}`.
    Plus,
    /// `sup u^-` against `|f^+|_{L^N}`.
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbpReport {
    pub sup_part: f64,
    pub rhs_norm: f64,
    /// `sup_part / rhs_norm`, with `0/0 = 0`.
    pub ratio: f64,
}

/// Empirical constant of the one-sided maximum principle
/// `sup u^- <= C |f^+|_{L^N}` (or its mirror), `N` the dimension.
pub fn check_abp(op: &DiscreteOperator, u: &GridFunction, f: &GridFunction, side: AbpSide) -> Result<AbpReport> {
    u.same_grid(f)?;
    if u.grid() != op.grid() {
        return Err(Error::Usage("grid function does not live on the operator grid".into()));
    }
    let dim = op.grid().dim() as f64;
    let (sup_part, rhs_norm) = match side {
        AbpSide::Minus => ((-u.min()).max(0.0), f.map(|x| x.max(0.0)).lp_norm(dim)),
        AbpSide::Plus => (u.max().max(0.0), f.map(|x| (-x).max(0.0)).lp_norm(dim)),
    };
    let ratio = if sup_part == 0.0 {
        0.0
    } else if rhs_norm == 0.0 {
        f64::INFINITY
    } else {
        sup_part / rhs_norm
    };
    Ok(AbpReport { sup_part, rhs_norm, ratio })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::operator::ControlFamily;
    use std::f64::consts::PI;

    fn line(n: usize) -> Grid {
        Grid::interval(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn laplacian_sine() {
        let g = line(199);
        let op = DiscreteOperator::new(ControlFamily::laplacian(1), g, 0.0).unwrap();
        let f = GridFunction::sample(&g, |x, _| -PI * PI * (PI * x).sin());
        let (u, rep) = solve(&op, &f, &SolveParams::default(), None).unwrap();
        assert!(rep.converged());
        let exact = GridFunction::sample(&g, |x, _| (PI * x).sin());
        let h = g.h()[0];
        assert!((&u - &exact).sup_norm() <= h * h);
        assert!(op.residual(&u, &f).unwrap().sup_norm() <= rep.tol_used);
    }

    #[test]
    fn zero_rhs_proper() {
        let g = line(49);
        let op = DiscreteOperator::new(ControlFamily::fucik(1, 2.0, 1.0).unwrap(), g, -5.0).unwrap();
        let (u, rep) = solve(&op, &GridFunction::zeros(&g), &SolveParams::default(), None).unwrap();
        assert_eq!(u.sup_norm(), 0.0);
        assert_eq!(rep.iters, 1);
        assert!(rep.converged());
    }

    #[test]
    fn fucik_negative_branch() {
        let g = line(199);
        let op = DiscreteOperator::new(ControlFamily::fucik(1, 15.0, 0.0).unwrap(), g, 0.0).unwrap();
        let phi = GridFunction::sample(&g, |x, _| (PI * x).sin());
        let (u, rep) = solve(&op, &phi, &SolveParams::default(), Some(&phi.scale(-10.0))).unwrap();
        assert!(rep.converged(), "{rep:?}");
        assert!(u.max() < 0.0);
        let mu = 2.0 / (g.h()[0].powi(2)) * (1.0 - (PI * g.h()[0]).cos());
        assert!((&u + &phi.scale(1.0 / mu)).sup_norm() < 1e-9);
    }

    #[test]
    fn singular_linearization_at_eigenvalue() {
        let g = line(9);
        let h = g.h()[0];
        let mu = 2.0 / (h * h) * (1.0 - (PI * h).cos());
        let op = DiscreteOperator::new(ControlFamily::laplacian(1), g, mu).unwrap();
        let f = GridFunction::constant(&g, 1.0);
        let (_, rep) = solve(&op, &f, &SolveParams::default(), None).unwrap();
        assert!(matches!(rep.status, SolveStatus::SingularLinearization | SolveStatus::Diverged), "{rep:?}");
    }

    #[test]
    fn comparison_examples() {
        let g = line(99);
        let op = DiscreteOperator::new(ControlFamily::laplacian(1), g, 0.0).unwrap();
        let p = SolveParams::default();
        let (u, _) = solve(&op, &GridFunction::constant(&g, -1.0), &p, None).unwrap();
        let v = GridFunction::zeros(&g);
        let rep = check_comparison(&op, &u, &v).unwrap();
        assert!(rep.premise_holds && rep.violation == 0.0);
        let parabola = GridFunction::sample(&g, |x, _| x * (1.0 - x) / 2.0);
        assert!((&u - &parabola).sup_norm() < 1e-10);
        let same = check_comparison(&op, &u, &u).unwrap();
        assert_eq!(same.violation, 0.0);
    }

    #[test]
    fn abp_examples() {
        let g = line(199);
        let op = DiscreteOperator::new(ControlFamily::laplacian(1), g, 0.0).unwrap();
        let z = GridFunction::zeros(&g);
        assert_eq!(check_abp(&op, &z, &z, AbpSide::Minus).unwrap().ratio, 0.0);
        let f = GridFunction::constant(&g, 1.0);
        let (u, _) = solve(&op, &f, &SolveParams::default(), None).unwrap();
        let r = check_abp(&op, &u, &f, AbpSide::Minus).unwrap();
        assert!((r.sup_part - 0.125).abs() < 1e-4);
        assert!((r.ratio - 0.125).abs() < 0.125 * 0.01, "{r:?}");
    }

    #[test]
    fn grid_mismatch_is_usage_error() {
        let op = DiscreteOperator::new(ControlFamily::laplacian(1), line(9), 0.0).unwrap();
        let f = GridFunction::zeros(&line(11));
        assert!(matches!(solve(&op, &f, &SolveParams::default(), None), Err(Error::Usage(_))));
    }
}
