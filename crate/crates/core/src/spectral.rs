//! Principal half-eigenvalues `lambda_1^+`, `lambda_1^-` of `F_h`.
//!
//! An eigenpair satisfies `F_h[phi] + lambda phi = 0` with `phi > 0` (sign `+`)
//! or `phi < 0` (sign `-`), normalized to `|phi|_inf = 1`.
//!
//! The primary method is shifted inverse power iteration: with `sigma` large
//! enough that `F - sigma` is proper, each step solves
//! `(F - sigma)[w] = -u_k` and sets `lambda = 1/|w| - sigma`. Positive and
//! negative cones are preserved, so the starting sign selects the branch.
//!
//! [`eigen_bisect_crosscheck`] is an independent second route that bisects on
//! whether `(F + lambda)[u] = -+probe` has a solution of the required sign.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, SubdomainMask};
use crate::operator::DiscreteOperator;
use crate::solver::{solve, SolveParams, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenParams {
    pub shift_margin: f64,
    /// Tolerance on successive eigenvalue increments.
    pub tol: f64,
    pub max_iters: usize,
    /// Target for `|F[phi] + lambda phi|_inf`.
    pub residual_tol: f64,
}

impl Default for EigenParams {
    fn default() -> Self {
        EigenParams { shift_margin: 1.0, tol: 1e-10, max_iters: 500, residual_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenPair {
    pub sign: Sign,
    pub lam: f64,
    pub phi: GridFunction,
    pub residual: f64,
    pub iters: usize,
}

/// Compact record for JSON output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenSummary {
    pub sign: Sign,
    pub lam: f64,
    pub residual: f64,
    pub iters: usize,
}

impl EigenPair {
    pub fn summary(&self) -> EigenSummary {
        EigenSummary { sign: self.sign, lam: self.lam, residual: self.residual, iters: self.iters }
    }
}

/// `sigma = max(0, max_a c_a + shift) + margin`, making `F - sigma` proper.
pub fn properness_shift(op: &DiscreteOperator, margin: f64) -> f64 {
    (op.family().max_c() + op.shift()).max(0.0) + margin
}

pub fn principal_eigen(op: &DiscreteOperator, sign: Sign, params: &EigenParams) -> Result<EigenPair> {
    let start = op.restrict(&GridFunction::constant(op.grid(), sign.factor()));
    principal_eigen_from(op, sign, params, &start)
}

/// Inverse iteration from a caller-supplied start of the requested sign.
pub fn principal_eigen_from(
    op: &DiscreteOperator,
    sign: Sign,
    params: &EigenParams,
    start: &GridFunction,
) -> Result<EigenPair> {
    if !(params.shift_margin > 0.0 && params.tol > 0.0 && params.max_iters > 0) {
        return Err(Error::Config(format!("invalid eigen parameters {params:?}")));
    }
    let s = sign.factor();
    check_sign(op, start, s, 0).map_err(|_| Error::Eigen("start does not have the requested sign".into()))?;
    let sigma = properness_shift(op, params.shift_margin);
    let shifted = op.with_shift(op.shift() - sigma);
    let inner = SolveParams { tol: Some(1e-14), max_policy_iters: 200, blowup_norm: 1e300 };

    let mut u = normalize(start);
    let mut lam = f64::NAN;
    let mut settled_at = None;
    let mut best_res = f64::INFINITY;
    let mut since_best = 0;
    for it in 1..=params.max_iters {
        let (w, rep) = solve(&shifted, &u.scale(-1.0), &inner, Some(&u))?;
        if rep.status != SolveStatus::Converged {
            return Err(Error::Eigen(format!("inner solve ended with {:?} at iteration {it}", rep.status)));
        }
        let nw = w.sup_norm();
        if !(nw > 0.0) {
            return Err(Error::Eigen(format!("inner solve returned zero at iteration {it}")));
        }
        let next_lam = 1.0 / nw - sigma;
        check_sign(op, &w, s, it)?;
        u = w.scale(1.0 / nw);
        let dlam = (next_lam - lam).abs();
        lam = next_lam;
        if dlam <= params.tol && settled_at.is_none() {
            settled_at = Some(it);
        }
        if settled_at.is_some() {
            let res = eigen_residual(op, &u, lam)?;
            if res <= params.residual_tol {
                return Ok(EigenPair { sign, lam, phi: u, residual: res, iters: it });
            }
            if res < 0.5 * best_res {
                best_res = res;
                since_best = 0;
            } else {
                since_best += 1;
            }
            // residual has stagnated at the rounding level
            if since_best >= 10 || dlam > params.tol {
                return Ok(EigenPair { sign, lam, phi: u, residual: res, iters: it });
            }
        }
    }
    Err(Error::Eigen(format!(
        "no convergence after {} iterations (last estimate {lam:.12e})",
        params.max_iters
    )))
}

fn normalize(u: &GridFunction) -> GridFunction {
    u.scale(1.0 / u.sup_norm())
}

fn check_sign(op: &DiscreteOperator, u: &GridFunction, s: f64, it: usize) -> Result<()> {
    let bad = u.values().iter().enumerate().find(|&(k, &v)| op.mask().is_none_or(|m| m.contains(k)) && !(s * v > 0.0));
    match bad {
        Some((k, v)) => Err(Error::Eigen(format!(
            "iterate lost its sign at node {k} (value {v:.3e}, iteration {it}); the shift is inadmissible"
        ))),
        None => Ok(()),
    }
}

/// `|F[phi] + lambda phi|_inf`
pub fn eigen_residual(op: &DiscreteOperator, phi: &GridFunction, lam: f64) -> Result<f64> {
    Ok(op.with_shift(op.shift() + lam).apply(phi)?.sup_norm())
}

/// Probe right-hand side used by the solvability test.
fn probe(op: &DiscreteOperator) -> GridFunction {
    op.restrict(&GridFunction::constant(op.grid(), 1.0))
}

/// Whether `lambda` lies below the principal eigenvalue of the given sign,
/// decided by solvability: for `+`, `(F + lambda)[u] = -probe` must have a
/// positive solution; for `-`, `(F + lambda)[u] = probe` a negative one.
pub fn below_eigenvalue(op: &DiscreteOperator, sign: Sign, lam: f64) -> Result<bool> {
    let s = sign.factor();
    let shifted = op.with_shift(op.shift() + lam);
    let p = probe(op);
    let f = p.scale(-s);
    // below the eigenvalue Howard converges in a handful of steps; above it, it cycles
    let params = SolveParams { tol: None, max_policy_iters: 60, blowup_norm: 1e12 };
    let starts = [None, Some(p.scale(s)), Some(p.scale(10.0 * s))];
    for u0 in starts.iter() {
        let (u, rep) = solve(&shifted, &f, &params, u0.as_ref())?;
        if rep.converged() && check_sign(op, &u, s, 0).is_ok() {
            return Ok(true);
        }
        if sign == Sign::Plus {
            // below lambda_1^+ the solution is unique; one start suffices
            break;
        }
    }
    Ok(false)
}

/// Bisection on solvability; returns the midpoint of the final bracket.
pub fn eigen_bisect_crosscheck(op: &DiscreteOperator, sign: Sign, bracket: [f64; 2], n_steps: usize) -> Result<f64> {
    let [mut lo, mut hi] = bracket;
    if !(lo < hi) {
        return Err(Error::Bracket(format!("empty bracket [{lo}, {hi}]")));
    }
    let lo_below = below_eigenvalue(op, sign, lo)?;
    let hi_below = below_eigenvalue(op, sign, hi)?;
    if !lo_below || hi_below {
        return Err(Error::Bracket(format!(
            "[{lo}, {hi}] does not straddle lambda_1^{} (below at ends: {lo_below}, {hi_below})",
            sign.symbol()
        )));
    }
    for _ in 0..n_steps {
        let mid = 0.5 * (lo + hi);
        if below_eigenvalue(op, sign, mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `(lambda_1^+` on the full grid, `lambda_1^+` on `mask)`. A proper mask must
/// strictly raise the eigenvalue.
pub fn subdomain_gap(op: &DiscreteOperator, mask: &SubdomainMask, params: &EigenParams) -> Result<(f64, f64)> {
    let full = principal_eigen(op, Sign::Plus, params)?;
    let sub = principal_eigen(&op.with_mask(mask)?, Sign::Plus, params)?;
    if !mask.is_full() && !(sub.lam > full.lam) {
        return Err(Error::Eigen(format!(
            "subdomain eigenvalue {:.12e} does not exceed the full-domain value {:.12e}",
            sub.lam, full.lam
        )));
    }
    Ok((full.lam, sub.lam))
}

/// Largest sup-distance between eigenfunctions reached from `starts` random
/// starts of the given sign.
pub fn simplicity_probe(op: &DiscreteOperator, sign: Sign, params: &EigenParams, starts: usize, seed: u64) -> Result<f64> {
    let reference = principal_eigen(op, sign, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..starts {
        let vals = (0..op.grid().len()).map(|_| sign.factor() * rng.gen_range(0.1..1.0)).collect();
        let start = op.restrict(&GridFunction::from_values(op.grid(), vals)?);
        let p = principal_eigen_from(op, sign, params, &start)?;
        worst = worst.max((&p.phi - &reference.phi).sup_norm());
    }
    Ok(worst)
}

/// Smallest `|phi| / h` over nodes adjacent to the boundary across exactly
/// one axis: a discrete lower bound on the normal derivative along edge
/// interiors. Corner-adjacent nodes are skipped, since `phi` vanishes to
/// second order there, unless the grid has no edge-interior nodes at all.
pub fn hopf_constant(op: &DiscreteOperator, pair: &EigenPair) -> f64 {
    let g = op.grid();
    let (mut m, mut m_any) = (f64::INFINITY, f64::INFINITY);
    for k in 0..g.len() {
        if op.mask().is_some_and(|mask| !mask.contains(k)) {
            continue;
        }
        let mut axes = Vec::new();
        for axis in 0..g.dim() {
            let touches = [-1, 1].iter().any(|&dir| match g.neighbor(k, axis, dir) {
                None => true,
                Some(j) => op.mask().is_some_and(|mask| !mask.contains(j)),
            });
            if touches {
                axes.push(axis);
            }
        }
        let v = pair.phi.values()[k].abs();
        if let [axis] = axes[..] {
            m = m.min(v / g.h()[axis]);
        }
        if let Some(&axis) = axes.first() {
            m_any = m_any.min(v / g.h()[axis]);
        }
    }
    if m.is_finite() { m } else { m_any }
}

/// Both eigenpairs coincide up to sign, as for a linear operator.
pub fn is_degenerate(plus: &EigenPair, minus: &EigenPair, tol: f64) -> bool {
    (plus.lam - minus.lam).abs() <= tol * (1.0 + plus.lam.abs()) && (&plus.phi + &minus.phi).sup_norm() <= tol.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::operator::ControlFamily;
    use std::f64::consts::PI;

    fn mu1(n: usize) -> f64 {
        let h = 1.0 / (n + 1) as f64;
        2.0 / (h * h) * (1.0 - (PI * h).cos())
    }

    fn op(fam: ControlFamily, n: usize) -> DiscreteOperator {
        DiscreteOperator::new(fam, Grid::interval(0.0, 1.0, n).unwrap(), 0.0).unwrap()
    }

    #[test]
    fn laplacian_eigenpair() {
        let o = op(ControlFamily::laplacian(1), 99);
        let p = principal_eigen(&o, Sign::Plus, &EigenParams::default()).unwrap();
        assert!((p.lam - mu1(99)).abs() < 1e-9);
        assert!(p.residual <= 1e-9);
        assert_eq!(p.phi.sup_norm(), 1.0);
        let m = principal_eigen(&o, Sign::Minus, &EigenParams::default()).unwrap();
        assert!(is_degenerate(&p, &m, 1e-9));
    }

    #[test]
    fn fucik_eigenvalues() {
        let o = op(ControlFamily::fucik(1, 5.0, 0.0).unwrap(), 63);
        let prm = EigenParams::default();
        let p = principal_eigen(&o, Sign::Plus, &prm).unwrap();
        let m = principal_eigen(&o, Sign::Minus, &prm).unwrap();
        assert!((p.lam - (mu1(63) - 5.0)).abs() < 1e-9);
        assert!((m.lam - mu1(63)).abs() < 1e-9);
        assert!(m.phi.max() < 0.0);
    }

    #[test]
    fn bisection_matches() {
        let o = op(ControlFamily::fucik(1, 5.0, 0.0).unwrap(), 31);
        let b = eigen_bisect_crosscheck(&o, Sign::Minus, [5.0, 15.0], 40).unwrap();
        assert!((b - mu1(31)).abs() < 1e-8, "{b}");
        let b = eigen_bisect_crosscheck(&o, Sign::Plus, [0.0, 10.0], 40).unwrap();
        assert!((b - (mu1(31) - 5.0)).abs() < 1e-8, "{b}");
        assert!(matches!(eigen_bisect_crosscheck(&o, Sign::Plus, [6.0, 9.0], 5), Err(Error::Bracket(_))));
    }

    #[test]
    fn half_interval_gap() {
        let o = op(ControlFamily::laplacian(1), 63);
        let mask = SubdomainMask::lower_half(o.grid()).unwrap();
        let (full, sub) = subdomain_gap(&o, &mask, &EigenParams::default()).unwrap();
        // 31 nodes of (0, 1/2) with the same spacing
        let h = 1.0 / 64.0;
        let expected = 2.0 / (h * h) * (1.0 - (PI * h / 0.5).cos());
        assert!((sub - expected).abs() < 1e-8, "{sub} {expected}");
        assert!((full - mu1(63)).abs() < 1e-9);
        let (a, b) = subdomain_gap(&o, &SubdomainMask::full(o.grid()), &EigenParams::default()).unwrap();
        assert_eq!(a, b);
    }
}
