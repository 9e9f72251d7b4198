//! Pseudo-arclength continuation of `F[u] + lambda u = t phi + h` in `(u, t)`.
//!
//! The corrector is a semismooth Newton iteration on the bordered system
//!
//! ```text
//! [ J_u        -phi ] [du]   [-R]
//! [ w tau_u^T  tau_t] [dt] = [-N]
//! ```
//!
//! solved by block elimination with the banded LU of `J_u`. If `J_u` is
//! singular (exactly at a smooth fold) the full bordered matrix is factorized
//! densely instead. Arclength is measured in `sqrt(|du|_{L2}^2 + dt^2)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::operator::DiscreteOperator;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArclengthParams {
    pub ds0: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_steps: usize,
    pub max_newton: usize,
    /// Steps taken after the first reversal of the t-direction.
    pub steps_after_turn: usize,
}

impl ArclengthParams {
    pub fn for_range(width: f64, samples: usize) -> Self {
        let ds0 = width / samples.max(2) as f64;
        ArclengthParams { ds0, ds_min: 1e-6, ds_max: 4.0 * ds0, max_steps: 2000, max_newton: 12, steps_after_turn: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct ArcPoint {
    pub u: GridFunction,
    pub t: f64,
    pub residual: f64,
    /// t-component of the unit tangent on arrival.
    pub tangent_t: f64,
}

#[derive(Debug, Clone)]
pub struct ArcPath {
    pub points: Vec<ArcPoint>,
    /// Index of the first point after which the t-direction reversed.
    pub turn: Option<usize>,
    /// The step size fell below `ds_min` before a stop condition was met.
    pub stalled: bool,
}

impl ArcPath {
    pub fn min_t(&self) -> f64 {
        self.points.iter().map(|p| p.t).fold(f64::INFINITY, f64::min)
    }
}

struct Problem<'a> {
    op: &'a DiscreteOperator,
    phi: &'a GridFunction,
    h: &'a GridFunction,
    w: f64,
}

impl Problem<'_> {
    fn rhs(&self, t: f64) -> GridFunction {
        self.h.axpy(t, self.phi)
    }

    fn dot(&self, a: &GridFunction, b: &GridFunction) -> f64 {
        self.w * a.dot(b)
    }

    fn tol(&self, u: &GridFunction, t: f64) -> f64 {
        let f = self.rhs(t).sup_norm();
        (1e-10 * f).max(1e-13).max(16.0 * f64::EPSILON * self.op.scale() * u.sup_norm())
    }

    /// Returns `(a, b)` with `J a = -r` and `J b = phi`, or `None` when `J` is singular.
    fn block_solve(&self, u: &GridFunction, r: &GridFunction) -> Result<Option<(GridFunction, GridFunction)>> {
        let lin = self.op.linearize_at(u)?;
        let Ok(lu) = lin.stencil.to_band(-self.op.scale().max(1.0)).factorize() else {
            return Ok(None);
        };
        let g = self.op.grid();
        let a = GridFunction::from_values(g, lu.solve(r.scale(-1.0).values()));
        let b = GridFunction::from_values(g, lu.solve(self.phi.values()));
        match (a, b) {
            (Ok(a), Ok(b)) => Ok(Some((a, b))),
            _ => Ok(None),
        }
    }

    fn dense_solve(
        &self,
        u: &GridFunction,
        r: &GridFunction,
        n_res: f64,
        tau_u: &GridFunction,
        tau_t: f64,
    ) -> Result<Option<(GridFunction, f64)>> {
        let lin = self.op.linearize_at(u)?;
        let band = lin.stencil.to_band(-self.op.scale().max(1.0));
        let n = band.n();
        let mut m = DMatrix::<f64>::zeros(n + 1, n + 1);
        let bw = if self.op.grid().dim() == 2 { self.op.grid().n()[0] } else { 1 };
        for i in 0..n {
            for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                m[(i, j)] = band.get(i, j);
            }
            m[(i, n)] = -self.phi.values()[i];
            m[(n, i)] = self.w * tau_u.values()[i];
        }
        m[(n, n)] = tau_t;
        let mut rhs = DVector::<f64>::zeros(n + 1);
        for i in 0..n {
            rhs[i] = -r.values()[i];
        }
        rhs[n] = -n_res;
        let Some(x) = m.lu().solve(&rhs) else {
            return Ok(None);
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        let du = GridFunction::from_values(self.op.grid(), x.as_slice()[..n].to_vec())?;
        Ok(Some((du, x[n])))
    }

    /// Newton corrector on the hyperplane through the predictor orthogonal to the tangent.
    fn correct(
        &self,
        u_p: &GridFunction,
        t_p: f64,
        tau_u: &GridFunction,
        tau_t: f64,
        max_newton: usize,
    ) -> Result<Option<(GridFunction, f64, f64)>> {
        let mut u = u_p.clone();
        let mut t = t_p;
        for _ in 0..max_newton {
            let r = self.op.residual(&u, &self.rhs(t))?;
            let res = r.sup_norm();
            if !res.is_finite() {
                return Ok(None);
            }
            let n_res = self.dot(tau_u, &(&u - u_p)) + tau_t * (t - t_p);
            if res <= self.tol(&u, t) && n_res.abs() <= 1e-12 * (1.0 + t.abs()) {
                return Ok(Some((u, t, res)));
            }
            let step = match self.block_solve(&u, &r)? {
                Some((a, b)) => {
                    let denom = tau_t + self.dot(tau_u, &b);
                    if denom.abs() > 1e-12 {
                        let dt = -(n_res + self.dot(tau_u, &a)) / denom;
                        Some((a.axpy(dt, &b), dt))
                    } else {
                        None
                    }
                }
                None => None,
            };
            let (du, dt) = match step {
                Some(s) => s,
                None => match self.dense_solve(&u, &r, n_res, tau_u, tau_t)? {
                    Some(s) => s,
                    None => return Ok(None),
                },
            };
            u = u.axpy(1.0, &du);
            t += dt;
        }
        let res = self.op.residual(&u, &self.rhs(t))?.sup_norm();
        if res <= self.tol(&u, t) {
            Ok(Some((u, t, res)))
        } else {
            Ok(None)
        }
    }
}

/// Continues from a solution `(u0, t0)` in the direction where `t` has the
/// sign of `direction`, until the t-direction has reversed and
/// `steps_after_turn` more steps were taken, `stop` returns true, or the step
/// size stalls.
#[allow(clippy::too_many_arguments)]
pub fn continue_branch(
    op: &DiscreteOperator,
    phi: &GridFunction,
    h: &GridFunction,
    u0: &GridFunction,
    t0: f64,
    direction: f64,
    params: &ArclengthParams,
    mut stop: impl FnMut(&ArcPoint) -> bool,
) -> Result<ArcPath> {
    let prob = Problem { op, phi, h, w: op.grid().cell_volume() };
    let r0 = op.residual(u0, &prob.rhs(t0))?;
    if r0.sup_norm() > 1e3 * prob.tol(u0, t0) {
        return Err(Error::FoldTrace(format!(
            "continuation start is not a solution (residual {:.3e})",
            r0.sup_norm()
        )));
    }
    // du/dt from J b = phi
    let (tau_u, tau_t) = match prob.block_solve(u0, &GridFunction::zeros(op.grid()))? {
        Some((_, b)) => {
            let nrm = (prob.dot(&b, &b) + 1.0).sqrt();
            let s = direction.signum() / nrm;
            (b.scale(s), s)
        }
        None => return Err(Error::FoldTrace("singular Jacobian at the continuation start".into())),
    };
    let mut tau_u = tau_u;
    let mut tau_t = tau_t;
    let mut points =
        vec![ArcPoint { u: u0.clone(), t: t0, residual: r0.sup_norm(), tangent_t: tau_t }];
    let mut ds = params.ds0;
    let mut turn = None;
    let mut stalled = false;
    for _ in 0..params.max_steps {
        let last = points.last().expect("nonempty");
        let u_p = last.u.axpy(ds, &tau_u);
        let t_p = last.t + ds * tau_t;
        match prob.correct(&u_p, t_p, &tau_u, tau_t, params.max_newton)? {
            Some((u, t, res)) => {
                let du = &u - &last.u;
                let dt = t - last.t;
                let len = (prob.dot(&du, &du) + dt * dt).sqrt();
                if !(len > 0.0) {
                    stalled = true;
                    break;
                }
                let new_tau_t = dt / len;
                if turn.is_none() && new_tau_t * tau_t < 0.0 {
                    turn = Some(points.len());
                }
                tau_u = du.scale(1.0 / len);
                tau_t = new_tau_t;
                points.push(ArcPoint { u, t, residual: res, tangent_t: tau_t });
                ds = (ds * 1.5).min(params.ds_max);
                if stop(points.last().expect("just pushed")) {
                    break;
                }
                if let Some(k) = turn {
                    if points.len() - k >= params.steps_after_turn {
                        break;
                    }
                }
            }
            None => {
                ds *= 0.5;
                if ds < params.ds_min {
                    stalled = true;
                    break;
                }
            }
        }
    }
    Ok(ArcPath { points, turn, stalled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::operator::ControlFamily;
    use std::f64::consts::PI;

    #[test]
    fn follows_linear_branch() {
        let g = Grid::interval(0.0, 1.0, 63).unwrap();
        let op = DiscreteOperator::new(ControlFamily::laplacian(1), g, 0.0).unwrap();
        let phi = GridFunction::sample(&g, |x, _| (PI * x).sin());
        let h = GridFunction::zeros(&g);
        let mu = 2.0 * 64.0f64.powi(2) * (1.0 - (PI / 64.0).cos());
        let u0 = phi.scale(-2.0 / mu);
        let params = ArclengthParams { max_steps: 10, ..ArclengthParams::for_range(2.0, 10) };
        let path = continue_branch(&op, &phi, &h, &u0, 2.0, -1.0, &params, |p| p.t < 0.0).unwrap();
        assert!(path.turn.is_none());
        for p in &path.points {
            assert!((&p.u + &phi.scale(p.t / mu)).sup_norm() < 1e-9);
        }
        assert!(path.points.windows(2).all(|w| w[1].t < w[0].t));
    }

    #[test]
    fn rejects_non_solution_start() {
        let g = Grid::interval(0.0, 1.0, 15).unwrap();
        let op = DiscreteOperator::new(ControlFamily::laplacian(1), g, 0.0).unwrap();
        let phi = GridFunction::sample(&g, |x, _| (PI * x).sin());
        let h = GridFunction::zeros(&g);
        let r = continue_branch(&op, &phi, &h, &phi, 1.0, -1.0, &ArclengthParams::for_range(1.0, 4), |_| false);
        assert!(matches!(r, Err(Error::FoldTrace(_))));
    }
}
