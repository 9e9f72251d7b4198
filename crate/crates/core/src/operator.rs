//! Monotone finite-difference discretization of sup-type HJB operators
//!
//! `F[u] = sup_a { tr(A^a D^2 u) + b^a . Du + c^a u } + shift * u`
//!
//! Second derivatives use the three-point stencil per axis, first derivatives
//! are upwinded according to the sign of each drift component, so every
//! per-control stencil has nonnegative off-diagonal weights.
//!
//! Every family is compiled to a finite list of constant-coefficient
//! controls. Pucci and Fucik families additionally have closed-form
//! evaluations that agree with the generic supremum:
//!
//! * `PucciPlus` is `sum_i Lambda (D_ii u)^+ - lambda (D_ii u)^-`. A five-point
//!   stencil sees only diagonal Hessians, so in 2D this is the restriction of
//!   the extremal operator to diagonal matrices (exact in 1D).
//! * `PucciMinus` is its mirror `-PucciPlus(-u)`, an infimum of controls.
//! * `Fucik(b+, b-)` is `Lap u + b+ u^+ + b- u^-` with `u^- = max(-u, 0)`; it is
//!   the supremum of `Lap + b+` and `Lap - b-`, hence convex iff `b+ + b- >= 0`.
//!
//! Ties in the argmax go to the lowest control index. Control order is fixed
//! so that Pucci ties select the `Lambda` coefficient and Fucik ties select
//! the `u <= 0` branch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, SubdomainMask};

/// Constant coefficients of one linear control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlCoeffs {
    /// Diffusion matrix, row-major `dim x dim`.
    pub a: Vec<f64>,
    /// Drift vector.
    pub b: Vec<f64>,
    /// Zeroth-order coefficient.
    pub c: f64,
}

impl ControlCoeffs {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: f64) -> Self {
        ControlCoeffs { a, b, c }
    }

    /// `scale * Lap + c` in `dim` dimensions.
    pub fn isotropic(dim: usize, scale: f64, c: f64) -> Self {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = scale;
        }
        ControlCoeffs { a, b: vec![0.0; dim], c }
    }

    fn dim(&self) -> usize {
        self.b.len()
    }

    fn diag(&self, i: usize) -> f64 {
        self.a[i * self.dim() + i]
    }

    fn eig_range(&self) -> (f64, f64) {
        match self.dim() {
            1 => (self.a[0], self.a[0]),
            _ => {
                let (p, q, r) = (self.a[0], self.a[1], self.a[3]);
                let m = 0.5 * (p + r);
                let d = (0.25 * (p - r) * (p - r) + q * q).sqrt();
                (m - d, m + d)
            }
        }
    }

    fn drift_norm(&self) -> f64 {
        self.b.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Ellipticity envelope `(lambda, Lambda, gamma, delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub lambda: f64,
    pub big_lambda: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Envelope {
    pub fn new(lambda: f64, big_lambda: f64, gamma: f64, delta: f64) -> Self {
        Envelope { lambda, big_lambda, gamma, delta }
    }

    /// Smallest envelope containing every control.
    pub fn tight(controls: &[ControlCoeffs]) -> Self {
        let mut e = Envelope { lambda: f64::INFINITY, big_lambda: 0.0, gamma: 0.0, delta: 0.0 };
        for c in controls {
            let (lo, hi) = c.eig_range();
            e.lambda = e.lambda.min(lo);
            e.big_lambda = e.big_lambda.max(hi);
            e.gamma = e.gamma.max(c.drift_norm());
            e.delta = e.delta.max(c.c.abs());
        }
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    FiniteSup,
    PucciPlus,
    PucciMinus,
    Fucik { b_plus: f64, b_minus: f64 },
    Linear,
}

/// Whether the operator is a supremum (convex) or infimum (concave) of its controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Sup,
    Inf,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Eval {
    Generic,
    Pucci { lambda: f64, big_lambda: f64 },
    Fucik { b_plus: f64, b_minus: f64 },
}

/// Finite set of linear controls with its envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlFamily {
    kind: FamilyKind,
    controls: Vec<ControlCoeffs>,
    envelope: Envelope,
    orientation: Orientation,
    eval: Eval,
}

impl ControlFamily {
    /// Supremum over `controls`; every control must lie inside `envelope`.
    pub fn finite_sup(controls: Vec<ControlCoeffs>, envelope: Envelope) -> Result<Self> {
        Self::checked(FamilyKind::FiniteSup, controls, envelope, Orientation::Sup, Eval::Generic)
    }

    /// Single linear operator with the tight envelope.
    pub fn linear(control: ControlCoeffs) -> Result<Self> {
        let env = Envelope::tight(std::slice::from_ref(&control));
        Self::checked(FamilyKind::Linear, vec![control], env, Orientation::Sup, Eval::Generic)
    }

    pub fn laplacian(dim: usize) -> Self {
        Self::linear(ControlCoeffs::isotropic(dim, 1.0, 0.0)).expect("laplacian is admissible")
    }

    pub fn pucci_plus(dim: usize, lambda: f64, big_lambda: f64) -> Result<Self> {
        Self::pucci(FamilyKind::PucciPlus, dim, lambda, big_lambda)
    }

    pub fn pucci_minus(dim: usize, lambda: f64, big_lambda: f64) -> Result<Self> {
        Self::pucci(FamilyKind::PucciMinus, dim, lambda, big_lambda)
    }

    fn pucci(kind: FamilyKind, dim: usize, lambda: f64, big_lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && big_lambda >= lambda) {
            return Err(Error::Config(format!("Pucci needs 0 < lambda <= Lambda, got ({lambda}, {big_lambda})")));
        }
        check_dim(dim)?;
        // bit i of the control index set => lambda on axis i, clear => Lambda
        let controls = (0..1usize << dim)
            .map(|bits| {
                let mut a = vec![0.0; dim * dim];
                for i in 0..dim {
                    a[i * dim + i] = if bits >> i & 1 == 1 { lambda } else { big_lambda };
                }
                ControlCoeffs { a, b: vec![0.0; dim], c: 0.0 }
            })
            .collect();
        let orientation = if kind == FamilyKind::PucciMinus { Orientation::Inf } else { Orientation::Sup };
        Self::checked(
            kind,
            controls,
            Envelope::new(lambda, big_lambda, 0.0, 0.0),
            orientation,
            Eval::Pucci { lambda, big_lambda },
        )
    }

    /// `Lap u + b_plus u^+ + b_minus u^-` with `u^- = max(-u, 0)`.
    pub fn fucik(dim: usize, b_plus: f64, b_minus: f64) -> Result<Self> {
        check_dim(dim)?;
        if !(b_plus.is_finite() && b_minus.is_finite()) || b_plus + b_minus < 0.0 {
            return Err(Error::Config(format!(
                "Fucik weights must satisfy b+ + b- >= 0 for convexity, got ({b_plus}, {b_minus})"
            )));
        }
        let controls = vec![ControlCoeffs::isotropic(dim, 1.0, -b_minus), ControlCoeffs::isotropic(dim, 1.0, b_plus)];
        let env = Envelope::new(1.0, 1.0, 0.0, b_plus.abs().max(b_minus.abs()));
        Self::checked(FamilyKind::Fucik { b_plus, b_minus }, controls, env, Orientation::Sup, Eval::Fucik { b_plus, b_minus })
    }

    fn checked(
        kind: FamilyKind,
        controls: Vec<ControlCoeffs>,
        envelope: Envelope,
        orientation: Orientation,
        eval: Eval,
    ) -> Result<Self> {
        if controls.is_empty() {
            return Err(Error::Config("control family is empty".into()));
        }
        let dim = controls[0].dim();
        check_dim(dim)?;
        if !(envelope.lambda > 0.0 && envelope.big_lambda >= envelope.lambda && envelope.gamma >= 0.0 && envelope.delta >= 0.0)
        {
            return Err(Error::Config(format!("invalid envelope {envelope:?}")));
        }
        let tol = 1e-12 * (1.0 + envelope.big_lambda);
        for (j, c) in controls.iter().enumerate() {
            if c.dim() != dim || c.a.len() != dim * dim {
                return Err(Error::Config(format!("control {j} has inconsistent dimensions")));
            }
            if c.a.iter().chain(&c.b).chain(std::iter::once(&c.c)).any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("control {j} has non-finite coefficients")));
            }
            if dim == 2 {
                if (c.a[1] - c.a[2]).abs() > tol {
                    return Err(Error::Config(format!("control {j}: diffusion matrix is not symmetric")));
                }
                if c.a[1] != 0.0 {
                    return Err(Error::Config(format!(
                        "control {j}: mixed second derivatives are not representable on the five-point stencil"
                    )));
                }
            }
            let (lo, hi) = c.eig_range();
            if lo < envelope.lambda - tol || hi > envelope.big_lambda + tol {
                return Err(Error::Config(format!(
                    "control {j}: spectrum [{lo}, {hi}] outside [{}, {}]",
                    envelope.lambda, envelope.big_lambda
                )));
            }
            if c.drift_norm() > envelope.gamma + tol {
                return Err(Error::Config(format!("control {j}: |b| = {} exceeds gamma = {}", c.drift_norm(), envelope.gamma)));
            }
            if c.c.abs() > envelope.delta + tol {
                return Err(Error::Config(format!("control {j}: |c| = {} exceeds delta = {}", c.c.abs(), envelope.delta)));
            }
        }
        Ok(ControlFamily { kind, controls, envelope, orientation, eval })
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn controls(&self) -> &[ControlCoeffs] {
        &self.controls
    }

    pub fn envelope(&self) -> Envelope {
        self.envelope
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn dim(&self) -> usize {
        self.controls[0].dim()
    }

    /// Largest zeroth-order coefficient over the controls.
    pub fn max_c(&self) -> f64 {
        self.controls.iter().map(|c| c.c).fold(f64::NEG_INFINITY, f64::max)
    }

    /// The mirrored family `G(u) = -F(-u)`: same controls, opposite orientation.
    pub fn mirrored(&self) -> Self {
        let mut m = self.clone();
        m.orientation = match self.orientation {
            Orientation::Sup => Orientation::Inf,
            Orientation::Inf => Orientation::Sup,
        };
        m.kind = match self.kind {
            FamilyKind::PucciPlus => FamilyKind::PucciMinus,
            FamilyKind::PucciMinus => FamilyKind::PucciPlus,
            k => k,
        };
        m
    }

    /// True when every control shares one diffusion matrix, drift and `c`,
    /// so the two principal eigenvalues coincide.
    pub fn is_linear(&self) -> bool {
        self.controls.windows(2).all(|w| w[0] == w[1])
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")))
    }
}

/// Stencil slots: centre, then minus/plus neighbour per axis.
pub const SLOTS: usize = 5;

/// One linear five-point operator per node.
#[derive(Debug, Clone)]
pub struct Stencil {
    grid: Grid,
    rows: Vec<[f64; SLOTS]>,
    active: Option<Vec<bool>>,
}

impl Stencil {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn rows(&self) -> &[[f64; SLOTS]] {
        &self.rows
    }

    pub fn is_active(&self, k: usize) -> bool {
        self.active.as_ref().is_none_or(|a| a[k])
    }

    pub fn apply(&self, u: &GridFunction) -> GridFunction {
        let v = u.values();
        let out = (0..self.grid.len())
            .map(|k| {
                if !self.is_active(k) {
                    return 0.0;
                }
                let row = &self.rows[k];
                let mut s = row[0] * v[k];
                for axis in 0..self.grid.dim() {
                    if let Some(j) = self.grid.neighbor(k, axis, -1) {
                        s += row[1 + 2 * axis] * v[j];
                    }
                    if let Some(j) = self.grid.neighbor(k, axis, 1) {
                        s += row[2 + 2 * axis] * v[j];
                    }
                }
                s
            })
            .collect();
        GridFunction::from_raw(&self.grid, out)
    }

    /// Smallest off-diagonal weight that actually couples two active nodes.
    pub fn min_off_diagonal(&self) -> f64 {
        let mut m = f64::INFINITY;
        for k in 0..self.grid.len() {
            if !self.is_active(k) {
                continue;
            }
            for axis in 0..self.grid.dim() {
                for (slot, dir) in [(1 + 2 * axis, -1), (2 + 2 * axis, 1)] {
                    if self.grid.neighbor(k, axis, dir).is_some() {
                        m = m.min(self.rows[k][slot]);
                    }
                }
            }
        }
        m
    }

    /// Banded matrix of the stencil. Inactive (masked) rows become
    /// `diag * u_k` so the corresponding unknowns decouple.
    pub fn to_band(&self, inactive_diag: f64) -> BandMatrix {
        let g = &self.grid;
        let bw = if g.dim() == 2 { g.n()[0] } else { 1 };
        let mut m = BandMatrix::zeros(g.len(), bw, bw);
        for k in 0..g.len() {
            if !self.is_active(k) {
                m.add(k, k, inactive_diag);
                continue;
            }
            let row = &self.rows[k];
            m.add(k, k, row[0]);
            for axis in 0..g.dim() {
                if let Some(j) = g.neighbor(k, axis, -1) {
                    if row[1 + 2 * axis] != 0.0 {
                        m.add(k, j, row[1 + 2 * axis]);
                    }
                }
                if let Some(j) = g.neighbor(k, axis, 1) {
                    if row[2 + 2 * axis] != 0.0 {
                        m.add(k, j, row[2 + 2 * axis]);
                    }
                }
            }
        }
        m
    }
}

/// Active control per node together with its linear stencil.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub stencil: Stencil,
    pub policy: Vec<usize>,
}

/// `F + shift` on a grid, optionally restricted to a subdomain.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    family: ControlFamily,
    grid: Grid,
    shift: f64,
    mask: Option<SubdomainMask>,
    weights: Vec<[f64; SLOTS]>,
}

impl DiscreteOperator {
    /// Checks the monotonicity condition `min_i lambda/h_i^2 >= gamma / (2 min_i h_i)`.
    pub fn new(family: ControlFamily, grid: Grid, shift: f64) -> Result<Self> {
        if family.dim() != grid.dim() {
            return Err(Error::Config(format!(
                "family is {}-dimensional but grid is {}-dimensional",
                family.dim(),
                grid.dim()
            )));
        }
        if !shift.is_finite() {
            return Err(Error::Config("shift must be finite".into()));
        }
        let env = family.envelope();
        let hmin = grid.h().iter().copied().fold(f64::INFINITY, f64::min);
        let diffusion = grid.h().iter().map(|h| env.lambda / (h * h)).fold(f64::INFINITY, f64::min);
        let advection = env.gamma / (2.0 * hmin);
        if diffusion < advection {
            return Err(Error::Admissibility(format!(
                "lambda/h^2 = {diffusion:.4e} is below gamma/(2h) = {advection:.4e}; refine the grid"
            )));
        }
        let weights = family.controls().iter().map(|c| control_weights(c, &grid)).collect();
        Ok(DiscreteOperator { family, grid, shift, mask: None, weights })
    }

    pub fn family(&self) -> &ControlFamily {
        &self.family
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn mask(&self) -> Option<&SubdomainMask> {
        self.mask.as_ref()
    }

    pub fn with_shift(&self, shift: f64) -> Self {
        let mut op = self.clone();
        op.shift = shift;
        op
    }

    /// Restricts the operator to `mask`; a full mask is dropped.
    pub fn with_mask(&self, mask: &SubdomainMask) -> Result<Self> {
        if mask.grid() != &self.grid {
            return Err(Error::Usage("mask grid differs from operator grid".into()));
        }
        let mut op = self.clone();
        op.mask = if mask.is_full() { None } else { Some(mask.clone()) };
        Ok(op)
    }

    /// `G(u) = -F(-u)` with the same shift.
    pub fn mirrored(&self) -> Self {
        let mut op = self.clone();
        op.family = self.family.mirrored();
        op
    }

    #[inline]
    fn active(&self, k: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m.contains(k))
    }

    /// Zeroes `u` on masked-out nodes.
    pub fn restrict(&self, u: &GridFunction) -> GridFunction {
        match &self.mask {
            None => u.clone(),
            Some(m) => crate::grid::restrict_to_mask(u, m).expect("same grid"),
        }
    }

    /// Upper bound on the row sums of `|weights|`, used to scale tolerances.
    pub fn scale(&self) -> f64 {
        let w = self.weights.iter().map(|row| row.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
        w + self.shift.abs()
    }

    fn check_grid(&self, u: &GridFunction) -> Result<()> {
        if u.grid() != &self.grid {
            return Err(Error::Usage("grid function does not live on the operator grid".into()));
        }
        Ok(())
    }

    /// `F_h[u] + shift * u` at every node.
    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.check_grid(u)?;
        Ok(self.evaluate(u.values(), false).0)
    }

    /// `apply(u) - f`
    pub fn residual(&self, u: &GridFunction, f: &GridFunction) -> Result<GridFunction> {
        let fu = self.apply(u)?;
        f.same_grid(u)?;
        let r = fu.zip_map(f, |a, b| a - b);
        Ok(self.restrict(&r))
    }

    /// Stencil of the maximizing control at each node; `L u = apply(u)`.
    pub fn linearize_at(&self, u: &GridFunction) -> Result<Linearization> {
        self.check_grid(u)?;
        let (_, policy) = self.evaluate(u.values(), true);
        let policy = policy.expect("policy requested");
        Ok(Linearization { stencil: self.stencil_for(&policy), policy })
    }

    /// Stencil of a given per-node control choice.
    pub fn stencil_for(&self, policy: &[usize]) -> Stencil {
        let g = &self.grid;
        let rows = (0..g.len())
            .map(|k| {
                let mut row = self.weights[policy[k]];
                row[0] += self.shift;
                if let Some(m) = &self.mask {
                    for axis in 0..g.dim() {
                        for (slot, dir) in [(1 + 2 * axis, -1), (2 + 2 * axis, 1)] {
                            if let Some(j) = g.neighbor(k, axis, dir) {
                                if !m.contains(j) {
                                    row[slot] = 0.0;
                                }
                            }
                        }
                    }
                }
                row
            })
            .collect();
        Stencil { grid: *g, rows, active: self.mask.as_ref().map(|m| m.included().to_vec()) }
    }

    fn evaluate(&self, u: &[f64], want_policy: bool) -> (GridFunction, Option<Vec<usize>>) {
        let n = self.grid.len();
        let flip = self.family.orientation == Orientation::Inf;
        let sgn = if flip { -1.0 } else { 1.0 };
        let mut out = vec![0.0; n];
        let mut policy = want_policy.then(|| vec![0usize; n]);
        let get = |j: Option<usize>| -> f64 {
            match j {
                Some(j) if self.active(j) => sgn * u[j],
                _ => 0.0,
            }
        };
        for k in 0..n {
            if !self.active(k) {
                continue;
            }
            let uk = sgn * u[k];
            let (val, ctrl) = match self.family.eval {
                Eval::Generic => {
                    let nb: Vec<[f64; 2]> = (0..self.grid.dim())
                        .map(|axis| [get(self.grid.neighbor(k, axis, -1)), get(self.grid.neighbor(k, axis, 1))])
                        .collect();
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0;
                    for (j, w) in self.weights.iter().enumerate() {
                        let mut s = w[0] * uk;
                        for (axis, [m, p]) in nb.iter().enumerate() {
                            s += w[1 + 2 * axis] * m + w[2 + 2 * axis] * p;
                        }
                        if s > best {
                            best = s;
                            arg = j;
                        }
                    }
                    (best, arg)
                }
                Eval::Pucci { lambda, big_lambda } => {
                    let mut s = 0.0;
                    let mut bits = 0;
                    for axis in 0..self.grid.dim() {
                        let h = self.grid.h()[axis];
                        let d2 = (get(self.grid.neighbor(k, axis, -1)) - 2.0 * uk + get(self.grid.neighbor(k, axis, 1)))
                            / (h * h);
                        if d2 >= 0.0 {
                            s += big_lambda * d2;
                        } else {
                            s += lambda * d2;
                            bits |= 1 << axis;
                        }
                    }
                    (s, bits)
                }
                Eval::Fucik { b_plus, b_minus } => {
                    let mut lap = 0.0;
                    for axis in 0..self.grid.dim() {
                        let h = self.grid.h()[axis];
                        lap += (get(self.grid.neighbor(k, axis, -1)) - 2.0 * uk + get(self.grid.neighbor(k, axis, 1)))
                            / (h * h);
                    }
                    if uk > 0.0 {
                        (lap + b_plus * uk, 1)
                    } else {
                        (lap - b_minus * uk, 0)
                    }
                }
            };
            out[k] = sgn * val + self.shift * u[k];
            if let Some(p) = policy.as_mut() {
                p[k] = ctrl;
            }
        }
        (GridFunction::from_raw(&self.grid, out), policy)
    }

    /// Discrete extremal Pucci operators of the envelope, applied to `w`.
    pub fn pucci_envelope(&self, w: &GridFunction) -> (GridFunction, GridFunction) {
        let env = self.family.envelope();
        let n = self.grid.len();
        let v = w.values();
        let mut plus = vec![0.0; n];
        let mut minus = vec![0.0; n];
        for k in 0..n {
            if !self.active(k) {
                continue;
            }
            for axis in 0..self.grid.dim() {
                let h = self.grid.h()[axis];
                let d2 = (self.masked(v, self.grid.neighbor(k, axis, -1)) - 2.0 * v[k]
                    + self.masked(v, self.grid.neighbor(k, axis, 1)))
                    / (h * h);
                plus[k] += if d2 >= 0.0 { env.big_lambda * d2 } else { env.lambda * d2 };
                minus[k] += if d2 >= 0.0 { env.lambda * d2 } else { env.big_lambda * d2 };
            }
        }
        (GridFunction::from_raw(&self.grid, plus), GridFunction::from_raw(&self.grid, minus))
    }

    /// `sqrt(sum_i max(|D+_i w|, |D-_i w|)^2)`, the gradient bound matching upwinding.
    pub fn gradient_bound(&self, w: &GridFunction) -> GridFunction {
        let v = w.values();
        let out = (0..self.grid.len())
            .map(|k| {
                if !self.active(k) {
                    return 0.0;
                }
                let mut s = 0.0;
                for axis in 0..self.grid.dim() {
                    let h = self.grid.h()[axis];
                    let dp = (self.masked(v, self.grid.neighbor(k, axis, 1)) - v[k]) / h;
                    let dm = (v[k] - self.masked(v, self.grid.neighbor(k, axis, -1))) / h;
                    let d = dp.abs().max(dm.abs());
                    s += d * d;
                }
                s.sqrt()
            })
            .collect();
        GridFunction::from_raw(&self.grid, out)
    }

    fn masked(&self, v: &[f64], j: Option<usize>) -> f64 {
        match j {
            Some(j) if self.active(j) => v[j],
            _ => 0.0,
        }
    }
}

fn control_weights(c: &ControlCoeffs, grid: &Grid) -> [f64; SLOTS] {
    let mut w = [0.0; SLOTS];
    w[0] = c.c;
    for axis in 0..grid.dim() {
        let h = grid.h()[axis];
        let a = c.diag(axis) / (h * h);
        let b = c.b[axis];
        w[0] -= 2.0 * a + b.abs() / h;
        w[1 + 2 * axis] = a + if b < 0.0 { -b / h } else { 0.0 };
        w[2 + 2 * axis] = a + if b > 0.0 { b / h } else { 0.0 };
    }
    w
}

/// Largest relative violation of each structural property over random trials.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub trials: usize,
    pub orientation: Option<Orientation>,
    /// `F(t u) = t F(u)`, `t >= 0`.
    pub homogeneity: f64,
    /// Lower half of the difference sandwich.
    pub h3_lower: f64,
    /// Upper half of the difference sandwich.
    pub h3_upper: f64,
    /// Midpoint convexity (concavity for infimum families).
    pub convexity: f64,
    pub h1_lower: f64,
    pub h1_upper: f64,
    /// `PucciPlus + gamma |Du| + delta |u| >= F(u)`.
    pub pucci_dominance: f64,
    /// Smallest off-diagonal weight over all linearizations seen.
    pub min_off_diagonal: f64,
}

impl PropertyReport {
    /// Names of properties whose violation exceeds `tol`.
    pub fn failures(&self, tol: f64) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (name, v) in [
            ("homogeneity", self.homogeneity),
            ("h3_lower", self.h3_lower),
            ("h3_upper", self.h3_upper),
            ("convexity", self.convexity),
            ("h1_lower", self.h1_lower),
            ("h1_upper", self.h1_upper),
            ("pucci_dominance", self.pucci_dominance),
        ] {
            if v > tol {
                out.push(name);
            }
        }
        if self.min_off_diagonal < 0.0 {
            out.push("monotone_stencil");
        }
        out
    }

    pub fn max_violation(&self) -> f64 {
        [
            self.homogeneity,
            self.h3_lower,
            self.h3_upper,
            self.convexity,
            self.h1_lower,
            self.h1_upper,
            self.pucci_dominance,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Random-trial check of homogeneity, the difference sandwich, convexity and
/// the Pucci-envelope bounds. Violations are relative to
/// `scale() * max(|u|, |v|, 1)`.
///
/// Infimum families are checked with the mirrored inequalities, i.e. the
/// properties that `-F(-.)` satisfies as a supremum family.
pub fn check_h0_h3(op: &DiscreteOperator, trials: usize, seed: u64) -> Result<PropertyReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let g = *op.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mirror = op.mirrored();
    let sup = op.family().orientation() == Orientation::Sup;
    let env = op.family().envelope();
    let delta = env.delta + op.shift().abs();
    let pucci_plus = DiscreteOperator::new(
        ControlFamily::pucci_plus(g.dim(), env.lambda, env.big_lambda)?,
        g,
        0.0,
    )?;
    let pucci_plus = match op.mask() {
        Some(m) => pucci_plus.with_mask(m)?,
        None => pucci_plus,
    };
    let mut rep = PropertyReport {
        trials,
        orientation: Some(op.family().orientation()),
        min_off_diagonal: f64::INFINITY,
        ..Default::default()
    };
    let worst = |acc: &mut f64, x: f64| *acc = acc.max(x);
    for _ in 0..trials {
        let u = op.restrict(&random_function(&g, &mut rng));
        let v = op.restrict(&random_function(&g, &mut rng));
        let t: f64 = rng.gen_range(0.0..5.0);
        let k: f64 = rng.gen_range(0.0..1.0);
        let scale = op.scale() * u.sup_norm().max(v.sup_norm()).max(1.0) * t.max(1.0);

        let fu = op.apply(&u)?;
        let fv = op.apply(&v)?;
        let w = &u - &v;
        let fw = op.apply(&w)?;
        let gw = mirror.apply(&w)?;
        let diff = &fu - &fv;

        let ftu = op.apply(&u.scale(t))?;
        worst(&mut rep.homogeneity, (&ftu - &fu.scale(t)).sup_norm() / scale);

        let (lo, hi) = if sup { (&gw, &fw) } else { (&fw, &gw) };
        worst(&mut rep.h3_lower, (lo - &diff).max().max(0.0) / scale);
        worst(&mut rep.h3_upper, (&diff - hi).max().max(0.0) / scale);

        let mix = op.apply(&u.scale(k).axpy(1.0 - k, &v))?;
        let chord = fu.scale(k).axpy(1.0 - k, &fv);
        let gap = if sup { &mix - &chord } else { &chord - &mix };
        worst(&mut rep.convexity, gap.max().max(0.0) / scale);

        let (mplus, mminus) = op.pucci_envelope(&w);
        let slack = op.gradient_bound(&w).scale(env.gamma).axpy(delta, &w.map(f64::abs));
        worst(&mut rep.h1_lower, (&(&mminus - &slack) - &diff).max().max(0.0) / scale);
        worst(&mut rep.h1_upper, (&diff - &(&mplus + &slack)).max().max(0.0) / scale);

        let dom = pucci_plus
            .apply(&u)?
            .axpy(env.gamma, &op.gradient_bound(&u))
            .axpy(delta, &u.map(f64::abs));
        worst(&mut rep.pucci_dominance, (&fu - &dom).max().max(0.0) / scale);

        for x in [&u, &v, &w] {
            rep.min_off_diagonal = rep.min_off_diagonal.min(op.linearize_at(x)?.stencil.min_off_diagonal());
        }
    }
    Ok(rep)
}

fn random_function(g: &Grid, rng: &mut ChaCha8Rng) -> GridFunction {
    let vals = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    GridFunction::from_raw(g, vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn line(n: usize) -> Grid {
        Grid::interval(0.0, 1.0, n).unwrap()
    }

    fn sine(g: &Grid) -> GridFunction {
        GridFunction::sample(g, |x, _| (PI * x).sin())
    }

    #[test]
    fn laplacian_of_sine() {
        let g = line(199);
        let op = DiscreteOperator::new(ControlFamily::laplacian(1), g, 0.0).unwrap();
        let u = sine(&g);
        let lu = op.apply(&u).unwrap();
        let h = g.h()[0];
        let err = (&lu + &u.scale(PI * PI)).sup_norm();
        assert!(err <= PI.powi(4) * h * h / 12.0 * u.sup_norm(), "{err}");
    }

    #[test]
    fn zero_maps_to_zero() {
        let g = line(15);
        for fam in [
            ControlFamily::laplacian(1),
            ControlFamily::pucci_plus(1, 1.0, 2.0).unwrap(),
            ControlFamily::pucci_minus(1, 1.0, 2.0).unwrap(),
            ControlFamily::fucik(1, 5.0, 0.0).unwrap(),
        ] {
            let op = DiscreteOperator::new(fam, g, 3.7).unwrap();
            assert_eq!(op.apply(&GridFunction::zeros(&g)).unwrap().sup_norm(), 0.0);
        }
    }

    #[test]
    fn pucci_on_concave_function() {
        let g = line(31);
        let op = DiscreteOperator::new(ControlFamily::pucci_plus(1, 1.0, 2.0).unwrap(), g, 0.0).unwrap();
        let lap = DiscreteOperator::new(ControlFamily::laplacian(1), g, 0.0).unwrap();
        let u = GridFunction::sample(&g, |x, _| x * (1.0 - x));
        let diff = &op.apply(&u).unwrap() - &lap.apply(&u).unwrap();
        assert!(diff.sup_norm() < 1e-9);
        // convex: Lambda = 2 on every node
        let v = u.scale(-1.0);
        let diff = &op.apply(&v).unwrap() - &lap.apply(&v).unwrap().scale(2.0);
        assert!(diff.sup_norm() < 1e-9);
    }

    #[test]
    fn closed_forms_match_generic_supremum() {
        let g = line(21);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for fam in [ControlFamily::pucci_plus(1, 0.5, 3.0).unwrap(), ControlFamily::fucik(1, 4.0, 1.5).unwrap()] {
            let generic = ControlFamily::finite_sup(fam.controls().to_vec(), fam.envelope()).unwrap();
            let a = DiscreteOperator::new(fam, g, 0.25).unwrap();
            let b = DiscreteOperator::new(generic, g, 0.25).unwrap();
            for _ in 0..20 {
                let u = random_function(&g, &mut rng);
                let d = &a.apply(&u).unwrap() - &b.apply(&u).unwrap();
                assert!(d.sup_norm() < 1e-9 * a.scale());
            }
        }
    }

    #[test]
    fn linearization_reproduces_apply() {
        let g = Grid::rectangle([0.0, 1.0], [0.0, 1.0], 7, 5).unwrap();
        let fam = ControlFamily::finite_sup(
            vec![
                ControlCoeffs::new(vec![1.0, 0.0, 0.0, 2.0], vec![0.5, -1.0], 0.0),
                ControlCoeffs::new(vec![1.5, 0.0, 0.0, 1.0], vec![-0.3, 0.2], -1.0),
            ],
            Envelope::new(1.0, 2.0, 1.2, 1.0),
        )
        .unwrap();
        let op = DiscreteOperator::new(fam, g, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let u = random_function(&g, &mut rng);
            let lin = op.linearize_at(&u).unwrap();
            let d = &lin.stencil.apply(&u) - &op.apply(&u).unwrap();
            assert!(d.sup_norm() < 1e-12 * op.scale());
            assert!(lin.stencil.min_off_diagonal() >= 0.0);
        }
    }

    #[test]
    fn linearize_examples() {
        let g = line(9);
        let lap = DiscreteOperator::new(ControlFamily::laplacian(1), g, 0.0).unwrap();
        let u = GridFunction::sample(&g, |x, _| (7.0 * x).cos());
        assert!(lap.linearize_at(&u).unwrap().policy.iter().all(|&p| p == 0));

        let fucik = DiscreteOperator::new(ControlFamily::fucik(1, 5.0, 0.0).unwrap(), g, 0.0).unwrap();
        let pos = sine(&g);
        let lin = fucik.linearize_at(&pos).unwrap();
        assert!(lin.policy.iter().all(|&p| p == 1));
        let h2 = g.h()[0].powi(2);
        assert!((lin.stencil.rows()[4][0] - (-2.0 / h2 + 5.0)).abs() < 1e-9);
        // ties at u = 0 go to the u <= 0 branch
        let lin0 = fucik.linearize_at(&GridFunction::zeros(&g)).unwrap();
        assert!(lin0.policy.iter().all(|&p| p == 0));

        let pucci = DiscreteOperator::new(ControlFamily::pucci_plus(1, 1.0, 2.0).unwrap(), g, 0.0).unwrap();
        let mut v = GridFunction::zeros(&g);
        v.values_mut()[3] = -1.0; // D2 > 0 at node 3
        v.values_mut()[5] = 1.0; // D2 < 0 at node 5
        let lin = pucci.linearize_at(&v).unwrap();
        assert!((lin.stencil.rows()[3][1] - 2.0 / h2).abs() < 1e-9);
        assert!((lin.stencil.rows()[5][1] - 1.0 / h2).abs() < 1e-9);
    }

    #[test]
    fn admissibility_enforced() {
        let fam = ControlFamily::finite_sup(
            vec![ControlCoeffs::new(vec![0.01], vec![10.0], 0.0)],
            Envelope::new(0.01, 0.01, 10.0, 0.0),
        )
        .unwrap();
        assert!(matches!(DiscreteOperator::new(fam.clone(), line(9), 0.0), Err(Error::Admissibility(_))));
        assert!(DiscreteOperator::new(fam, line(999), 0.0).is_ok());
    }

    #[test]
    fn envelope_violations_rejected() {
        let r = ControlFamily::finite_sup(
            vec![ControlCoeffs::new(vec![3.0], vec![0.0], 0.0)],
            Envelope::new(1.0, 2.0, 0.0, 0.0),
        );
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(ControlFamily::fucik(1, -3.0, 1.0).is_err());
        let mixed = ControlFamily::finite_sup(
            vec![ControlCoeffs::new(vec![1.0, 0.2, 0.2, 1.0], vec![0.0, 0.0], 0.0)],
            Envelope::new(0.5, 2.0, 0.0, 0.0),
        );
        assert!(mixed.is_err());
    }

    #[test]
    fn property_checks_linear_and_fucik() {
        let g = line(31);
        let lap = DiscreteOperator::new(ControlFamily::laplacian(1), g, 0.0).unwrap();
        let rep = check_h0_h3(&lap, 20, 1).unwrap();
        assert!(rep.max_violation() < 1e-12, "{rep:?}");

        let fucik = DiscreteOperator::new(ControlFamily::fucik(1, 5.0, 0.0).unwrap(), g, 0.0).unwrap();
        let phi = sine(&g);
        let d = &fucik.apply(&phi.scale(2.0)).unwrap() - &fucik.apply(&phi).unwrap().scale(2.0);
        assert_eq!(d.sup_norm(), 0.0);
    }

    #[test]
    fn pucci_minus_is_concave_mirror() {
        let g = line(25);
        let plus = DiscreteOperator::new(ControlFamily::pucci_plus(1, 1.0, 2.0).unwrap(), g, 0.0).unwrap();
        let minus = DiscreteOperator::new(ControlFamily::pucci_minus(1, 1.0, 2.0).unwrap(), g, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_function(&g, &mut rng);
        let a = minus.apply(&u).unwrap();
        let b = plus.apply(&u.scale(-1.0)).unwrap().scale(-1.0);
        assert!((&a - &b).sup_norm() < 1e-9);
        assert!((&plus.mirrored().apply(&u).unwrap() - &a).sup_norm() < 1e-9);
    }
}
