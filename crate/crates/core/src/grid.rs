//! Uniform Cartesian grids on intervals and rectangles.
//!
//! Only interior nodes carry unknowns; the homogeneous Dirichlet boundary is
//! implicit. Nodes are ordered row-major with the first axis varying fastest,
//! so node `(ix, iy)` has linear index `ix + n[0] * iy`.

use std::fmt::Write as _;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on `[a_0, b_0]` or `[a_0, b_0] x [a_1, b_1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct Grid {
    dim: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    n: [usize; 2],
    h: [f64; 2],
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    dim: usize,
    extents: Vec<[f64; 2]>,
    n: Vec<usize>,
    #[serde(default)]
    h: Vec<f64>,
}

impl From<Grid> for GridRepr {
    fn from(g: Grid) -> Self {
        GridRepr {
            dim: g.dim,
            extents: (0..g.dim).map(|i| [g.lo[i], g.hi[i]]).collect(),
            n: g.n[..g.dim].to_vec(),
            h: g.h[..g.dim].to_vec(),
        }
    }
}

impl TryFrom<GridRepr> for Grid {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        build_grid(r.dim, &r.extents, &r.n)
    }
}

/// Builds a grid with `n[i]` interior nodes per axis and spacing
/// `(b_i - a_i) / (n_i + 1)`.
pub fn build_grid(dim: usize, extents: &[[f64; 2]], n: &[usize]) -> Result<Grid> {
    if dim != 1 && dim != 2 {
        return Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")));
    }
    if extents.len() != dim || n.len() != dim {
        return Err(Error::Config(format!(
            "expected {dim} extents and node counts, got {} and {}",
            extents.len(),
            n.len()
        )));
    }
    let mut g = Grid { dim, lo: [0.0; 2], hi: [1.0; 2], n: [1; 2], h: [1.0; 2] };
    for i in 0..dim {
        let [a, b] = extents[i];
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::Config(format!("degenerate extent [{a}, {b}] on axis {i}")));
        }
        if n[i] < 3 {
            return Err(Error::Config(format!("axis {i} needs at least 3 interior nodes, got {}", n[i])));
        }
        g.lo[i] = a;
        g.hi[i] = b;
        g.n[i] = n[i];
        g.h[i] = (b - a) / (n[i] as f64 + 1.0);
    }
    Ok(g)
}

impl Grid {
    /// Interval `[a, b]` with `n` interior nodes.
    pub fn interval(a: f64, b: f64, n: usize) -> Result<Grid> {
        build_grid(1, &[[a, b]], &[n])
    }

    /// Rectangle with `nx * ny` interior nodes.
    pub fn rectangle(x: [f64; 2], y: [f64; 2], nx: usize, ny: usize) -> Result<Grid> {
        build_grid(2, &[x, y], &[nx, ny])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> &[usize] {
        &self.n[..self.dim]
    }

    pub fn h(&self) -> &[f64] {
        &self.h[..self.dim]
    }

    pub fn extent(&self, axis: usize) -> [f64; 2] {
        [self.lo[axis], self.hi[axis]]
    }

    pub fn len(&self) -> usize {
        self.n[0] * if self.dim == 2 { self.n[1] } else { 1 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distance between neighbours along `axis` in the linear ordering.
    pub fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            1
        } else {
            self.n[0]
        }
    }

    /// Per-axis integer coordinates of linear index `k`.
    pub fn coords(&self, k: usize) -> [usize; 2] {
        [k % self.n[0], k / self.n[0]]
    }

    /// Physical position of node `k`; the second entry is 0 in 1D.
    pub fn point(&self, k: usize) -> [f64; 2] {
        let c = self.coords(k);
        let mut p = [0.0; 2];
        for i in 0..self.dim {
            p[i] = self.lo[i] + (c[i] as f64 + 1.0) * self.h[i];
        }
        p
    }

    /// Quadrature weight of one node (product of spacings).
    pub fn cell_volume(&self) -> f64 {
        self.h().iter().product()
    }

    /// Neighbour of `k` along `axis` in direction `dir` (-1 or +1), `None`
    /// when the neighbour is on the boundary.
    #[inline]
    pub fn neighbor(&self, k: usize, axis: usize, dir: i32) -> Option<usize> {
        let c = self.coords(k)[axis];
        let s = self.stride(axis);
        if dir < 0 {
            (c > 0).then(|| k - s)
        } else {
            (c + 1 < self.n[axis]).then(|| k + s)
        }
    }

    /// Same grid on the domain scaled by `factor` about the lower corner.
    pub fn scaled(&self, factor: f64) -> Result<Grid> {
        let ext: Vec<[f64; 2]> =
            (0..self.dim).map(|i| [self.lo[i], self.lo[i] + factor * (self.hi[i] - self.lo[i])]).collect();
        build_grid(self.dim, &ext, self.n())
    }
}

/// Nodal values on the interior nodes of a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: &Grid) -> Self {
        GridFunction { grid: *grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        GridFunction { grid: *grid, values: vec![c; grid.len()] }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Usage(format!("expected {} values, got {}", grid.len(), values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Usage(format!("non-finite nodal value {v}")));
        }
        Ok(GridFunction { grid: *grid, values })
    }

    /// Samples `f(x, y)` at every interior node (`y = 0` in 1D).
    pub fn sample(grid: &Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let [x, y] = grid.point(k);
                f(x, y)
            })
            .collect();
        GridFunction { grid: *grid, values }
    }

    pub(crate) fn from_raw(grid: &Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        GridFunction { grid: *grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Usage("grid functions live on different grids".into()));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        GridFunction { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        GridFunction { grid: self.grid, values }
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: f64, other: &GridFunction) -> Self {
        self.zip_map(other, |a, b| a + alpha * b)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(self)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Euclidean inner product of nodal values.
    pub fn dot(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Discrete `L^p` norm with quadrature weight `h^dim` per node.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let w = self.grid.cell_volume();
        (self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * w).powf(1.0 / p)
    }

    /// Cosine of the angle between `self` and `other` in the nodal inner product.
    pub fn cosine(&self, other: &GridFunction) -> f64 {
        let d = self.l2_norm() * other.l2_norm();
        if d == 0.0 {
            0.0
        } else {
            self.dot(other) / d
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// CSV with columns `x[,y],value`, 17 significant digits, LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(if self.grid.dim == 1 { "x,value\n" } else { "x,y,value\n" });
        for (k, v) in self.values.iter().enumerate() {
            let [x, y] = self.grid.point(k);
            if self.grid.dim == 1 {
                let _ = writeln!(out, "{},{}", fmt_f64(x), fmt_f64(*v));
            } else {
                let _ = writeln!(out, "{},{},{}", fmt_f64(x), fmt_f64(y), fmt_f64(*v));
            }
        }
        out
    }
}

/// Fixed 17-significant-digit scientific formatting used by every CSV writer.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Add for &GridFunction {
    type Output = GridFunction;
    fn add(self, rhs: &GridFunction) -> GridFunction {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &GridFunction {
    type Output = GridFunction;
    fn sub(self, rhs: &GridFunction) -> GridFunction {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<&GridFunction> for f64 {
    type Output = GridFunction;
    fn mul(self, rhs: &GridFunction) -> GridFunction {
        rhs.scale(self)
    }
}

impl Neg for &GridFunction {
    type Output = GridFunction;
    fn neg(self) -> GridFunction {
        self.scale(-1.0)
    }
}

/// `max_k |u_k|`
pub fn sup_norm(u: &GridFunction) -> f64 {
    u.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `sign(u - u_ref) * ||u - u_ref||`, defined when the difference has one sign.
pub fn signed_distance(u: &GridFunction, u_ref: &GridFunction) -> Result<f64> {
    u.same_grid(u_ref)?;
    let (mut lo, mut hi) = (0.0_f64, 0.0_f64);
    for (a, b) in u.values.iter().zip(&u_ref.values) {
        let d = a - b;
        lo = lo.min(d);
        hi = hi.max(d);
    }
    match (lo < 0.0, hi > 0.0) {
        (false, false) => Ok(0.0),
        (false, true) => Ok(hi),
        (true, false) => Ok(lo),
        (true, true) => Err(Error::OrderingViolation { min: lo, max: hi }),
    }
}

/// Subset of interior nodes; excluded nodes act as Dirichlet boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SubdomainMask {
    grid: Grid,
    included: Vec<bool>,
    connected: bool,
}

impl SubdomainMask {
    pub fn new(grid: &Grid, included: Vec<bool>) -> Result<Self> {
        if included.len() != grid.len() {
            return Err(Error::Usage(format!("mask has {} entries, grid has {}", included.len(), grid.len())));
        }
        if !included.iter().any(|&b| b) {
            return Err(Error::Config("subdomain mask excludes every node".into()));
        }
        let connected = is_connected(grid, &included);
        Ok(SubdomainMask { grid: *grid, included, connected })
    }

    pub fn full(grid: &Grid) -> Self {
        SubdomainMask { grid: *grid, included: vec![true; grid.len()], connected: true }
    }

    /// Nodes satisfying `keep(x, y)`.
    pub fn from_predicate(grid: &Grid, keep: impl Fn(f64, f64) -> bool) -> Result<Self> {
        let included = (0..grid.len())
            .map(|k| {
                let [x, y] = grid.point(k);
                keep(x, y)
            })
            .collect();
        SubdomainMask::new(grid, included)
    }

    /// Nodes whose first coordinate lies strictly below the midpoint of axis 0.
    pub fn lower_half(grid: &Grid) -> Result<Self> {
        let [a, b] = grid.extent(0);
        let mid = 0.5 * (a + b);
        SubdomainMask::from_predicate(grid, |x, _| x < mid - 1e-12 * (b - a))
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn included(&self) -> &[bool] {
        &self.included
    }

    #[inline]
    pub fn contains(&self, k: usize) -> bool {
        self.included[k]
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn is_full(&self) -> bool {
        self.included.iter().all(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }
}

fn is_connected(grid: &Grid, included: &[bool]) -> bool {
    let Some(start) = included.iter().position(|&b| b) else {
        return false;
    };
    let mut seen = vec![false; included.len()];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 0;
    while let Some(k) = stack.pop() {
        count += 1;
        for axis in 0..grid.dim() {
            for dir in [-1, 1] {
                if let Some(j) = grid.neighbor(k, axis, dir) {
                    if included[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count == included.iter().filter(|&&b| b).count()
}

/// Zeroes `u` outside the mask.
pub fn restrict_to_mask(u: &GridFunction, m: &SubdomainMask) -> Result<GridFunction> {
    if u.grid != m.grid {
        return Err(Error::Usage("mask and function live on different grids".into()));
    }
    let values = u.values.iter().zip(&m.included).map(|(&v, &keep)| if keep { v } else { 0.0 }).collect();
    Ok(GridFunction { grid: u.grid, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn spacing_and_nodes() {
        let g = Grid::interval(0.0, 1.0, 3).unwrap();
        assert_eq!(g.h(), &[0.25]);
        let xs: Vec<f64> = (0..3).map(|k| g.point(k)[0]).collect();
        assert_eq!(xs, vec![0.25, 0.5, 0.75]);

        let g2 = build_grid(2, &[[0.0, 1.0], [0.0, 1.0]], &[3, 3]).unwrap();
        assert_eq!(g2.len(), 9);
        assert_eq!(g2.h(), &[0.25, 0.25]);

        let g3 = Grid::interval(0.0, 1.0, 199).unwrap();
        assert!((g3.h()[0] - 0.005).abs() < 1e-15);
    }

    #[test]
    fn bad_grids_rejected() {
        assert!(matches!(Grid::interval(0.0, 1.0, 2), Err(Error::Config(_))));
        assert!(matches!(Grid::interval(1.0, 1.0, 5), Err(Error::Config(_))));
        assert!(matches!(build_grid(3, &[[0.0, 1.0]; 3], &[4; 3]), Err(Error::Config(_))));
    }

    #[test]
    fn row_major_ordering() {
        let g = Grid::rectangle([0.0, 1.0], [0.0, 2.0], 3, 4).unwrap();
        assert_eq!(g.coords(4), [1, 1]);
        assert_eq!(g.neighbor(4, 0, 1), Some(5));
        assert_eq!(g.neighbor(4, 1, -1), Some(1));
        assert_eq!(g.neighbor(0, 1, -1), None);
        assert_eq!(g.neighbor(2, 0, 1), None);
    }

    #[test]
    fn sup_norm_examples() {
        let g = Grid::interval(0.0, 1.0, 199).unwrap();
        assert_eq!(sup_norm(&GridFunction::zeros(&g)), 0.0);
        let s = GridFunction::sample(&g, |x, _| (PI * x).sin());
        let h = g.h()[0];
        assert!((s.sup_norm() - 1.0).abs() <= (PI * h).powi(2) / 2.0);
        let mut e = GridFunction::zeros(&g);
        e.values_mut()[17] = -2.0;
        assert_eq!(e.sup_norm(), 2.0);
    }

    #[test]
    fn signed_distance_examples() {
        let g = Grid::interval(0.0, 1.0, 49).unwrap();
        let base = GridFunction::sample(&g, |x, _| x * x - 0.3);
        let phi = GridFunction::sample(&g, |x, _| (PI * x).sin());
        let phi = phi.scale(1.0 / phi.sup_norm());
        assert_eq!(signed_distance(&base, &base).unwrap(), 0.0);
        assert!((signed_distance(&base.axpy(0.3, &phi), &base).unwrap() - 0.3).abs() < 1e-12);
        assert!((signed_distance(&base.axpy(-2.0, &phi), &base).unwrap() + 2.0).abs() < 1e-12);
        let wiggle = GridFunction::sample(&g, |x, _| (2.0 * PI * x).sin());
        assert!(matches!(signed_distance(&base.axpy(1.0, &wiggle), &base), Err(Error::OrderingViolation { .. })));
    }

    #[test]
    fn masks() {
        let g = Grid::interval(0.0, 1.0, 9).unwrap();
        let u = GridFunction::constant(&g, 1.0);
        let full = SubdomainMask::full(&g);
        assert_eq!(restrict_to_mask(&u, &full).unwrap(), u);

        let half = SubdomainMask::lower_half(&g).unwrap();
        let r = restrict_to_mask(&u, &half).unwrap();
        for k in 0..g.len() {
            let x = g.point(k)[0];
            assert_eq!(r.values()[k], if x < 0.5 { 1.0 } else { 0.0 });
        }
        assert!(half.is_connected());

        let mut one = vec![false; g.len()];
        one[4] = true;
        let m = SubdomainMask::new(&g, one).unwrap();
        let r = restrict_to_mask(&u, &m).unwrap();
        assert_eq!(r.values().iter().sum::<f64>(), 1.0);
        assert_eq!(r.values()[4], 1.0);

        assert!(matches!(SubdomainMask::new(&g, vec![false; g.len()]), Err(Error::Config(_))));
        let split = SubdomainMask::from_predicate(&g, |x, _| !(0.4..0.6).contains(&x)).unwrap();
        assert!(!split.is_connected());
    }

    #[test]
    fn grid_serde_shape() {
        let g = Grid::interval(0.0, 1.0, 3).unwrap();
        let v = serde_json::to_value(g).unwrap();
        assert_eq!(v["dim"], 1);
        assert_eq!(v["n"][0], 3);
        assert_eq!(v["h"][0], 0.25);
        let back: Grid = serde_json::from_value(v).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn csv_layout() {
        let g = Grid::interval(0.0, 1.0, 3).unwrap();
        let csv = GridFunction::constant(&g, 1.0).to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("x,value"));
        assert_eq!(lines.next(), Some("2.5000000000000000e-1,1.0000000000000000e0"));
    }
}
