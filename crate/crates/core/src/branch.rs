//! Solution branches of `F_h[u] + lambda u = t phi_1^+ + h` as `t` varies.
//!
//! [`BranchExplorer`] computes both principal eigenpairs once and then offers
//! one tracer per spectral regime:
//!
//! * `lambda < lambda_1^+`: [`BranchExplorer::sweep_subcritical`], a warm-started
//!   sweep with ordering, Lipschitz and convexity diagnostics.
//! * `lambda = lambda_1^{+/-}`: [`BranchExplorer::locate_tstar_resonance`] approaches
//!   the eigenvalue through `lambda_k = lambda_1 -/+ eps_k` and bisects in `t`
//!   on blow-up, then [`BranchExplorer::trace_resonant_branch`] sweeps at
//!   exact resonance and classifies the critical set.
//! * `lambda_1^+ < lambda < lambda_1^-`: [`BranchExplorer::trace_fold`] builds the
//!   minimal branch by monotone iteration and a second branch by
//!   pseudo-arclength continuation.
//! * `lambda` just above `lambda_1^-`: [`BranchExplorer::sweep_negative_regime`].
//!
//! Where several solutions exist the solver only finds the one its start
//! leads to, so multiplicity is probed with a fixed battery of starts
//! (multiples of both eigenfunctions plus seeded random fields).
//!
//! Blow-up along the resonance ladder is declared when
//! `|u| > min(M_blow, 1 / (10 sqrt(eps_k)))` and `u / |u|` is aligned with the
//! eigenfunction. The response grows like `(t* - t) / eps`, so the
//! classification boundary sits at `t* - O(sqrt(eps))` and converges to `t*`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::continuation::{continue_branch, ArclengthParams};
use crate::error::{Error, Result};
use crate::grid::{signed_distance, GridFunction, SubdomainMask};
use crate::operator::DiscreteOperator;
use crate::solver::{solve, SolveParams, SolveReport, SolveStatus};
use crate::spectral::{principal_eigen, subdomain_gap, EigenPair, EigenParams, Sign};

/// Spectral parameter, either explicit or relative to a principal eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LamSpec {
    Value { value: f64 },
    AtLamPlus {
        #[serde(default)]
        offset: f64,
    },
    AtLamMinus {
        #[serde(default)]
        offset: f64,
    },
}

impl LamSpec {
    pub fn resolve(&self, plus: f64, minus: f64) -> f64 {
        match *self {
            LamSpec::Value { value } => value,
            LamSpec::AtLamPlus { offset } => plus + offset,
            LamSpec::AtLamMinus { offset } => minus + offset,
        }
    }
}

/// `eps_k = 2^-k`, `k = 1..=count`.
pub fn default_ladder(count: usize) -> Vec<f64> {
    (1..=count).map(|k| 0.5f64.powi(k as i32)).collect()
}

#[derive(Debug, Clone)]
pub struct BranchConfig {
    /// The operator `F` (its shift is part of `F`).
    pub op: DiscreteOperator,
    pub lam: LamSpec,
    pub h: GridFunction,
    pub t_range: [f64; 2],
    pub n_samples: usize,
    /// Decreasing gaps `eps_k` to the resonant eigenvalue.
    pub ladder: Vec<f64>,
    pub solve: SolveParams,
    pub eigen: EigenParams,
    /// Seed for random starts.
    pub seed: u64,
    /// Random starts appended to the six eigenfunction starts.
    pub random_starts: usize,
}

impl BranchConfig {
    pub fn new(op: DiscreteOperator, lam: LamSpec, h: GridFunction, t_range: [f64; 2], n_samples: usize) -> Self {
        BranchConfig {
            op,
            lam,
            h,
            t_range,
            n_samples,
            ladder: default_ladder(20),
            solve: SolveParams::default(),
            eigen: EigenParams::default(),
            seed: 0,
            random_starts: 2,
        }
    }

    fn validate(&self) -> Result<()> {
        let [a, b] = self.t_range;
        if !(a < b) {
            return Err(Error::Config(format!("t_range must satisfy t_min < t_max, got [{a}, {b}]")));
        }
        if self.n_samples < 2 {
            return Err(Error::Config("n_samples must be at least 2".into()));
        }
        if self.ladder.is_empty()
            || self.ladder.iter().any(|e| !(*e > 0.0))
            || self.ladder.windows(2).any(|w| !(w[1] < w[0]))
        {
            return Err(Error::Config("ladder must be a nonempty strictly decreasing list of positive gaps".into()));
        }
        if self.h.grid() != self.op.grid() {
            return Err(Error::Usage("h does not live on the operator grid".into()));
        }
        self.solve.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegimeTag {
    Negative,
    Positive,
    SignChanging,
}

pub fn regime_tags(u: &GridFunction) -> Vec<RegimeTag> {
    let (lo, hi) = (u.min(), u.max());
    if hi < 0.0 {
        vec![RegimeTag::Negative]
    } else if lo > 0.0 {
        vec![RegimeTag::Positive]
    } else if lo < 0.0 && hi > 0.0 {
        vec![RegimeTag::SignChanging]
    } else {
        Vec::new()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchPoint {
    pub t: f64,
    pub u: GridFunction,
    /// Signed distance to the branch reference solution.
    pub d: f64,
    /// False when `u - u_ref` changes sign and `d` falls back to
    /// `sign(<u - u_ref, phi_1^+>) |u - u_ref|`.
    pub ordered: bool,
    pub tags: Vec<RegimeTag>,
    /// Residual from a fresh operator application.
    pub residual: f64,
    pub solve: Option<SolveReport>,
    /// Cosine of `u` against `phi_1^+`.
    pub cosine_plus: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Branch {
    pub label: String,
    pub lam: f64,
    pub points: Vec<BranchPoint>,
    pub metrics: BTreeMap<String, f64>,
}

impl Branch {
    /// `max_i max_x (u_{i+1} - u_i)` over points sorted by increasing `t`;
    /// negative iff the branch is strictly decreasing in `t` at every node.
    pub fn monotone_excess(&self) -> f64 {
        let pts = self.sorted();
        pts.windows(2).map(|w| (&w[1].u - &w[0].u).max()).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `u_m - chord(t_m)` over consecutive triples, sorted by `t`.
    pub fn convexity_excess(&self) -> f64 {
        let pts = self.sorted();
        pts.windows(3)
            .map(|w| {
                let (a, m, b) = (w[0], w[1], w[2]);
                let s = (m.t - a.t) / (b.t - a.t);
                (&m.u - &a.u.scale(1.0 - s).axpy(s, &b.u)).max()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max |u_s - u_t| / |s - t|` over consecutive points.
    pub fn lipschitz(&self) -> f64 {
        let pts = self.sorted();
        pts.windows(2)
            .filter(|w| w[1].t > w[0].t)
            .map(|w| (&w[1].u - &w[0].u).sup_norm() / (w[1].t - w[0].t))
            .fold(0.0, f64::max)
    }

    /// True when `d` is strictly monotone along the points in `t` order.
    pub fn d_monotone(&self) -> bool {
        let pts = self.sorted();
        let inc = pts.windows(2).all(|w| w[1].d > w[0].d);
        let dec = pts.windows(2).all(|w| w[1].d < w[0].d);
        inc || dec
    }

    pub fn max_residual(&self) -> f64 {
        self.points.iter().map(|p| p.residual).fold(0.0, f64::max)
    }

    fn sorted(&self) -> Vec<&BranchPoint> {
        let mut v: Vec<&BranchPoint> = self.points.iter().collect();
        v.sort_by(|a, b| a.t.total_cmp(&b.t));
        v
    }

    /// `t,d,sup_norm,min_u,max_u,regime,cosine_plus` rows.
    pub fn to_csv(&self) -> String {
        use crate::grid::fmt_f64;
        let mut s = String::from("t,d,sup_norm,min_u,max_u,regime,cosine_plus\n");
        for p in &self.points {
            let tags: Vec<&str> = p
                .tags
                .iter()
                .map(|t| match t {
                    RegimeTag::Negative => "negative",
                    RegimeTag::Positive => "positive",
                    RegimeTag::SignChanging => "sign_changing",
                })
                .collect();
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt_f64(p.t),
                fmt_f64(p.d),
                fmt_f64(p.u.sup_norm()),
                fmt_f64(p.u.min()),
                fmt_f64(p.u.max()),
                if tags.is_empty() { "zero".to_string() } else { tags.join("|") },
                fmt_f64(p.cosine_plus)
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriticalKind {
    ResonancePlus,
    ResonanceMinus,
    Fold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupEvidence {
    pub eps: f64,
    pub t: f64,
    pub norm: f64,
    pub cosine: f64,
}

/// Classification boundary at one rung of the resonance ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderBracket {
    pub eps: f64,
    pub lo: f64,
    pub hi: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalReport {
    pub kind: CriticalKind,
    pub t_star: f64,
    pub bracket: [f64; 2],
    pub blowup_evidence: Vec<BlowupEvidence>,
    pub ladder: Vec<LadderBracket>,
}

impl CriticalReport {
    pub fn width(&self) -> f64 {
        self.bracket[1] - self.bracket[0]
    }

    /// Whether the ladder boundaries move monotonically toward `t*`.
    pub fn brackets_monotone(&self, tol: f64) -> bool {
        self.ladder.windows(2).all(|w| w[1].lo >= w[0].lo - tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alternative {
    /// Blow-up along the eigenfunction at `t*`.
    NoSolution,
    /// Bounded limit `u*` and a ray `u* + s phi` of solutions at `t*`.
    Ray,
    /// Evidence does not settle the alternative.
    Open,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResonantTrace {
    pub sign: Sign,
    pub branch: Branch,
    /// `t*` refined by bisection on solvability at exact resonance.
    pub t_star: f64,
    pub alternative: Alternative,
    pub u_star: Option<GridFunction>,
    /// `(s, residual of u* + s phi at t*)`.
    pub ray_residuals: Vec<(f64, f64)>,
    pub ray_tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Census {
    pub t: f64,
    pub attempts: usize,
    pub converged: usize,
    /// Distinct solutions, ordered by first discovery.
    pub solutions: Vec<GridFunction>,
    /// Largest distance between two converged runs assigned to the same solution.
    pub max_agreement_gap: f64,
    /// Largest solver threshold among converged runs.
    pub tol: f64,
}

impl Census {
    pub fn distinct(&self) -> usize {
        self.solutions.len()
    }

    /// Smallest sup-distance between distinct solutions.
    pub fn min_pair_gap(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.solutions.len() {
            for j in i + 1..self.solutions.len() {
                m = m.min((&self.solutions[i] - &self.solutions[j]).sup_norm());
            }
        }
        m
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldTrace {
    pub minimal: Branch,
    pub second: Branch,
    pub critical: CriticalReport,
    /// The second branch reached the minimal branch (sharp fold) or turned.
    pub reached_fold: bool,
    pub turned: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NegativeRegime {
    pub branch: Branch,
    /// Largest sampled `t` below which every found solution is negative.
    pub t_minus: Option<f64>,
    /// `(k, max u)` for `(F + lambda)[u] = -k phi_1^+`.
    pub antimaximum: Vec<(f64, f64)>,
    /// `(t, sup u)` at `t_max / 2` and `t_max`.
    pub growth: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessCase {
    pub label: String,
    pub distinct: usize,
    pub converged: usize,
    pub attempts: usize,
    pub max_agreement_gap: f64,
    pub tol: f64,
    pub min_u: f64,
    pub max_u: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub d0: f64,
    /// Principal eigenvalues of `F + lambda`.
    pub lam_plus: f64,
    pub lam_minus: f64,
    pub cases: Vec<UniquenessCase>,
}

impl UniquenessReport {
    pub fn all_unique(&self) -> bool {
        self.cases.iter().all(|c| c.distinct == 1)
    }
}

/// Maximum over the middle third of the domain along every axis.
pub fn max_on_middle_third(u: &GridFunction) -> f64 {
    let g = u.grid();
    let mut m = f64::NEG_INFINITY;
    for k in 0..g.len() {
        let p = g.point(k);
        let inside = (0..g.dim()).all(|a| {
            let [lo, hi] = g.extent(a);
            let w = hi - lo;
            p[a] >= lo + w / 3.0 && p[a] <= hi - w / 3.0
        });
        if inside {
            m = m.max(u.values()[k]);
        }
    }
    m
}

pub struct BranchExplorer {
    cfg: BranchConfig,
    plus: EigenPair,
    minus: EigenPair,
    lam: f64,
    op_lam: DiscreteOperator,
}

impl BranchExplorer {
    /// Computes both eigenpairs, resolves `lambda` and checks that `h` is not
    /// a nonzero multiple of `phi_1^+`. `h = 0` is accepted.
    pub fn new(cfg: BranchConfig) -> Result<Self> {
        cfg.validate()?;
        let plus = principal_eigen(&cfg.op, Sign::Plus, &cfg.eigen)?;
        let minus = principal_eigen(&cfg.op, Sign::Minus, &cfg.eigen)?;
        let hn = cfg.h.sup_norm();
        if hn > 0.0 {
            let hh = cfg.h.scale(1.0 / hn);
            let dist = (&hh - &plus.phi).sup_norm().min((&hh + &plus.phi).sup_norm());
            if dist < 1e-6 {
                return Err(Error::Config(format!(
                    "h is a multiple of the positive eigenfunction (distance {dist:.2e})"
                )));
            }
        }
        let lam = cfg.lam.resolve(plus.lam, minus.lam);
        let op_lam = cfg.op.with_shift(cfg.op.shift() + lam);
        Ok(BranchExplorer { cfg, plus, minus, lam, op_lam })
    }

    pub fn config(&self) -> &BranchConfig {
        &self.cfg
    }

    pub fn lam(&self) -> f64 {
        self.lam
    }

    pub fn eigen_plus(&self) -> &EigenPair {
        &self.plus
    }

    pub fn eigen_minus(&self) -> &EigenPair {
        &self.minus
    }

    /// `t phi_1^+ + h`
    pub fn rhs(&self, t: f64) -> GridFunction {
        self.cfg.h.axpy(t, &self.plus.phi)
    }

    fn pair(&self, sign: Sign) -> &EigenPair {
        match sign {
            Sign::Plus => &self.plus,
            Sign::Minus => &self.minus,
        }
    }

    fn degenerate(&self) -> bool {
        self.cfg.op.family().is_linear()
            || (self.minus.lam - self.plus.lam).abs() <= 1e-9 * (1.0 + self.plus.lam.abs())
    }

    fn samples(&self) -> Vec<f64> {
        let [a, b] = self.cfg.t_range;
        let n = self.cfg.n_samples;
        (0..n).map(|i| if i + 1 == n { b } else { a + (b - a) * i as f64 / (n - 1) as f64 }).collect()
    }

    /// Solves at `(lambda, t)` from `u0`.
    pub fn solve_at(&self, lam: f64, t: f64, u0: Option<&GridFunction>) -> Result<(GridFunction, SolveReport)> {
        let op = self.cfg.op.with_shift(self.cfg.op.shift() + lam);
        solve(&op, &self.rhs(t), &self.cfg.solve, u0)
    }

    /// Solves `(F + lambda)[u] = f` at the configured `lambda`.
    pub fn solve_rhs(&self, f: &GridFunction, u0: Option<&GridFunction>) -> Result<(GridFunction, SolveReport)> {
        solve(&self.op_lam, f, &self.cfg.solve, u0)
    }

    fn start_scale(&self, f: &GridFunction, lam: f64) -> f64 {
        let gap = (lam - self.plus.lam).abs().min((lam - self.minus.lam).abs()).max(0.1);
        (f.sup_norm() / gap).max(1.0)
    }

    /// Six eigenfunction multiples followed by `random_starts` seeded fields.
    pub fn start_battery(&self, s0: f64, salt: u64) -> Vec<GridFunction> {
        let (p, m) = (&self.plus.phi, &self.minus.phi);
        let mut v = vec![p.scale(s0), p.scale(-s0), m.scale(s0), m.scale(-s0), p.scale(10.0 * s0), p.scale(-10.0 * s0)];
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        for _ in 0..self.cfg.random_starts {
            let vals = (0..p.len()).map(|_| s0 * rng.gen_range(-1.0..1.0)).collect();
            v.push(GridFunction::from_values(p.grid(), vals).expect("finite"));
        }
        v
    }

    /// Runs the solver from every start and groups converged results.
    pub fn census(&self, lam: f64, f: &GridFunction, starts: &[GridFunction], t: f64) -> Result<Census> {
        let op = self.cfg.op.with_shift(self.cfg.op.shift() + lam);
        let mut c = Census {
            t,
            attempts: starts.len(),
            converged: 0,
            solutions: Vec::new(),
            max_agreement_gap: 0.0,
            tol: 0.0,
        };
        for u0 in starts {
            let (u, rep) = solve(&op, f, &self.cfg.solve, Some(u0))?;
            if !rep.converged() {
                continue;
            }
            let res = op.residual(&u, f)?.sup_norm();
            if res > rep.tol_used {
                continue;
            }
            c.converged += 1;
            c.tol = c.tol.max(rep.tol_used);
            let same = (10.0 * rep.tol_used).max(1e-9 * (1.0 + u.sup_norm()));
            match c.solutions.iter().map(|s| (s - &u).sup_norm()).enumerate().find(|(_, g)| *g <= same) {
                Some((_, gap)) => c.max_agreement_gap = c.max_agreement_gap.max(gap),
                None => c.solutions.push(u),
            }
        }
        Ok(c)
    }

    /// Census of `F[u] + lambda u = t phi + h` with the standard battery.
    pub fn census_at(&self, t: f64) -> Result<Census> {
        let f = self.rhs(t);
        let starts = self.start_battery(self.start_scale(&f, self.lam), t.to_bits());
        self.census(self.lam, &f, &starts, t)
    }

    fn point(&self, op: &DiscreteOperator, t: f64, u: GridFunction, solve: Option<SolveReport>) -> Result<BranchPoint> {
        let residual = op.residual(&u, &self.rhs(t))?.sup_norm();
        Ok(BranchPoint {
            t,
            d: 0.0,
            ordered: true,
            tags: regime_tags(&u),
            residual,
            solve,
            cosine_plus: u.cosine(&self.plus.phi),
            u,
        })
    }

    fn finish(&self, label: &str, lam: f64, mut points: Vec<BranchPoint>) -> Branch {
        if !points.is_empty() {
            let mut order: Vec<usize> = (0..points.len()).collect();
            order.sort_by(|&a, &b| points[a].t.total_cmp(&points[b].t));
            let reference = points[order[order.len() / 2]].u.clone();
            for p in &mut points {
                match signed_distance(&p.u, &reference) {
                    Ok(d) => {
                        p.d = d;
                        p.ordered = true;
                    }
                    Err(_) => {
                        let diff = &p.u - &reference;
                        p.d = diff.dot(&self.plus.phi).signum() * diff.sup_norm();
                        p.ordered = false;
                    }
                }
            }
        }
        let mut b = Branch { label: label.to_string(), lam, points, metrics: BTreeMap::new() };
        if b.points.len() >= 2 {
            b.metrics.insert("monotone_excess".into(), b.monotone_excess());
            b.metrics.insert("lipschitz".into(), b.lipschitz());
            b.metrics.insert("d_monotone".into(), if b.d_monotone() { 1.0 } else { 0.0 });
        }
        if b.points.len() >= 3 {
            b.metrics.insert("convexity_excess".into(), b.convexity_excess());
        }
        b.metrics.insert("max_residual".into(), b.max_residual());
        b
    }

    /// Warm-started sweep over `t_range` for `lambda < lambda_1^+`.
    pub fn sweep_subcritical(&self) -> Result<Branch> {
        if !(self.lam < self.plus.lam) {
            return Err(Error::Regime(format!(
                "sweep needs lambda < lambda_1^+ (lambda = {}, lambda_1^+ = {})",
                self.lam, self.plus.lam
            )));
        }
        let mut points = Vec::new();
        let mut warm: Option<GridFunction> = None;
        for t in self.samples() {
            let (u, rep) = solve(&self.op_lam, &self.rhs(t), &self.cfg.solve, warm.as_ref())?;
            if !rep.converged() {
                return Err(Error::Regime(format!("solve at t = {t} ended with {:?} below lambda_1^+", rep.status)));
            }
            warm = Some(u.clone());
            points.push(self.point(&self.op_lam, t, u, Some(rep))?);
        }
        let mut b = self.finish("subcritical", self.lam, points);
        let first = &b.points[0].u;
        let last = &b.points[b.points.len() - 1].u;
        let (min_first, max_last) = (first.min(), last.max());
        b.metrics.insert("min_u_at_t_min".into(), min_first);
        b.metrics.insert("max_u_at_t_max".into(), max_last);
        Ok(b)
    }

    /// Classifies `t` at `lambda_k`: `Some(evidence)` for blow-up.
    fn blowup_at(&self, sign: Sign, lam_k: f64, eps: f64, t: f64) -> Result<(bool, BlowupEvidence)> {
        let threshold = self.cfg.solve.blowup_norm.min(1.0 / (10.0 * eps.sqrt()));
        let (u, _) = self.solve_at(lam_k, t, None)?;
        let norm = u.sup_norm();
        let cosine = if norm.is_finite() && norm > 0.0 { u.cosine(&self.pair(sign).phi) } else { 0.0 };
        let ev = BlowupEvidence { eps, t, norm, cosine };
        Ok((norm > threshold && cosine >= 0.99, ev))
    }

    /// Locates `t*` for resonance at `lambda_1^sign` through the ladder.
    pub fn locate_tstar_resonance(&self, sign: Sign) -> Result<CriticalReport> {
        if self.degenerate() {
            return Err(Error::Regime(
                "lambda_1^+ = lambda_1^- (linear family): resonance detection is not defined".into(),
            ));
        }
        let lam1 = self.pair(sign).lam;
        let [tmin, tmax] = self.cfg.t_range;
        let tol = 1e-9 * (tmax - tmin).max(1.0);
        let mut ladder = Vec::new();
        let mut evidence = Vec::new();
        let (mut lo, mut hi) = (tmin, tmax);
        for &eps in &self.cfg.ladder {
            let lam_k = match sign {
                Sign::Plus => lam1 - eps,
                Sign::Minus => lam1 + eps,
            };
            let threshold = self.cfg.solve.blowup_norm.min(1.0 / (10.0 * eps.sqrt()));
            // reuse the previous bracket when it is still valid
            let (mut a, mut b) = (lo, hi);
            let (ba, mut ea) = self.blowup_at(sign, lam_k, eps, a)?;
            if !ba {
                a = tmin;
                let (ba, e) = self.blowup_at(sign, lam_k, eps, a)?;
                if !ba {
                    return Err(Error::Bracket(format!(
                        "no blow-up at t_min = {tmin} for eps = {eps:.3e} (norm {:.3e}, cosine {:.4})",
                        e.norm, e.cosine
                    )));
                }
                ea = e;
            }
            if self.blowup_at(sign, lam_k, eps, b)?.0 {
                b = tmax;
                let (bb, e) = self.blowup_at(sign, lam_k, eps, b)?;
                if bb {
                    return Err(Error::Bracket(format!(
                        "blow-up persists at t_max = {tmax} for eps = {eps:.3e} (norm {:.3e})",
                        e.norm
                    )));
                }
            }
            while b - a > tol {
                let m = 0.5 * (a + b);
                let (bm, em) = self.blowup_at(sign, lam_k, eps, m)?;
                if bm {
                    a = m;
                    ea = em;
                } else {
                    b = m;
                }
            }
            ladder.push(LadderBracket { eps, lo: a, hi: b, threshold });
            evidence.push(ea);
            lo = a;
            hi = (b + 2.0 * (b - a)).min(tmax);
        }
        let bnd: Vec<f64> = ladder.iter().map(|l| 0.5 * (l.lo + l.hi)).collect();
        for (k, w) in bnd.windows(2).enumerate() {
            if w[1] < w[0] - 2.0 * tol {
                return Err(Error::UnstableDetection(format!(
                    "classification boundary moved backwards between eps = {:.3e} and {:.3e}: {:.12e} -> {:.12e}; ladder {:?}",
                    ladder[k].eps,
                    ladder[k + 1].eps,
                    w[0],
                    w[1],
                    ladder
                )));
            }
        }
        let last = *ladder.last().expect("nonempty ladder");
        let b_k = bnd[bnd.len() - 1];
        let t_ext = if bnd.len() >= 3 {
            let (x0, x1, x2) = (bnd[bnd.len() - 3], bnd[bnd.len() - 2], b_k);
            let d1 = x2 - x1;
            let d0 = x1 - x0;
            let den = d1 - d0;
            if den.abs() > 1e-15 * (1.0 + x2.abs()) && (d1 / d0).abs() < 1.0 {
                x2 - d1 * d1 / den
            } else {
                x2
            }
        } else {
            b_k
        };
        let w = (t_ext - b_k).abs() + tol;
        let bracket = [last.lo.min(t_ext - w), last.hi.max(t_ext + w)];
        Ok(CriticalReport {
            kind: match sign {
                Sign::Plus => CriticalKind::ResonancePlus,
                Sign::Minus => CriticalKind::ResonanceMinus,
            },
            t_star: t_ext,
            bracket,
            blowup_evidence: evidence,
            ladder,
        })
    }

    /// Whether some start yields a solution at `(lambda, t)`.
    pub fn solvable(&self, lam: f64, t: f64, warm: Option<&GridFunction>) -> Result<Option<GridFunction>> {
        self.find_solution(lam, t, warm, f64::INFINITY)
    }

    /// Like [`Self::solvable`] but ignores solutions with `|u| > bound`.
    fn find_solution(&self, lam: f64, t: f64, warm: Option<&GridFunction>, bound: f64) -> Result<Option<GridFunction>> {
        let f = self.rhs(t);
        let mut starts: Vec<GridFunction> = warm.into_iter().cloned().collect();
        starts.push(GridFunction::zeros(f.grid()));
        starts.extend(self.start_battery(self.start_scale(&f, lam), t.to_bits()));
        let op = self.cfg.op.with_shift(self.cfg.op.shift() + lam);
        for u0 in &starts {
            let (u, rep) = solve(&op, &f, &self.cfg.solve, Some(u0))?;
            if rep.converged() && u.sup_norm() <= bound {
                return Ok(Some(u));
            }
        }
        Ok(None)
    }

    /// Sweeps at exact resonance from `t_max` down to `t_star`, refines
    /// `t_star` by solvability bisection and classifies the critical set.
    pub fn trace_resonant_branch(&self, sign: Sign, t_star: f64) -> Result<ResonantTrace> {
        if self.degenerate() {
            return Err(Error::Regime("resonant trace is not defined for a linear family".into()));
        }
        let lam = self.pair(sign).lam;
        let op = self.cfg.op.with_shift(self.cfg.op.shift() + lam);
        let tmax = self.cfg.t_range[1];
        if !(t_star < tmax) {
            return Err(Error::Config(format!("t_star = {t_star} must lie below t_max = {tmax}")));
        }
        let span = tmax - t_star;
        let n = self.cfg.n_samples;
        let mut ts: Vec<f64> = (0..n - 1).map(|i| tmax - span * i as f64 / (n - 1) as f64).collect();
        let last_ratio = 1.0 / (n - 1) as f64;
        ts.extend([1e-1, 1e-2, 1e-3, 1e-4].iter().filter(|&&r| r < last_ratio).map(|r| t_star + r * span));
        let mut points: Vec<BranchPoint> = Vec::new();
        let mut warm: Option<GridFunction> = None;
        for &t in &ts {
            let found = self.solvable(lam, t, warm.as_ref())?;
            let Some(u) = found else {
                return Err(Error::Regime(format!("no solution found at t = {t} above t* = {t_star}")));
            };
            warm = Some(u.clone());
            points.push(self.point(&op, t, u, None)?);
        }

        // Refine t* by existence at exact resonance. The linearization is
        // singular to rounding on the eigen-direction, so solutions far larger
        // than anything seen along the sweep are treated as blow-up.
        let bound = 10.0 * (1.0 + points.iter().map(|p| p.u.sup_norm()).fold(0.0, f64::max));
        let (mut a, mut b) = (t_star - span * 1e-3, t_star + span * 1e-4);
        let mut near = warm.clone();
        let mut widen = 0;
        while self.find_solution(lam, a, near.as_ref(), bound)?.is_some() && widen < 30 {
            b = b.max(a);
            a -= (t_star - a).abs().max(1e-6) * 2.0;
            widen += 1;
        }
        for _ in 0..60 {
            if b - a <= 1e-12 * (1.0 + span) {
                break;
            }
            let m = 0.5 * (a + b);
            match self.find_solution(lam, m, near.as_ref(), bound)? {
                Some(u) => {
                    b = m;
                    near = Some(u);
                }
                None => a = m,
            }
        }
        let t_ref = b;

        let norms: Vec<f64> = points.iter().rev().take(4).map(|p| p.u.sup_norm()).collect();
        let bounded = norms[0] <= 2.0 * norms[norms.len() - 1] + 1.0;
        let phi = &self.pair(sign).phi;
        let rhs_star = self.rhs(t_ref);
        // u* is the limit of the branch as t decreases to t*
        let k = points.len();
        let u_star = if bounded && k >= 2 {
            let (p1, p0) = (&points[k - 1], &points[k - 2]);
            let slope = (&p1.u - &p0.u).scale(1.0 / (p1.t - p0.t));
            Some(p1.u.axpy(t_ref - p1.t, &slope))
        } else {
            None
        };
        let mut ray = Vec::new();
        let mut ray_tol = 0.0;
        if let Some(us) = &u_star {
            for s in [1.0, 2.0, 5.0] {
                let v = us.axpy(s, phi);
                let r = op.residual(&v, &rhs_star)?.sup_norm();
                let tol = 1e-8 * (1.0 + rhs_star.sup_norm() + v.sup_norm());
                ray_tol = f64::max(ray_tol, tol);
                ray.push((s, r));
            }
        }
        let ray_ok = !ray.is_empty() && ray.iter().all(|&(_, r)| r <= ray_tol);
        let last = points.last().expect("nonempty sweep");
        let aligned = last.u.cosine(phi) >= 0.99 && last.u.min() > 0.0;
        let alternative = if bounded && ray_ok {
            Alternative::Ray
        } else if !bounded && aligned {
            Alternative::NoSolution
        } else {
            Alternative::Open
        };
        let mut branch = self.finish(
            match sign {
                Sign::Plus => "resonant_plus",
                Sign::Minus => "resonant_minus",
            },
            lam,
            points,
        );
        branch.metrics.insert("t_star_refined".into(), t_ref);
        branch.metrics.insert("t_star_in".into(), t_star);
        if let Some(p) = branch.points.iter().find(|p| p.t == tmax) {
            branch.metrics.insert("max_u_at_t_max".into(), p.u.max());
        }
        Ok(ResonantTrace { sign, branch, t_star: t_ref, alternative, u_star, ray_residuals: ray, ray_tol })
    }

    /// Minimal solution at `t` by monotone iteration from the subsolution
    /// `M phi_1^-`, then Howard polishing. `None` if the iteration escapes.
    pub fn minimal_solution(&self, t: f64) -> Result<Option<(GridFunction, SolveReport)>> {
        let f = self.rhs(t);
        let gap = self.minus.lam - self.lam;
        if !(gap > 0.0) {
            return Err(Error::Regime("monotone iteration needs lambda < lambda_1^-".into()));
        }
        let phi = &self.minus.phi;
        let mut m: f64 = 0.0;
        for (fi, pi) in f.values().iter().zip(phi.values()) {
            if *fi > 0.0 {
                m = m.max(fi / (gap * pi.abs()));
            }
        }
        let mut v = phi.scale(m * 1.01 + 1e-12);
        let sigma = (self.cfg.op.family().max_c() + self.op_lam.shift()).max(0.0) + 1.0;
        let proper = self.op_lam.with_shift(self.op_lam.shift() - sigma);
        let inner = SolveParams { tol: Some(1e-14), ..self.cfg.solve };
        for _ in 0..2000 {
            let rhs = f.axpy(-sigma, &v);
            let (w, rep) = solve(&proper, &rhs, &inner, Some(&v))?;
            if rep.status != SolveStatus::Converged {
                return Ok(None);
            }
            let diff = (&w - &v).sup_norm();
            v = w;
            if v.sup_norm() > self.cfg.solve.blowup_norm {
                return Ok(None);
            }
            if diff <= 1e-11 * (1.0 + v.sup_norm()) {
                break;
            }
        }
        let (u, rep) = solve(&self.op_lam, &f, &self.cfg.solve, Some(&v))?;
        if rep.converged() {
            Ok(Some((u, rep)))
        } else {
            Ok(None)
        }
    }

    /// Fold regime `lambda_1^+ < lambda < lambda_1^-`.
    pub fn trace_fold(&self) -> Result<FoldTrace> {
        if !(self.plus.lam < self.lam && self.lam < self.minus.lam) {
            return Err(Error::Regime(format!(
                "fold tracing needs lambda_1^+ < lambda < lambda_1^- (got {} < {} < {})",
                self.plus.lam, self.lam, self.minus.lam
            )));
        }
        let [tmin, tmax] = self.cfg.t_range;
        let step = (tmax - tmin) / (self.cfg.n_samples - 1) as f64;

        // non-existence probe from above
        let mut t_hi = tmax;
        let mut warm = match self.minimal_solution(tmax)? {
            Some((u, _)) => u,
            None => return Err(Error::FoldTrace(format!("no solution at t_max = {tmax}"))),
        };
        let mut t_lo = None;
        let mut t = tmax - step;
        while t >= tmin - 1e-12 {
            match self.fold_probe(t, &warm)? {
                Some(u) => {
                    t_hi = t;
                    warm = u;
                }
                None => {
                    t_lo = Some(t);
                    break;
                }
            }
            t -= step;
        }
        let Some(mut t_lo) = t_lo else {
            return Err(Error::FoldTrace(format!("solutions exist down to t_min = {tmin}; no fold in range")));
        };
        for _ in 0..40 {
            if t_hi - t_lo <= 1e-9 * (1.0 + step) {
                break;
            }
            let m = 0.5 * (t_lo + t_hi);
            match self.fold_probe(m, &warm)? {
                Some(u) => {
                    t_hi = m;
                    warm = u;
                }
                None => t_lo = m,
            }
        }

        // minimal branch
        let n = self.cfg.n_samples;
        let mut min_pts = Vec::new();
        for i in 0..n {
            let t = if i + 1 == n { tmax } else { t_hi + (tmax - t_hi) * i as f64 / (n - 1) as f64 };
            if let Some((u, rep)) = self.minimal_solution(t)? {
                min_pts.push(self.point(&self.op_lam, t, u, Some(rep))?);
            }
        }
        let minimal = self.finish("minimal", self.lam, min_pts);

        // second branch: battery at t_max, pick the solution farthest from the minimal one
        let umin_top = minimal
            .points
            .iter()
            .find(|p| p.t == tmax)
            .map(|p| p.u.clone())
            .ok_or_else(|| Error::FoldTrace("minimal branch missing at t_max".into()))?;
        let census = self.census_at(tmax)?;
        let sep = |u: &GridFunction| (u - &umin_top).sup_norm();
        let tol_sep = 10.0 * census.tol.max(1e-12) + 1e-8 * (1.0 + umin_top.sup_norm());
        let second_start = census
            .solutions
            .iter()
            .filter(|u| sep(u) > tol_sep)
            .max_by(|a, b| sep(a).total_cmp(&sep(b)))
            .cloned()
            .ok_or_else(|| Error::FoldTrace(format!("no second solution found at t_max = {tmax}")))?;

        let params = ArclengthParams::for_range(tmax - t_lo, n);
        let minimal_ref = &minimal;
        let merge_tol = 1e-6 * (1.0 + umin_top.sup_norm());
        let path = continue_branch(
            &self.op_lam,
            &self.plus.phi,
            &self.cfg.h,
            &second_start,
            tmax,
            -1.0,
            &params,
            |p| p.t > tmax + step || p.t < tmin,
        )?;
        let merged_with_minimal = |u: &GridFunction, t: f64| -> Result<bool> {
            if t < t_lo {
                return Ok(false);
            }
            Ok(match self.minimal_solution(t)? {
                Some((um, _)) => (u - &um).sup_norm() <= merge_tol.max(1e3 * (t - t_lo).abs()),
                None => false,
            })
        };
        let turned = path.turn.is_some();
        let end = path.points.last().expect("path starts with one point");
        let reached_fold = turned || merged_with_minimal(&end.u, end.t)?;
        if path.stalled && !reached_fold {
            return Err(Error::FoldTrace(format!(
                "continuation stalled at t = {} before reaching the fold (minimal branch has {} points)",
                end.t,
                minimal_ref.points.len()
            )));
        }
        let second_pts = path
            .points
            .iter()
            .map(|p| self.point(&self.op_lam, p.t, p.u.clone(), None))
            .collect::<Result<Vec<_>>>()?;
        let mut second = self.finish("second", self.lam, second_pts);
        let path_min = path.min_t();
        second.metrics.insert("min_t".into(), path_min);
        second.metrics.insert("turned".into(), if turned { 1.0 } else { 0.0 });
        second.metrics.insert("stalled".into(), if path.stalled { 1.0 } else { 0.0 });

        let hi = t_hi.min(path_min.max(t_lo + f64::EPSILON * (1.0 + t_lo.abs())));
        let hi = if hi > t_lo { hi } else { t_hi };
        let t_star = 0.5 * (t_lo + hi);
        let critical = CriticalReport {
            kind: CriticalKind::Fold,
            t_star,
            bracket: [t_lo, hi],
            blowup_evidence: Vec::new(),
            ladder: Vec::new(),
        };
        Ok(FoldTrace { minimal, second, critical, reached_fold, turned })
    }

    fn fold_probe(&self, t: f64, warm: &GridFunction) -> Result<Option<GridFunction>> {
        if let Some((u, _)) = self.minimal_solution(t)? {
            return Ok(Some(u));
        }
        self.solvable(self.lam, t, Some(warm))
    }

    /// Regime `lambda_1^- < lambda <= lambda_1^- + eps_cfg` with
    /// `eps_cfg = 0.05 |lambda_1^-|`.
    pub fn sweep_negative_regime(&self) -> Result<NegativeRegime> {
        let eps_cfg = 0.05 * self.minus.lam.abs();
        if !(self.lam > self.minus.lam && self.lam <= self.minus.lam + eps_cfg) {
            return Err(Error::Regime(format!(
                "negative regime needs lambda in ({}, {}], got {}",
                self.minus.lam,
                self.minus.lam + eps_cfg,
                self.lam
            )));
        }
        let mut points = Vec::new();
        let mut warm: Option<GridFunction> = None;
        for t in self.samples() {
            let u = match self.solvable(self.lam, t, warm.as_ref())? {
                Some(u) => u,
                None => {
                    return Err(Error::Regime(format!("no solution found at t = {t} with lambda = {}", self.lam)))
                }
            };
            warm = Some(u.clone());
            points.push(self.point(&self.op_lam, t, u, None)?);
        }
        let mut t_minus = None;
        for p in &points {
            if p.u.max() < 0.0 {
                t_minus = Some(p.t);
            } else {
                break;
            }
        }
        // scan further down if no sample is negative
        if t_minus.is_none() {
            let mut t = self.cfg.t_range[0];
            let mut w = warm.clone();
            for _ in 0..12 {
                t = if t < 0.0 { 2.0 * t } else { -1.0 - t };
                if let Some(u) = self.solvable(self.lam, t, w.as_ref())? {
                    if u.max() < 0.0 {
                        t_minus = Some(t);
                        break;
                    }
                    w = Some(u);
                }
            }
        }
        let mut antimaximum = Vec::new();
        for k in [0.5, 1.0, 2.0] {
            let f = self.plus.phi.scale(-k);
            let starts = self.start_battery(self.start_scale(&f, self.lam), k.to_bits());
            let c = self.census(self.lam, &f, &starts, f64::NAN)?;
            let worst = c.solutions.iter().map(|u| u.max()).fold(f64::NEG_INFINITY, f64::max);
            if c.solutions.is_empty() {
                return Err(Error::Regime(format!("antimaximum probe found no solution for k = {k}")));
            }
            antimaximum.push((k, worst));
        }
        let tmax = self.cfg.t_range[1];
        let mut growth = Vec::new();
        for t in [0.5 * tmax, tmax] {
            if let Some(u) = self.solvable(self.lam, t, warm.as_ref())? {
                growth.push((t, u.max()));
            }
        }
        let branch = self.finish("negative_regime", self.lam, points);
        Ok(NegativeRegime { branch, t_minus, antimaximum, growth })
    }

    /// Uniqueness probe for `lambda` above both principal eigenvalues within
    /// `d0 = (lambda_1^+(lower half) - lambda_1^+(full)) / 2`.
    pub fn uniqueness_probe_teo6(&self, n_rhs: usize, n_starts: usize) -> Result<UniquenessReport> {
        let mask = SubdomainMask::lower_half(self.cfg.op.grid())?;
        let (full, half) = subdomain_gap(&self.cfg.op, &mask, &self.cfg.eigen)?;
        let d0 = 0.5 * (half - full);
        let lam_plus = self.plus.lam - self.lam;
        let lam_minus = self.minus.lam - self.lam;
        if !(-d0 <= lam_plus && lam_plus <= lam_minus && lam_minus < 0.0) {
            return Err(Error::Regime(format!(
                "uniqueness probe needs -d0 <= lambda_1^+ <= lambda_1^- < 0 for F + lambda; got d0 = {d0}, ({lam_plus}, {lam_minus})"
            )));
        }
        let g = *self.cfg.op.grid();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut rhs: Vec<(String, GridFunction)> = vec![
            ("zero".into(), GridFunction::zeros(&g)),
            ("phi_plus_h".into(), self.rhs(1.0)),
            ("constant".into(), GridFunction::from_values(&g, vec![100.0; g.len()])?),
        ];
        for i in 0..n_rhs {
            let vals = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0) * 10.0).collect();
            rhs.push((format!("random_{i}"), GridFunction::from_values(&g, vals)?));
        }
        let mut cases = Vec::new();
        for (label, f) in rhs {
            let mut starts = self.start_battery(self.start_scale(&f, self.lam).max(1.0), label.len() as u64);
            starts.truncate(n_starts.max(1));
            while starts.len() < n_starts {
                let vals = (0..g.len()).map(|_| rng.gen_range(-10.0..10.0)).collect();
                starts.push(GridFunction::from_values(&g, vals)?);
            }
            let c = self.census(self.lam, &f, &starts, f64::NAN)?;
            let (min_u, max_u) = c.solutions.first().map(|u| (u.min(), u.max())).unwrap_or((f64::NAN, f64::NAN));
            cases.push(UniquenessCase {
                label,
                distinct: c.distinct(),
                converged: c.converged,
                attempts: c.attempts,
                max_agreement_gap: c.max_agreement_gap,
                tol: c.tol,
                min_u,
                max_u,
            });
        }
        Ok(UniquenessReport { d0, lam_plus, lam_minus, cases })
    }
}
