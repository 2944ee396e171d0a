//! Continuous relaxation of one branch-and-bound node, with certified lower
//! bounds.
//!
//! The node problem minimizes, over coefficients `beta` and indicators
//! `g in [0,1]`,
//!
//! ```text
//!   tr G  -  2 sum_a G[j_a,k_a] beta_a  +  sum_k beta_k' Q beta_k
//!         +  sum_a pen_a(beta_a, g_a)   +  lambda sum_a g_a
//! ```
//!
//! subject to `|beta_a| <= M g_a`, the node's arc fixings, and any cycle
//! inequalities `sum_{a in C} g_a <= |C| - 1`. `Q` is the PSD remainder of
//! the diagonal split; the split-off `delta_j beta^2` mass lives in `pen`,
//! which the mode turns into nothing (bigm), the conic term
//! `delta beta^2 / g` (persp), or its tangent outer approximation (perspcut).
//!
//! The solver eliminates each `g_a` in closed form (the penalty becomes a
//! one-dimensional convex function of `beta_a`), runs cyclic coordinate
//! descent with exact coordinate minimization, and prices cycle inequalities
//! by projected subgradient ascent on their multipliers. The certified bound
//! comes from a Fenchel inequality evaluated at the current point: it is a
//! valid lower bound for *any* iterate, by weak duality, never just the
//! primal objective — branch-and-bound prunes on it.

use std::io::Write as _;
use std::path::Path;

use crate::formulation::{Mode, ProblemSpec};
use crate::graphs::Cycle;
use crate::{Error, Result};

/// Branching state of one candidate arc.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArcState {
    Free,
    /// `g = 1`: the arc pays `lambda` unconditionally; `beta` stays boxed.
    PinnedOne,
    /// `g = 0`, `beta = 0`: the arc is removed from the problem.
    FixedZero,
}

/// A cycle inequality `sum over member arcs of g <= len - 1`, stored by arc
/// id. Valid at every node because it only excludes cyclic supports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleCut {
    pub arc_ids: Vec<usize>,
}

impl CycleCut {
    /// Canonical key for de-duplication (member set, sorted).
    pub fn key(&self) -> Vec<usize> {
        let mut k = self.arc_ids.clone();
        k.sort_unstable();
        k
    }
}

/// Translate a detected cycle into a cut over the problem's arc ids.
pub fn cut_from_cycle(spec: &ProblemSpec, cycle: &Cycle) -> Result<CycleCut> {
    let mut arc_ids = Vec::with_capacity(cycle.arcs.len());
    for &(j, k) in &cycle.arcs {
        let id = spec
            .arc_id(j, k)
            .ok_or_else(|| Error::InvalidGraph(format!("cycle arc ({j},{k}) is not a candidate")))?;
        arc_ids.push(id);
    }
    Ok(CycleCut { arc_ids })
}

/// A tangent plane `v >= 2 b beta - b^2 g` supporting the perspective term
/// of one arc, generated at `b = beta/g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerspCut {
    pub arc: usize,
    pub beta_bar: f64,
}

/// Everything that distinguishes one node's relaxation from the root's:
/// arc fixings plus the cut pools in force.
#[derive(Debug, Clone)]
pub struct NodeConstraints {
    /// Indexed by [`ProblemSpec`] arc id.
    pub states: Vec<ArcState>,
    pub cycle_cuts: Vec<CycleCut>,
    pub persp_cuts: Vec<PerspCut>,
}

impl NodeConstraints {
    pub fn root(spec: &ProblemSpec) -> Self {
        Self {
            states: vec![ArcState::Free; spec.num_arcs()],
            cycle_cuts: Vec::new(),
            persp_cuts: Vec::new(),
        }
    }
}

/// Resume state passed from a parent node: the parent's final coefficients
/// and cycle-cut multipliers. Warm-starting is a speed contract only; the
/// returned bounds are valid from any start.
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub beta: Vec<f64>,
    pub cut_multipliers: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct RelaxOptions {
    /// Relative convergence target: stop when the certified gap falls below
    /// `tol * (1 + |primal|)`.
    pub tol: f64,
    /// Coordinate-descent sweep budget per multiplier round; exhausting it
    /// without reaching a fixed point is a solver failure.
    pub max_sweeps: usize,
    /// Sweeps between certificate evaluations.
    pub cert_interval: usize,
    /// Projected-subgradient rounds for cycle-cut multipliers.
    pub ascent_rounds: usize,
}

impl Default for RelaxOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_sweeps: 50_000, cert_interval: 16, ascent_rounds: 60 }
    }
}

/// Free indicators within this distance of {0,1} count as integral.
pub const INT_TOL: f64 = 1e-6;

/// An arc's indicator must stay this far inside a violated cycle inequality
/// after primal repair.
const CUT_FEAS_TOL: f64 = 1e-9;

/// Solved node relaxation. `certified_lb` is the dual bound; `primal_value`
/// is the objective of the reported (feasible) point, so
/// `certified_lb <= primal_value` up to roundoff always holds.
#[derive(Debug, Clone)]
pub struct RelaxResult {
    pub beta: Vec<f64>,
    pub g: Vec<f64>,
    pub primal_value: f64,
    pub certified_lb: f64,
    /// All free indicators within [`INT_TOL`] of 0 or 1.
    pub integral: bool,
    /// Relative primal-dual gap of the returned pair; 0 means the point is
    /// provably optimal for this node.
    pub kkt_residual: f64,
    /// Coordinate-descent sweeps spent.
    pub sweeps: usize,
    /// Resume state for child nodes.
    pub warm: WarmStart,
    /// Certificate value at the final iterate: the base the fixing gains
    /// below are relative to (it may sit slightly under `certified_lb`,
    /// which keeps the best certificate over all multiplier rounds).
    pub fix_base: f64,
    /// Per arc, a valid bound on the node's optimum with that arc pinned is
    /// `fix_base + pin_gain[arc]`; nonzero only for free arcs.
    pub pin_gain: Vec<f64>,
    /// Likewise with the arc fixed to zero: `fix_base + zero_gain[arc]`.
    pub zero_gain: Vec<f64>,
}

/// Outcome of a node solve: a result, or proof that the fixings contradict
/// a cycle inequality (prune without bounds).
#[derive(Debug, Clone)]
pub enum RelaxOutcome {
    Solved(RelaxResult),
    Infeasible,
}

// ---------------------------------------------------------------------------
// Per-arc penalty: value, minimizing g, proximal step, and conjugate.
// ---------------------------------------------------------------------------

/// Piecewise-linear convex function on [0, M]: the upper envelope of the
/// tangent planes (plus the zero plane), used by perspcut mode. One envelope
/// per sign of beta, since cuts are one-sided.
#[derive(Debug, Clone, Default)]
struct PlEnv {
    /// (intercept, slope, lo, hi) pieces covering [0, M] in order.
    pieces: Vec<(f64, f64, f64, f64)>,
}

impl PlEnv {
    /// Upper envelope of `y = 0` and `y = intercept_i + slope_i x` on [0, m].
    fn build(lines: &[(f64, f64)], m: f64) -> Self {
        let mut all: Vec<(f64, f64)> = Vec::with_capacity(lines.len() + 1);
        all.push((0.0, 0.0));
        all.extend_from_slice(lines);
        // Sort by slope, then intercept; drop dominated duplicates.
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)));
        let mut hull: Vec<(f64, f64)> = Vec::new();
        for &(a, b) in &all {
            while let Some(&(pa, pb)) = hull.last() {
                if (b - pb).abs() < 1e-15 {
                    // Parallel: keep the higher intercept.
                    if a >= pa {
                        hull.pop();
                        continue;
                    }
                    break;
                }
                // Intersection of the new line with the last hull line.
                let x = (pa - a) / (b - pb);
                let prev_start = if hull.len() >= 2 {
                    let (qa, qb) = hull[hull.len() - 2];
                    (qa - pa) / (pb - qb)
                } else {
                    f64::NEG_INFINITY
                };
                if x <= prev_start {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push((a, b));
        }
        // Convert to pieces clipped to [0, m].
        let mut pieces = Vec::new();
        for (i, &(a, b)) in hull.iter().enumerate() {
            let lo = if i == 0 {
                f64::NEG_INFINITY
            } else {
                let (pa, pb) = hull[i - 1];
                (pa - a) / (b - pb)
            };
            let hi = if i + 1 < hull.len() {
                let (na, nb) = hull[i + 1];
                (na - a) / (b - nb)
            } else {
                f64::INFINITY
            };
            let lo = lo.max(0.0);
            let hi = hi.min(m);
            if hi > lo {
                pieces.push((a, b, lo, hi));
            }
        }
        if pieces.is_empty() {
            pieces.push((0.0, 0.0, 0.0, m));
        }
        Self { pieces }
    }

    fn value(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        for &(a, b, _lo, hi) in &self.pieces {
            if x <= hi {
                return (a + b * x).max(0.0);
            }
        }
        let &(a, b, _, _) = self.pieces.last().unwrap();
        (a + b * x).max(0.0)
    }

    /// The epigraph value `max(0, max over hull lines of (b x + a g))` for a
    /// scaled copy of the envelope. Tangents are homogeneous in `g`, so every
    /// hull line (not just the piece containing `x`) must be scanned when
    /// `g != 1`. All tangent lines of one sign survive hull construction
    /// (each touches the parabola at a distinct point), so the pieces carry
    /// the complete line set.
    fn scaled_value(&self, x: f64, g: f64) -> f64 {
        debug_assert!(x >= 0.0);
        let mut v = 0.0f64;
        for &(a, b, _, _) in &self.pieces {
            v = v.max(b * x + a * g);
        }
        v
    }

    /// x-values worth scanning: piece endpoints.
    fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.pieces.iter().flat_map(|&(_, _, lo, hi)| [lo, hi])
    }
}

/// Mode- and state-independent per-arc data for one solve.
#[derive(Debug, Clone)]
struct ArcPen {
    mode: Mode,
    /// Split-off diagonal weight of the parent node, `delta_j`.
    d: f64,
    big_m: f64,
    /// Tangent envelopes for perspcut (beta >= 0 and beta <= 0 sides).
    env_pos: PlEnv,
    env_neg: PlEnv,
    /// Per-round cache for perspcut: minimizer and minimum of
    /// `(kappa + d phi(sigma)) / sigma` over (0, M], per side.
    pc_pos: (f64, f64),
    pc_neg: (f64, f64),
}

impl ArcPen {
    fn new(spec: &ProblemSpec, arc: usize, cuts: &[PerspCut]) -> Self {
        let (j, _k) = spec.arcs[arc];
        let m = spec.big_m;
        let (env_pos, env_neg) = if spec.mode == Mode::Perspcut {
            let pos: Vec<(f64, f64)> =
                cuts.iter().map(|c| (-c.beta_bar * c.beta_bar, 2.0 * c.beta_bar)).collect();
            let neg: Vec<(f64, f64)> =
                cuts.iter().map(|c| (-c.beta_bar * c.beta_bar, -2.0 * c.beta_bar)).collect();
            (PlEnv::build(&pos, m), PlEnv::build(&neg, m))
        } else {
            (PlEnv::default(), PlEnv::default())
        };
        Self {
            mode: spec.mode,
            d: spec.delta[j],
            big_m: m,
            env_pos,
            env_neg,
            pc_pos: (m, 0.0),
            pc_neg: (m, 0.0),
        }
    }

    /// Refresh the perspcut ratio caches for a new `kappa`.
    fn refresh(&mut self, kappa: f64) {
        if self.mode != Mode::Perspcut {
            return;
        }
        let scan = |env: &PlEnv, d: f64| -> (f64, f64) {
            let mut best = (self.big_m, f64::INFINITY);
            for x in env.breakpoints() {
                if x <= 0.0 {
                    continue;
                }
                let r = (kappa + d * env.value(x)) / x;
                if r < best.1 {
                    best = (x, r);
                }
            }
            if !best.1.is_finite() {
                best = (self.big_m, (kappa + d * env.value(self.big_m)) / self.big_m);
            }
            best
        };
        self.pc_pos = scan(&self.env_pos, self.d);
        self.pc_neg = scan(&self.env_neg, self.d);
    }

    /// The mode's base conic surrogate `phi` at a (signed) coefficient,
    /// with `g = 1`. bigm: 0; persp: beta^2; perspcut: envelope value.
    fn phi(&self, beta: f64) -> f64 {
        match self.mode {
            Mode::Bigm => 0.0,
            Mode::Persp => beta * beta,
            Mode::Perspcut => {
                if beta >= 0.0 {
                    self.env_pos.value(beta)
                } else {
                    self.env_neg.value(-beta)
                }
            }
        }
    }

    /// Penalty of a free arc after eliminating `g`:
    /// `min over g in [|beta|/M, 1] of kappa g + d * conic(beta, g)`.
    fn value_free(&self, kappa: f64, beta: f64) -> f64 {
        let b = beta.abs();
        if b == 0.0 {
            return 0.0;
        }
        match self.mode {
            Mode::Bigm => kappa * b / self.big_m,
            Mode::Persp => {
                if self.d <= 0.0 {
                    return kappa * b / self.big_m;
                }
                let rho_star = (kappa / self.d).sqrt();
                if rho_star >= self.big_m {
                    (kappa / self.big_m + self.d * self.big_m) * b
                } else if b >= rho_star {
                    kappa + self.d * b * b
                } else {
                    2.0 * (kappa * self.d).sqrt() * b
                }
            }
            Mode::Perspcut => {
                let (sigma, r) = if beta >= 0.0 { self.pc_pos } else { self.pc_neg };
                if b <= sigma {
                    r * b
                } else {
                    kappa + self.d * self.phi(beta)
                }
            }
        }
    }

    /// The `g` achieving [`Self::value_free`].
    fn g_free(&self, kappa: f64, beta: f64) -> f64 {
        let b = beta.abs();
        if b == 0.0 {
            return 0.0;
        }
        let floor = b / self.big_m;
        let g = match self.mode {
            Mode::Bigm => floor,
            Mode::Persp => {
                if self.d <= 0.0 {
                    floor
                } else if kappa <= 0.0 {
                    1.0
                } else {
                    b * (self.d / kappa).sqrt()
                }
            }
            Mode::Perspcut => {
                let (sigma, _) = if beta >= 0.0 { self.pc_pos } else { self.pc_neg };
                if sigma > 0.0 {
                    b / sigma
                } else {
                    1.0
                }
            }
        };
        g.max(floor).min(1.0)
    }

    /// Penalty of a pinned arc (`g = 1`): the conic surrogate only; the
    /// constant `lambda` is accounted separately.
    fn value_pinned(&self, beta: f64) -> f64 {
        self.d * self.phi(beta)
    }

    /// Exact minimizer of `A beta^2 + B beta + pen(beta)` over
    /// `|beta| <= M`, for a free arc. Convexity makes a candidate scan
    /// (piece endpoints plus per-piece stationary points) exact.
    fn prox_free(&self, kappa: f64, a: f64, b: f64) -> f64 {
        let m = self.big_m;
        let mut best_v = f64::INFINITY;
        let mut best_x = 0.0f64;
        let mut consider = |c: f64| {
            if c.is_finite() {
                let x = c.clamp(-m, m);
                let v = a * x * x + b * x + self.value_free(kappa, x);
                if v < best_v {
                    best_v = v;
                    best_x = x;
                }
            }
        };
        consider(0.0);
        consider(m);
        consider(-m);
        let quad = |slope: f64| if a > 0.0 { (-b - slope) / (2.0 * a) } else { f64::NAN };
        match self.mode {
            Mode::Bigm => {
                let s = kappa / m;
                consider(quad(s));
                consider(quad(-s));
            }
            Mode::Persp => {
                if self.d <= 0.0 {
                    let s = kappa / m;
                    consider(quad(s));
                    consider(quad(-s));
                } else {
                    let rho_star = (kappa / self.d).sqrt().min(m);
                    let s_lin = if rho_star >= m {
                        kappa / m + self.d * m
                    } else {
                        2.0 * (kappa * self.d).sqrt()
                    };
                    consider(quad(s_lin));
                    consider(quad(-s_lin));
                    consider(rho_star);
                    consider(-rho_star);
                    if a + self.d > 0.0 {
                        consider(-b / (2.0 * (a + self.d)));
                    }
                }
            }
            Mode::Perspcut => {
                // On the x >= 0 side the penalty slope is +(rate); on the
                // x <= 0 side it is -(rate); `quad` wants the signed slope.
                for (&(sigma, r), sign) in [(&self.pc_pos, 1.0), (&self.pc_neg, -1.0)] {
                    consider(quad(sign * r));
                    consider(sign * sigma);
                    let env = if sign > 0.0 { &self.env_pos } else { &self.env_neg };
                    for &(_, slope, lo, hi) in &env.pieces {
                        consider(quad(sign * self.d * slope));
                        consider(sign * lo);
                        consider(sign * hi);
                    }
                }
            }
        }
        best_x
    }

    /// Exact minimizer of `A beta^2 + B beta + d phi(beta)` over
    /// `|beta| <= M`, for a pinned arc.
    fn prox_pinned(&self, a: f64, b: f64) -> f64 {
        let m = self.big_m;
        let mut best_v = f64::INFINITY;
        let mut best_x = 0.0f64;
        let mut consider = |c: f64| {
            if c.is_finite() {
                let x = c.clamp(-m, m);
                let v = a * x * x + b * x + self.value_pinned(x);
                if v < best_v {
                    best_v = v;
                    best_x = x;
                }
            }
        };
        consider(0.0);
        consider(m);
        consider(-m);
        match self.mode {
            Mode::Bigm => {
                if a > 0.0 {
                    consider(-b / (2.0 * a));
                }
            }
            Mode::Persp => {
                if a + self.d > 0.0 {
                    consider(-b / (2.0 * (a + self.d)));
                }
            }
            Mode::Perspcut => {
                for sign in [1.0f64, -1.0] {
                    let env = if sign > 0.0 { &self.env_pos } else { &self.env_neg };
                    for &(_, slope, lo, hi) in &env.pieces {
                        if a > 0.0 {
                            consider(sign * ((-sign * b) - self.d * slope) / (2.0 * a));
                        }
                        consider(sign * lo);
                        consider(sign * hi);
                    }
                }
            }
        }
        best_x
    }

    /// `sup over |rho| <= M of (c rho - kappa - d phi(rho))`, the conjugate
    /// of the scaled penalty generator; the free-arc conjugate is its
    /// positive part (g may retreat to 0).
    fn s_of(&self, kappa: f64, c: f64) -> f64 {
        let m = self.big_m;
        match self.mode {
            Mode::Bigm => m * c.abs() - kappa,
            Mode::Persp => {
                if self.d <= 0.0 {
                    m * c.abs() - kappa
                } else {
                    let rho = (c / (2.0 * self.d)).clamp(-m, m);
                    c * rho - kappa - self.d * rho * rho
                }
            }
            Mode::Perspcut => {
                let mut best = -kappa; // rho = 0
                for x in self.env_pos.breakpoints().chain([m]) {
                    best = best.max(c * x - kappa - self.d * self.env_pos.value(x));
                }
                for x in self.env_neg.breakpoints().chain([m]) {
                    best = best.max(-c * x - kappa - self.d * self.env_neg.value(x));
                }
                best
            }
        }
    }

    fn conj_free(&self, kappa: f64, c: f64) -> f64 {
        self.s_of(kappa, c).max(0.0)
    }

    fn conj_pinned(&self, c: f64) -> f64 {
        self.s_of(0.0, c)
    }
}

// ---------------------------------------------------------------------------
// Node solver.
// ---------------------------------------------------------------------------

/// One target column restricted to the node's active (free or pinned) arcs.
struct Col {
    /// Global arc ids, parallel with the local indexing.
    arc_ids: Vec<usize>,
    /// `Q` restricted to the parent rows, row-major `p x p`.
    q: Vec<f64>,
    /// `G[parent, target]` per local index.
    c: Vec<f64>,
    /// Maintained `q * beta_local`.
    s: Vec<f64>,
}

struct Solver<'a> {
    spec: &'a ProblemSpec,
    node: &'a NodeConstraints,
    cols: Vec<Col>,
    pens: Vec<ArcPen>,
    beta: Vec<f64>,
    kappa: Vec<f64>,
    /// Cycle-cut multipliers and the node-adjusted right-hand sides.
    u: Vec<f64>,
    rhs: Vec<f64>,
    /// Free member arc ids per cut.
    cut_free: Vec<Vec<usize>>,
    sweeps: usize,
}

impl<'a> Solver<'a> {
    fn new(spec: &'a ProblemSpec, node: &'a NodeConstraints, warm: Option<&WarmStart>) -> Self {
        let na = spec.num_arcs();
        assert_eq!(node.states.len(), na, "node state vector must cover every candidate arc");
        let mut cols = Vec::new();
        for block in &spec.targets {
            let mut arc_ids = Vec::new();
            let mut rows = Vec::new();
            for (i, &aid) in block.arc_ids.iter().enumerate() {
                if node.states[aid] != ArcState::FixedZero {
                    arc_ids.push(aid);
                    rows.push(block.parents[i]);
                }
            }
            if arc_ids.is_empty() {
                continue;
            }
            let p = arc_ids.len();
            let mut q = vec![0.0; p * p];
            let mut c = vec![0.0; p];
            for (ri, &r) in rows.iter().enumerate() {
                c[ri] = spec.gram.gram[[r, block.target]];
                for (ci, &cc) in rows.iter().enumerate() {
                    q[ri * p + ci] = spec.q_tilde[[r, cc]];
                }
            }
            cols.push(Col { arc_ids, q, c, s: vec![0.0; p] });
        }

        // Per-arc penalty machinery, with the perspcut tangents in force.
        let mut cuts_by_arc: Vec<Vec<PerspCut>> = vec![Vec::new(); na];
        for pc in &node.persp_cuts {
            cuts_by_arc[pc.arc].push(*pc);
        }
        let pens: Vec<ArcPen> =
            (0..na).map(|a| ArcPen::new(spec, a, &cuts_by_arc[a])).collect();

        // Warm-started coefficients (zeroed where the state forbids them).
        let mut beta = vec![0.0; na];
        if let Some(w) = warm {
            if w.beta.len() == na {
                beta.copy_from_slice(&w.beta);
            }
        }
        for a in 0..na {
            if node.states[a] == ArcState::FixedZero {
                beta[a] = 0.0;
            } else {
                beta[a] = beta[a].clamp(-spec.big_m, spec.big_m);
            }
        }

        // Cut bookkeeping: fold pinned members into the right-hand side.
        let ncut = node.cycle_cuts.len();
        let mut u = vec![0.0; ncut];
        if let Some(w) = warm {
            for (i, &v) in w.cut_multipliers.iter().take(ncut).enumerate() {
                u[i] = v.max(0.0);
            }
       }
        let mut rhs = Vec::with_capacity(ncut);
        let mut cut_free = Vec::with_capacity(ncut);
        for cut in &node.cycle_cuts {
            let mut r = cut.arc_ids.len() as f64 - 1.0;
            let mut free = Vec::new();
            for &a in &cut.arc_ids {
                match node.states[a] {
                    ArcState::PinnedOne => r -= 1.0,
                    ArcState::Free => free.push(a),
                    ArcState::FixedZero => {}
                }
            }
            rhs.push(r);
            cut_free.push(free);
        }

        let mut solver = Self {
            spec,
            node,
            cols,
            pens,
            beta,
            kappa: vec![spec.penalty.lambda; na],
            u,
            rhs,
            cut_free,
            sweeps: 0,
        };
        solver.refresh_kappa();
        solver.refresh_s();
        solver
    }

    fn refresh_s(&mut self) {
        for col in &mut self.cols {
            let p = col.arc_ids.len();
            for i in 0..p {
                let mut acc = 0.0;
                for j in 0..p {
                    acc += col.q[i * p + j] * self.beta[col.arc_ids[j]];
                }
                col.s[i] = acc;
            }
        }
    }

    /// Recompute `kappa = lambda + sum of multipliers of cuts containing the
    /// arc`, and refresh the perspcut ratio caches that depend on it.
    fn refresh_kappa(&mut self) {
        let lambda = self.spec.penalty.lambda;
        self.kappa.iter_mut().for_each(|k| *k = lambda);
        for (ci, free) in self.cut_free.iter().enumerate() {
            for &a in free {
                self.kappa[a] += self.u[ci];
            }
        }
        for a in 0..self.pens.len() {
            if self.node.states[a] == ArcState::Free {
                let k = self.kappa[a];
                self.pens[a].refresh(k);
            } else if self.spec.mode == Mode::Perspcut {
                self.pens[a].refresh(0.0);
            }
        }
    }

    /// Constant part of the Lagrangian: `tr G + lambda #pinned - u . rhs`.
    fn const_term(&self) -> f64 {
        let pinned =
            self.node.states.iter().filter(|&&s| s == ArcState::PinnedOne).count() as f64;
        let mut v = self.spec.gram.trace() + self.spec.penalty.lambda * pinned;
        for (ci, &ui) in self.u.iter().enumerate() {
            v -= ui * self.rhs[ci];
        }
        v
    }

    /// One cyclic coordinate-descent sweep; returns the largest coefficient
    /// change.
    fn sweep(&mut self) -> f64 {
        let mut max_delta = 0.0f64;
        for ci in 0..self.cols.len() {
            let p = self.cols[ci].arc_ids.len();
            for i in 0..p {
                let aid = self.cols[ci].arc_ids[i];
                let col = &self.cols[ci];
                let a = col.q[i * p + i];
                let b = 2.0 * (col.s[i] - a * self.beta[aid]) - 2.0 * col.c[i];
                let new = match self.node.states[aid] {
                    ArcState::Free => self.pens[aid].prox_free(self.kappa[aid], a, b),
                    ArcState::PinnedOne => self.pens[aid].prox_pinned(a, b),
                    ArcState::FixedZero => unreachable!("inactive arcs are not in columns"),
                };
                let delta = new - self.beta[aid];
                if delta != 0.0 {
                    let col = &mut self.cols[ci];
                    for j in 0..p {
                        col.s[j] += col.q[j * p + i] * delta;
                    }
                    self.beta[aid] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
        }
        self.sweeps += 1;
        max_delta
    }

    /// Lagrangian objective at the current point (inner objective being
    /// minimized by coordinate descent).
    fn lagrangian_value(&self) -> f64 {
        let mut v = self.const_term();
        for col in &self.cols {
            for (i, &aid) in col.arc_ids.iter().enumerate() {
                v += self.beta[aid] * col.s[i] - 2.0 * col.c[i] * self.beta[aid];
            }
        }
        for (a, &b) in self.beta.iter().enumerate() {
            match self.node.states[a] {
                ArcState::Free => v += self.pens[a].value_free(self.kappa[a], b),
                ArcState::PinnedOne => v += self.pens[a].value_pinned(b),
                ArcState::FixedZero => {}
            }
        }
        v
    }

    /// Fenchel certificate at the current point: a valid lower bound on the
    /// node's optimum for any iterate and any nonnegative multipliers.
    fn certificate(&self) -> f64 {
        let mut lb = self.const_term();
        for col in &self.cols {
            for (i, &aid) in col.arc_ids.iter().enumerate() {
                lb -= self.beta[aid] * col.s[i];
                let c = 2.0 * col.c[i] - 2.0 * col.s[i];
                lb -= match self.node.states[aid] {
                    ArcState::Free => self.pens[aid].conj_free(self.kappa[aid], c),
                    ArcState::PinnedOne => self.pens[aid].conj_pinned(c),
                    ArcState::FixedZero => unreachable!(),
                };
            }
        }
        lb
    }

    /// The certificate together with, per free arc, how much the bound
    /// rises if that arc is pinned / fixed to zero — at this same iterate
    /// and these same multipliers, so `base + gain` is a valid bound for
    /// the correspondingly restricted subproblem. Both gains fall out of
    /// the conjugate's additive `kappa` dependence: with
    /// `s0 = sup(c rho - d phi(rho))`, a free arc contributes
    /// `-max(0, s0 - kappa)`, a pinned arc `kappa - s0` (its `lambda` and
    /// released multipliers net against the constant terms), and a
    /// zero-fixed arc nothing.
    fn certificate_with_gains(&self) -> (f64, Vec<f64>, Vec<f64>) {
        let na = self.spec.num_arcs();
        let mut pin_gain = vec![0.0; na];
        let mut zero_gain = vec![0.0; na];
        let mut lb = self.const_term();
        for col in &self.cols {
            for (i, &aid) in col.arc_ids.iter().enumerate() {
                lb -= self.beta[aid] * col.s[i];
                let c = 2.0 * col.c[i] - 2.0 * col.s[i];
                match self.node.states[aid] {
                    ArcState::Free => {
                        let s0 = self.pens[aid].conj_pinned(c);
                        let kappa = self.kappa[aid];
                        lb -= (s0 - kappa).max(0.0);
                        pin_gain[aid] = (kappa - s0).max(0.0);
                        zero_gain[aid] = (s0 - kappa).max(0.0);
                    }
                    ArcState::PinnedOne => lb -= self.pens[aid].conj_pinned(c),
                    ArcState::FixedZero => unreachable!(),
                }
            }
        }
        (lb, pin_gain, zero_gain)
    }

    /// Minimizing indicators at the current coefficients.
    fn indicators(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.spec.num_arcs()];
        for (a, &b) in self.beta.iter().enumerate() {
            g[a] = match self.node.states[a] {
                ArcState::Free => self.pens[a].g_free(self.kappa[a], b),
                ArcState::PinnedOne => 1.0,
                ArcState::FixedZero => 0.0,
            };
        }
        g
    }

    /// True node objective (multiplier-free) of an explicit point; feasible
    /// inputs only (box and fixings respected).
    fn true_objective(&self, beta: &[f64], g: &[f64]) -> f64 {
        let lambda = self.spec.penalty.lambda;
        let mut v = self.spec.gram.trace();
        for col in &self.cols {
            let p = col.arc_ids.len();
            for i in 0..p {
                let bi = beta[col.arc_ids[i]];
                v -= 2.0 * col.c[i] * bi;
                for j in 0..p {
                    v += bi * col.q[i * p + j] * beta[col.arc_ids[j]];
                }
            }
        }
        for (a, pen) in self.pens.iter().enumerate() {
            let b = beta[a];
            match self.node.states[a] {
                ArcState::FixedZero => {}
                ArcState::PinnedOne => v += lambda + pen.value_pinned(b),
                ArcState::Free => {
                    v += lambda * g[a];
                    v += pen.d
                        * match self.spec.mode {
                            Mode::Bigm => 0.0,
                            Mode::Persp => {
                                if g[a] > 0.0 {
                                    b * b / g[a]
                                } else {
                                    0.0
                                }
                            }
                            Mode::Perspcut => {
                                if b >= 0.0 {
                                    pen.env_pos.scaled_value(b, g[a])
                                } else {
                                    pen.env_neg.scaled_value(-b, g[a])
                                }
                            }
                        };
                }
            }
        }
        v
    }

    /// Make the point satisfy every cycle inequality by zeroing the weakest
    /// member coefficients of violated cuts. Returns the (possibly modified)
    /// point; the true objective of the result is a valid primal value.
    fn repaired_point(&self) -> (Vec<f64>, Vec<f64>) {
        let mut beta = self.beta.clone();
        let mut g = self.indicators();
        for (ci, free) in self.cut_free.iter().enumerate() {
            let mut total: f64 = free.iter().map(|&a| g[a]).sum();
            if total <= self.rhs[ci] + CUT_FEAS_TOL {
                continue;
            }
            let mut members: Vec<usize> = free.clone();
            members.sort_by(|&x, &y| beta[x].abs().total_cmp(&beta[y].abs()));
            for &a in &members {
                if total <= self.rhs[ci] + CUT_FEAS_TOL {
                    break;
                }
                total -= g[a];
                beta[a] = 0.0;
                g[a] = 0.0;
            }
        }
        (beta, g)
    }
}

/// Exact true objective for perspcut at an explicit `(beta, g)` pair needs
/// the epigraph value `max(0, max_i(2 bbar beta - bbar^2 g))`; the solver
/// keeps that logic inline. This free function exposes the violation test
/// used for delayed tangent generation.
///
/// Returns a new tangent at `beta_val / g_val` (clamped to the box) when
/// the current epigraph value `v_val` undershoots it by more than `1e-7`.
pub fn separate_perspective_cut(
    arc: usize,
    beta_val: f64,
    g_val: f64,
    v_val: f64,
    big_m: f64,
) -> Option<PerspCut> {
    if g_val <= 1e-12 {
        return None;
    }
    let beta_bar = (beta_val / g_val).clamp(-big_m, big_m);
    let demanded = 2.0 * beta_bar * beta_val - beta_bar * beta_bar * g_val;
    if demanded > v_val + 1e-7 {
        Some(PerspCut { arc, beta_bar })
    } else {
        None
    }
}

/// Most-violated cycle inequality at the indicator point `g`, or `None`
/// when every directed cycle of the non-fixed arcs satisfies
/// `sum g_a <= |C| - 1`. Under arc weights `1 - g_a` a cycle violates its
/// inequality exactly when its total weight drops below 1, so the
/// minimum-weight directed cycle — found by all-pairs shortest paths plus
/// one closing arc — is a complete separation oracle. Weights are floored
/// at a tiny positive value so shortest paths stay simple even where `g`
/// sits exactly at 1.
pub fn separate_cycle_cut(
    spec: &ProblemSpec,
    states: &[ArcState],
    g: &[f64],
) -> Option<CycleCut> {
    let m = spec.num_nodes();
    const WEIGHT_FLOOR: f64 = 1e-12;
    const VIOLATION_MARGIN: f64 = 1e-7;
    let inf = f64::INFINITY;
    let mut dist = vec![inf; m * m];
    let mut step = vec![usize::MAX; m * m];
    let mut weight = vec![inf; spec.num_arcs()];
    for (a, &(j, k)) in spec.arcs.iter().enumerate() {
        if states[a] == ArcState::FixedZero {
            continue;
        }
        let w = (1.0 - g[a]).max(WEIGHT_FLOOR);
        weight[a] = w;
        if w < dist[j * m + k] {
            dist[j * m + k] = w;
            step[j * m + k] = k;
        }
    }
    for mid in 0..m {
        for j in 0..m {
            let dj = dist[j * m + mid];
            if !dj.is_finite() {
                continue;
            }
            for k in 0..m {
                let through = dj + dist[mid * m + k];
                if through < dist[j * m + k] {
                    dist[j * m + k] = through;
                    step[j * m + k] = step[j * m + mid];
                }
            }
        }
    }
    let mut best: Option<(f64, usize)> = None;
    for (a, &(j, k)) in spec.arcs.iter().enumerate() {
        let back = dist[k * m + j];
        if !weight[a].is_finite() || !back.is_finite() {
            continue;
        }
        let total = weight[a] + back;
        if best.map_or(true, |(w, _)| total < w) {
            best = Some((total, a));
        }
    }
    let (total, close) = best?;
    if total >= 1.0 - VIOLATION_MARGIN {
        return None;
    }
    // Walk the stored next-hops from the closing arc's head back to its tail.
    let (tail, head) = spec.arcs[close];
    let mut arc_ids = vec![close];
    let mut at = head;
    while at != tail {
        let next = step[at * m + tail];
        debug_assert!(next != usize::MAX, "broken shortest-path chain");
        arc_ids.push(spec.arc_id(at, next).expect("path uses candidate arcs"));
        at = next;
    }
    arc_ids.sort_unstable();
    arc_ids.dedup();
    Some(CycleCut { arc_ids })
}

/// Inner convergence: a sweep is a fixed point when no coefficient moved
/// more than this (relative to the coefficient scale).
const FIXED_POINT_TOL: f64 = 1e-13;

/// Solve one node's relaxation. Returns `Infeasible` when the fixings alone
/// violate a cycle inequality. `Err(RelaxStalled)` means coordinate descent
/// exhausted its sweep budget without reaching a fixed point; the error
/// carries the best certified bound found, which is still valid.
pub fn solve_relaxation(
    spec: &ProblemSpec,
    node: &NodeConstraints,
    warm: Option<&WarmStart>,
    opts: &RelaxOptions,
) -> Result<RelaxOutcome> {
    let mut solver = Solver::new(spec, node, warm);

    // Fixings contradicting a cut: even all-zero free indicators violate it.
    if solver.rhs.iter().any(|&r| r < 0.0) {
        return Ok(RelaxOutcome::Infeasible);
    }

    let has_free = node.states.iter().any(|&s| s == ArcState::Free);
    let rounds = if solver.u.is_empty() || !has_free {
        // Without free indicators the multipliers' optimum is 0 (the
        // right-hand sides are nonnegative), so one exact inner solve does it.
        solver.u.iter_mut().for_each(|v| *v = 0.0);
        solver.refresh_kappa();
        1
    } else {
        opts.ascent_rounds.max(1)
    };

    let mut best_dual = f64::NEG_INFINITY;
    let mut best_u = solver.u.clone();
    let mut best_primal = f64::INFINITY;
    let mut best_point: Option<(Vec<f64>, Vec<f64>)> = None;
    // Bound from STALL_WINDOW rounds back, for the stagnation exit below.
    const STALL_WINDOW: usize = 8;
    let mut stall_ref = f64::NEG_INFINITY;

    for round in 0..rounds {
        // Inner loop: coordinate descent to a fixed point or a certified gap.
        let mut converged = false;
        let mut sweeps_this_round = 0usize;
        loop {
            let max_delta = solver.sweep();
            sweeps_this_round += 1;
            let scale = 1.0 + solver.beta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let fixed_point = max_delta <= FIXED_POINT_TOL * scale;
            if fixed_point || sweeps_this_round % opts.cert_interval == 0 {
                let primal = solver.lagrangian_value();
                let dual = solver.certificate();
                if dual > best_dual {
                    best_dual = dual;
                    best_u = solver.u.clone();
                }
                if fixed_point || primal - dual <= opts.tol * (1.0 + primal.abs()) {
                    converged = true;
                    break;
                }
            }
            if sweeps_this_round >= opts.max_sweeps {
                break;
            }
        }
        if !converged {
            return Err(Error::RelaxStalled { best_lb: best_dual });
        }

        // Feasible primal value at this round's point.
        let (rb, rg) = solver.repaired_point();
        let val = solver.true_objective(&rb, &rg);
        if val < best_primal {
            best_primal = val;
            best_point = Some((rb, rg));
        }

        if round + 1 == rounds {
            break;
        }
        // Multiplier step: projected subgradient with a Polyak-style size.
        let g = solver.indicators();
        let viol: Vec<f64> = solver
            .cut_free
            .iter()
            .enumerate()
            .map(|(ci, free)| free.iter().map(|&a| g[a]).sum::<f64>() - solver.rhs[ci])
            .collect();
        let max_viol = viol.iter().fold(0.0f64, |m, v| m.max(*v));
        let active = viol.iter().zip(&solver.u).any(|(&v, &u)| v > 1e-9 || (u > 0.0 && v < -1e-9));
        if max_viol <= 1e-9 && !active {
            break;
        }
        if best_primal - best_dual <= opts.tol * (1.0 + best_primal.abs()) {
            break;
        }
        // Stagnation exit: when a window of steps closes almost none of the
        // remaining gap, further ascent is not worth the sweeps.
        if (round + 1) % STALL_WINDOW == 0 {
            if best_dual - stall_ref <= 0.02 * (best_primal - best_dual).max(0.0) {
                break;
            }
            stall_ref = best_dual;
        }
        let norm2: f64 = viol.iter().map(|v| v * v).sum();
        if norm2 <= 1e-30 {
            break;
        }
        let gap = (best_primal - best_dual).max(opts.tol * (1.0 + best_primal.abs()));
        let step = 0.7 * gap / norm2;
        for (ci, v) in viol.iter().enumerate() {
            solver.u[ci] = (solver.u[ci] + step * v).max(0.0);
        }
        solver.refresh_kappa();
    }

    let (beta, g) = best_point.unwrap_or_else(|| solver.repaired_point());
    // Guard against roundoff ordering: the certificate must never sit above
    // the feasible value it accompanies.
    let certified_lb = best_dual.min(best_primal);
    let integral = node
        .states
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == ArcState::Free)
        .all(|(a, _)| g[a] <= INT_TOL || (1.0 - g[a]).abs() <= INT_TOL);
    let kkt_residual = (best_primal - certified_lb) / (1.0 + best_primal.abs());
    let (fix_base, pin_gain, zero_gain) = solver.certificate_with_gains();
    let fix_base = fix_base.min(best_primal);
    Ok(RelaxOutcome::Solved(RelaxResult {
        beta,
        g,
        primal_value: best_primal,
        certified_lb,
        integral,
        kkt_residual,
        sweeps: solver.sweeps,
        warm: WarmStart { beta: solver.beta.clone(), cut_multipliers: best_u },
        fix_base,
        pin_gain,
        zero_gain,
    }))
}

/// Write a plain-text description of the node's model (objective blocks,
/// arc states, cuts) for debugging.
pub fn dump_model(spec: &ProblemSpec, node: &NodeConstraints, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "nodes {}  samples {}  arcs {}", spec.num_nodes(), spec.num_samples(), spec.num_arcs())?;
    writeln!(
        f,
        "mode {:?}  lambda {}  mu {}  big_m {}",
        spec.mode, spec.penalty.lambda, spec.penalty.mu, spec.big_m
    )?;
    writeln!(f, "delta {:?}", spec.delta.to_vec())?;
    for (a, &(j, k)) in spec.arcs.iter().enumerate() {
        writeln!(f, "arc {a}: {j} -> {k}  state {:?}", node.states[a])?;
    }
    for (i, cut) in node.cycle_cuts.iter().enumerate() {
        writeln!(f, "cycle cut {i}: sum g over {:?} <= {}", cut.arc_ids, cut.arc_ids.len() - 1)?;
    }
    for pc in &node.persp_cuts {
        writeln!(f, "tangent on arc {}: v >= 2*{b}*beta - {b}^2 g", pc.arc, b = pc.beta_bar)?;
    }
    Ok(())
}
