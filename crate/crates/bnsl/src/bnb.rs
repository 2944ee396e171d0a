//! Best-first branch-and-bound over arc indicators.
//!
//! Each open node fixes a subset of candidate arcs in (`g = 1`) or out
//! (`g = 0`) and leaves the rest free. Popping a node solves its continuous
//! relaxation for a certified lower bound, then either prunes, separates a
//! violated constraint (acyclicity cut or perspective tangent), records an
//! incumbent, or branches on a fractional indicator. The heap is keyed by
//! the parent's certified bound with FIFO tie-breaking, so the reported
//! global lower bound — the smallest key among open nodes — never
//! decreases.
//!
//! Acyclicity is enforced lazily: integral points are checked for directed
//! cycles, and each new cycle adds a permanently valid inequality
//! `sum of g over the cycle <= length - 1` shared by every node. The
//! layered encoding additionally discards children whose pinned arcs
//! already close a cycle; difference constraints on layer variables are
//! implied by those two mechanisms and add no bound strength, so they are
//! not materialized.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::formulation::{Encoding, Mode, ProblemSpec};
use crate::graphs::{find_cycle, DirectedGraph};
use crate::relax::{
    cut_from_cycle, separate_cycle_cut, separate_perspective_cut, solve_relaxation, ArcState,
    CycleCut, NodeConstraints, PerspCut, RelaxOptions, RelaxOutcome, RelaxResult, WarmStart,
    INT_TOL,
};
use crate::score::{self, LocalScoreCache};
use crate::{Error, Result};

/// Termination rules. Gaps compare the incumbent value `ub` against the
/// certified bound `lb`; zero gaps mean "run to proven optimality".
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StopRule {
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub time_limit: Option<f64>,
    pub node_limit: Option<usize>,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { abs_gap: 0.0, rel_gap: 0.0, time_limit: None, node_limit: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    GapReached,
    TimeLimit,
    NodeLimit,
    SolverFailure,
    /// Produced by the exact reference engines, never by the search itself.
    Exact,
}

/// A feasible network: sorted `(parent, child, coefficient)` triples and
/// the exact objective value of that solution.
#[derive(Debug, Clone)]
pub struct Incumbent {
    pub arcs: Vec<(usize, usize, f64)>,
    pub value: f64,
    /// Some coefficient sits within `1e-4 * M` of the box bound (or was
    /// clamped onto it), so the box may be truncating the true optimum.
    pub big_m_binding: bool,
}

#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub stop: StopRule,
    pub threads: usize,
    /// Force single-threaded search (bit-reproducible regardless of the
    /// thread pool); with the batch-synchronous parallel mode the search
    /// is deterministic anyway, this is the belt-and-suspenders switch.
    pub deterministic: bool,
    /// Seconds between progress lines through `log::info`; 0 disables.
    pub log_interval: f64,
    pub record_trajectory: bool,
    pub relax: RelaxOptions,
    /// Re-queue visits a single node may trigger before the search
    /// branches instead of waiting on further cuts.
    pub max_cut_rounds_per_node: usize,
    /// Cut-separation rounds per node visit: each round adds the most
    /// violated cycle inequality (all modes) and fresh tangents (perspcut
    /// mode), then re-solves warm.
    pub max_separation_rounds: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            stop: StopRule::default(),
            threads: 1,
            deterministic: false,
            log_interval: 0.0,
            record_trajectory: false,
            relax: RelaxOptions::default(),
            max_cut_rounds_per_node: 50,
            max_separation_rounds: 200,
        }
    }
}

/// The solver-relevant scalars echoed into every report.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub mode: Mode,
    pub encoding: Encoding,
    pub lambda: f64,
    pub mu: f64,
    pub big_m: f64,
    pub delta_total: f64,
    pub abs_gap: f64,
    pub rel_gap: f64,
    pub time_limit: Option<f64>,
    pub node_limit: Option<usize>,
    pub threads: usize,
    pub relax_tol: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TracePoint {
    pub t: f64,
    pub lb: f64,
    pub ub: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub status: Status,
    pub ub: f64,
    pub lb: f64,
    pub gap: f64,
    pub rgap: f64,
    pub nodes_explored: usize,
    pub cuts_added: usize,
    pub relaxations: usize,
    pub wall_seconds: f64,
    /// Certified bound of the first root relaxation, before any cuts.
    pub root_lb: f64,
    pub big_m_binding: bool,
    /// The incumbent network: `(parent, child, coefficient)`.
    pub arcs: Vec<(usize, usize, f64)>,
    pub config: ConfigEcho,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<TracePoint>>,
}

/// Early-stopping gap for a problem with `m` nodes, `n` samples and a
/// super-structure of `super_edges` edges: `super_edges * ln(m) / n`.
/// Terminating once `ub - lb` falls below this threshold keeps the
/// statistical risk of the returned network within the same order as the
/// exact optimum's.
pub fn early_stop_threshold(m: usize, n: usize, super_edges: usize) -> f64 {
    assert!(m >= 1 && n >= 1);
    super_edges as f64 * (m as f64).ln() / n as f64
}

// ---------------------------------------------------------------------------
// Open-node bookkeeping.
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct OpenNode {
    states: Vec<ArcState>,
    warm: Option<Arc<WarmStart>>,
    /// Cycle-cut re-queues consumed by this node.
    cut_rounds: usize,
    /// Tolerance-tightening re-queues consumed by this node.
    tighten_rounds: usize,
    /// Per-node override of the relaxation tolerance.
    tol: Option<f64>,
}

struct Entry {
    bound: f64,
    seq: u64,
    node: OpenNode,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    /// `BinaryHeap` is a max-heap; invert so the smallest bound pops first.
    /// Ties pop newest first: children inherit their parent's bound, so this
    /// dives before it sweeps, reaching incumbents and fixable subtrees
    /// sooner without giving up best-first ordering.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(self.seq.cmp(&other.seq))
    }
}

/// Outcome of probing both restrictions of one arc: the branching choice,
/// with a certified bound and resume state per child.
struct BranchPlan {
    arc: usize,
    /// Bound and warm start for the child fixing the arc to zero.
    zero: (f64, WarmStart),
    /// Likewise for the child pinning the arc.
    pin: (f64, WarmStart),
}

enum ProcessOut {
    /// The node holds no improving solution: contradictory fixings, or every
    /// completion was priced at or above the incumbent. `node_lb` is the
    /// certified bound on what the subtree could still contain (infinite
    /// when the subtree is empty outright).
    Infeasible { node_lb: f64, relax_calls: usize },
    Failed(String),
    Solved {
        res: RelaxResult,
        /// Certified bound of the node's first solve, before any cuts,
        /// fixings, or probes of this visit.
        first_lb: f64,
        /// Best certified bound across the node's separation rounds.
        node_lb: f64,
        /// Arc states after reduced-cost fixing; supersedes the states the
        /// node was popped with.
        states: Vec<ArcState>,
        new_persp: Vec<PerspCut>,
        new_cycles: Vec<CycleCut>,
        relax_calls: usize,
        /// False when the round budget ran out with cuts still separating;
        /// the node then deserves another visit before any branching.
        saturated: bool,
        /// Probe-selected branching arc for fractional saturated nodes.
        branch: Option<BranchPlan>,
    },
}

/// Fractional arcs probed per branching decision.
const PROBE_CANDIDATES: usize = 8;

/// Solve one node against a snapshot of the cut pools: relaxation, stall
/// retry, then rounds of reduced-cost fixing against the incumbent `ub`
/// plus cut separation (cycle inequalities in every mode, tangents in
/// perspcut mode). Pure with respect to shared state, so batches can run
/// in parallel.
fn process(
    spec: &ProblemSpec,
    node: &OpenNode,
    cycle_pool: &[CycleCut],
    persp_pool: &[PerspCut],
    base: &RelaxOptions,
    max_separation_rounds: usize,
    ub: f64,
) -> ProcessOut {
    let mut constraints = NodeConstraints {
        states: node.states.clone(),
        cycle_cuts: cycle_pool.to_vec(),
        persp_cuts: persp_pool.to_vec(),
    };
    let mut opts = *base;
    if let Some(t) = node.tol {
        opts.tol = t;
    }
    let mut relax_calls = 0usize;
    let solve_once = |constraints: &NodeConstraints, warm: Option<&WarmStart>,
                          relax_calls: &mut usize|
     -> std::result::Result<RelaxOutcome, String> {
        *relax_calls += 1;
        match solve_relaxation(spec, constraints, warm, &opts) {
            Ok(out) => Ok(out),
            Err(Error::RelaxStalled { .. }) => {
                // One retry with a four-fold sweep budget before giving up.
                let mut retry = opts;
                retry.max_sweeps = opts.max_sweeps.saturating_mul(4);
                *relax_calls += 1;
                match solve_relaxation(spec, constraints, warm, &retry) {
                    Ok(out) => Ok(out),
                    Err(e) => Err(e.to_string()),
                }
            }
            Err(e) => Err(e.to_string()),
        }
    };

    let warm_ref: Option<&WarmStart> = node.warm.as_deref();
    let mut res = match solve_once(&constraints, warm_ref, &mut relax_calls) {
        Ok(RelaxOutcome::Solved(r)) => r,
        Ok(RelaxOutcome::Infeasible) => {
            return ProcessOut::Infeasible { node_lb: f64::INFINITY, relax_calls }
        }
        Err(msg) => return ProcessOut::Failed(msg),
    };
    let first_lb = res.certified_lb;
    let mut node_lb = res.certified_lb;
    let mut new_persp: Vec<PerspCut> = Vec::new();
    let mut new_cycles: Vec<CycleCut> = Vec::new();
    let mut saturated = false;

    let eps = 1e-9 * (1.0 + ub.abs());
    let mut branch: Option<BranchPlan> = None;
    let mut round = 0usize;
    // Invariant on every exit: `res` was solved under the current
    // `constraints`, so indicators, coefficients, and states agree.
    loop {
        let mut added = 0usize;
        // Reduced-cost fixing: the certificate prices each free arc's two
        // restrictions, and a restriction already priced at or above the
        // incumbent can be committed for the whole subtree.
        if ub.is_finite() {
            let mut pinned_any = false;
            for a in 0..spec.num_arcs() {
                if constraints.states[a] != ArcState::Free {
                    continue;
                }
                if res.fix_base + res.pin_gain[a] >= ub - eps {
                    constraints.states[a] = ArcState::FixedZero;
                    added += 1;
                } else if res.fix_base + res.zero_gain[a] >= ub - eps {
                    constraints.states[a] = ArcState::PinnedOne;
                    pinned_any = true;
                    added += 1;
                    // A DAG holding this arc cannot hold its reverse.
                    let (j, k) = spec.arcs[a];
                    if let Some(rev) = spec.arc_id(k, j) {
                        if constraints.states[rev] == ArcState::Free {
                            constraints.states[rev] = ArcState::FixedZero;
                            added += 1;
                        }
                    }
                }
            }
            if pinned_any && pinned_cycle(spec, &constraints.states) {
                return ProcessOut::Infeasible {
                    node_lb: node_lb.max(ub - eps),
                    relax_calls,
                };
            }
        }
        if spec.mode == Mode::Perspcut {
            for (a, &state) in constraints.states.iter().enumerate() {
                if state == ArcState::FixedZero {
                    continue;
                }
                let b = res.beta[a];
                let g = res.g[a];
                let current = constraints
                    .persp_cuts
                    .iter()
                    .filter(|c| c.arc == a)
                    .map(|c| 2.0 * c.beta_bar * b - c.beta_bar * c.beta_bar * g)
                    .fold(0.0f64, f64::max);
                if let Some(cut) = separate_perspective_cut(a, b, g, current, spec.big_m) {
                    let dup = constraints
                        .persp_cuts
                        .iter()
                        .any(|c| c.arc == a && (c.beta_bar - cut.beta_bar).abs() <= 1e-9);
                    if !dup {
                        constraints.persp_cuts.push(cut);
                        new_persp.push(cut);
                        added += 1;
                    }
                }
            }
        }
        // Cycle inequalities separate against the repaired point, which
        // already satisfies every cut the solve priced, so a violated cycle
        // found here is genuinely new to this node.
        if let Some(cut) = separate_cycle_cut(spec, &constraints.states, &res.g) {
            let key = cut.key();
            if !constraints.cycle_cuts.iter().any(|c| c.key() == key) {
                constraints.cycle_cuts.push(cut.clone());
                new_cycles.push(cut);
                added += 1;
            }
        }
        if added == 0 {
            saturated = true;
            if res.integral {
                break;
            }
            // Strong branching: probe both restrictions of the most
            // ambivalent arcs with a short warm-started solve. A probe at or
            // above the incumbent kills that side outright; otherwise the
            // probed bounds rank candidates and seed the children.
            let mut cands: Vec<usize> = (0..spec.num_arcs())
                .filter(|&a| constraints.states[a] == ArcState::Free)
                .filter(|&a| res.g[a] > INT_TOL && (1.0 - res.g[a]).abs() > INT_TOL)
                .collect();
            cands.sort_by(|&x, &y| {
                let fx = (res.g[x] - 0.5).abs();
                let fy = (res.g[y] - 0.5).abs();
                fx.total_cmp(&fy).then(spec.arcs[x].cmp(&spec.arcs[y]))
            });
            cands.truncate(PROBE_CANDIDATES);
            let light = RelaxOptions { ascent_rounds: 6, ..opts };
            let base = res.certified_lb;
            let tiny = 1e-9 * (1.0 + base.abs());
            let mut fixed_any = false;
            let mut pruned_out = false;
            let mut best: Option<(f64, BranchPlan)> = None;
            for &a in &cands {
                if constraints.states[a] != ArcState::Free {
                    continue;
                }
                let probe = |state: ArcState,
                             relax_calls: &mut usize|
                 -> Option<(f64, WarmStart)> {
                    let mut child = constraints.clone();
                    child.states[a] = state;
                    if state == ArcState::PinnedOne {
                        let (j, k) = spec.arcs[a];
                        if let Some(rev) = spec.arc_id(k, j) {
                            if child.states[rev] == ArcState::Free {
                                child.states[rev] = ArcState::FixedZero;
                            }
                        }
                        if pinned_cycle(spec, &child.states) {
                            return None;
                        }
                    }
                    *relax_calls += 1;
                    match solve_relaxation(spec, &child, Some(&res.warm), &light) {
                        Ok(RelaxOutcome::Solved(r)) => Some((r.certified_lb, r.warm)),
                        Ok(RelaxOutcome::Infeasible) => None,
                        // A stalled probe still certified this much.
                        Err(Error::RelaxStalled { best_lb }) => {
                            Some((best_lb, res.warm.clone()))
                        }
                        Err(_) => Some((f64::NEG_INFINITY, res.warm.clone())),
                    }
                };
                let zero = probe(ArcState::FixedZero, &mut relax_calls);
                let pin = probe(ArcState::PinnedOne, &mut relax_calls);
                let zero_dead = zero.as_ref().map_or(true, |z| z.0 >= ub - eps);
                let pin_dead = pin.as_ref().map_or(true, |p| p.0 >= ub - eps);
                match (zero_dead, pin_dead) {
                    (true, true) => {
                        // Both restrictions priced out: the node itself is
                        // certified at the incumbent and the caller prunes.
                        let zb = zero.map_or(f64::INFINITY, |z| z.0);
                        let pb = pin.map_or(f64::INFINITY, |p| p.0);
                        node_lb = node_lb.max(zb.min(pb));
                        pruned_out = true;
                        break;
                    }
                    (true, false) => {
                        let (pb, _) = pin.unwrap();
                        constraints.states[a] = ArcState::PinnedOne;
                        let (j, k) = spec.arcs[a];
                        if let Some(rev) = spec.arc_id(k, j) {
                            if constraints.states[rev] == ArcState::Free {
                                constraints.states[rev] = ArcState::FixedZero;
                            }
                        }
                        node_lb = node_lb.max(pb.min(ub - eps));
                        fixed_any = true;
                    }
                    (false, true) => {
                        let (zb, _) = zero.unwrap();
                        constraints.states[a] = ArcState::FixedZero;
                        node_lb = node_lb.max(zb.min(ub - eps));
                        fixed_any = true;
                    }
                    (false, false) => {
                        let (zb, zw) = zero.unwrap();
                        let (pb, pw) = pin.unwrap();
                        node_lb = node_lb.max(zb.min(pb));
                        let score = (zb - base).max(tiny) * (pb - base).max(tiny);
                        if best.as_ref().map_or(true, |&(s, _)| score > s) {
                            best = Some((
                                score,
                                BranchPlan { arc: a, zero: (zb, zw), pin: (pb, pw) },
                            ));
                        }
                    }
                }
            }
            if pruned_out {
                // The caller's bound check closes the node; `res` may be
                // stale but is never consulted past that check.
                break;
            }
            if !fixed_any {
                branch = best.map(|(_, plan)| plan);
                break;
            }
            // Probe commits changed the node; fall through to a resolve so
            // the exit invariant holds, then separate again.
            saturated = false;
        }
        res = match solve_once(&constraints, Some(&res.warm), &mut relax_calls) {
            Ok(RelaxOutcome::Solved(r)) => r,
            Ok(RelaxOutcome::Infeasible) => {
                return ProcessOut::Infeasible { node_lb: node_lb.max(ub - eps), relax_calls }
            }
            Err(msg) => return ProcessOut::Failed(msg),
        };
        node_lb = node_lb.max(res.certified_lb);
        round += 1;
        if round >= max_separation_rounds {
            break;
        }
    }
    node_lb = node_lb.max(res.certified_lb);
    ProcessOut::Solved {
        res,
        first_lb,
        node_lb,
        states: constraints.states,
        new_persp,
        new_cycles,
        relax_calls,
        saturated,
        branch,
    }
}

// ---------------------------------------------------------------------------
// Incumbent construction.
// ---------------------------------------------------------------------------

/// Refit a fixed support by per-column least squares, clamp into the box,
/// and price the result exactly. Always returns a feasible solution (the
/// caller guarantees acyclicity).
fn evaluate_incumbent(
    spec: &ProblemSpec,
    cache: &LocalScoreCache,
    support: &[(usize, usize)],
) -> Incumbent {
    let m = spec.num_nodes();
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); m];
    for &(j, k) in support {
        parents[k].push(j);
    }
    let mut arcs: Vec<(usize, usize, f64)> = Vec::with_capacity(support.len());
    let mut binding = false;
    let near = spec.big_m * (1.0 - 1e-4);
    for k in 0..m {
        if parents[k].is_empty() {
            continue;
        }
        parents[k].sort_unstable();
        let fit = cache.fit(&spec.gram, k, &parents[k]);
        for (i, &j) in parents[k].iter().enumerate() {
            let raw = fit.beta[i];
            let clamped = raw.clamp(-spec.big_m, spec.big_m);
            if clamped.abs() >= near {
                binding = true;
            }
            arcs.push((j, k, clamped));
        }
    }
    arcs.sort_unstable_by_key(|&(j, k, _)| (j, k));
    let pairs: Vec<(usize, usize)> = arcs.iter().map(|&(j, k, _)| (j, k)).collect();
    let betas: Vec<f64> = arcs.iter().map(|&(_, _, b)| b).collect();
    let value = score::score(&spec.gram, &pairs, &betas, &spec.penalty);
    Incumbent { arcs, value, big_m_binding: binding }
}

/// Penalized local score of one target: residual sum of squares of the
/// ridge refit plus the per-arc penalty. The total score of a DAG is the
/// sum of these over targets.
fn local_score(spec: &ProblemSpec, cache: &LocalScoreCache, k: usize, parents: &[usize]) -> f64 {
    if parents.is_empty() {
        spec.gram.gram[[k, k]]
    } else {
        cache.fit(&spec.gram, k, parents).rss + spec.penalty.lambda * parents.len() as f64
    }
}

/// Whether the graph given by child bitmasks has a directed path.
fn has_path(children: &[u64], from: usize, to: usize) -> bool {
    let mut seen: u64 = 1 << from;
    let mut frontier: u64 = seen;
    while frontier != 0 {
        let mut next: u64 = 0;
        let mut f = frontier;
        while f != 0 {
            let v = f.trailing_zeros() as usize;
            f &= f - 1;
            next |= children[v];
        }
        next &= !seen;
        if next & (1u64 << to) != 0 {
            return true;
        }
        seen |= next;
        frontier = next;
    }
    false
}

/// Steepest-descent local search over DAGs inside the candidate arc set:
/// repeatedly apply the best of all single-arc additions, deletions, and
/// reversals until none improves the penalized score. `parents` holds
/// sorted parent lists and is rewritten in place.
fn hill_climb(spec: &ProblemSpec, cache: &LocalScoreCache, parents: &mut [Vec<usize>]) {
    let m = spec.num_nodes();
    let mut children: Vec<u64> = vec![0; m];
    for (k, ps) in parents.iter().enumerate() {
        for &j in ps {
            children[j] |= 1 << k;
        }
    }
    let mut local: Vec<f64> =
        (0..m).map(|k| local_score(spec, cache, k, &parents[k])).collect();

    let without = |ps: &[usize], j: usize| -> Vec<usize> {
        ps.iter().copied().filter(|&p| p != j).collect()
    };
    let with = |ps: &[usize], j: usize| -> Vec<usize> {
        let mut out = ps.to_vec();
        let pos = out.binary_search(&j).unwrap_err();
        out.insert(pos, j);
        out
    };

    // Each accepted move strictly lowers the score over a finite lattice,
    // so this terminates; the cap only guards against roundoff loops.
    for _ in 0..10 * spec.num_arcs().max(4) {
        let tol = 1e-9 * (1.0 + local.iter().sum::<f64>().abs());
        // (delta, kind, j, k): kind 0 deletes j->k, 1 adds j->k, 2 reverses
        // j->k into k->j. First strict minimum in arc order wins.
        let mut best: Option<(f64, u8, usize, usize)> = None;
        let mut consider = |cand: (f64, u8, usize, usize)| {
            if cand.0 < -tol && best.map_or(true, |b| cand.0 < b.0) {
                best = Some(cand);
            }
        };
        for &(j, k) in &spec.arcs {
            if parents[k].binary_search(&j).is_ok() {
                let del = local_score(spec, cache, k, &without(&parents[k], j)) - local[k];
                consider((del, 0, j, k));
                if spec.arc_index.contains_key(&(k, j)) {
                    // Legal when the only j-to-k path is the arc itself.
                    let mut masked = children.clone();
                    masked[j] &= !(1u64 << k);
                    if !has_path(&masked, j, k) {
                        let add =
                            local_score(spec, cache, j, &with(&parents[j], k)) - local[j];
                        consider((del + add, 2, j, k));
                    }
                }
            } else if !has_path(&children, k, j) {
                let add = local_score(spec, cache, k, &with(&parents[k], j)) - local[k];
                consider((add, 1, j, k));
            }
        }
        let Some((_, kind, j, k)) = best else { break };
        match kind {
            0 | 2 => {
                parents[k] = without(&parents[k], j);
                children[j] &= !(1u64 << k);
                local[k] = local_score(spec, cache, k, &parents[k]);
                if kind == 2 {
                    parents[j] = with(&parents[j], k);
                    children[k] |= 1u64 << j;
                    local[j] = local_score(spec, cache, j, &parents[j]);
                }
            }
            _ => {
                parents[k] = with(&parents[k], j);
                children[j] |= 1u64 << k;
                local[k] = local_score(spec, cache, k, &parents[k]);
            }
        }
    }
}

/// Round relaxation coefficients to a DAG support: keep arcs with a clearly
/// nonzero coefficient, then break every directed cycle by deleting its
/// weakest member. Returns the surviving arcs sorted.
fn round_to_dag(spec: &ProblemSpec, beta: &[f64]) -> Vec<(usize, usize)> {
    let thresh = 1e-3 * spec.big_m;
    let mut chosen: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (a, &(j, k)) in spec.arcs.iter().enumerate() {
        if beta[a].abs() > thresh {
            chosen.insert((j, k), beta[a]);
        }
    }
    let mut dag = DirectedGraph::new(spec.num_nodes());
    for &(j, k) in chosen.keys() {
        dag.add_arc(j, k).expect("candidate arcs form a simple digraph");
    }
    while let Some(cycle) = find_cycle(&dag) {
        let &victim = cycle
            .arcs
            .iter()
            .min_by(|x, y| {
                chosen[*x].abs().total_cmp(&chosen[*y].abs()).then(x.cmp(y))
            })
            .expect("cycles are nonempty");
        chosen.remove(&victim);
        dag.remove_arc(victim.0, victim.1);
    }
    chosen.into_keys().collect()
}

/// Rounding heuristic: round the relaxation point to a DAG support, polish
/// it by local search, refit, and keep the result when it beats the current
/// incumbent.
pub fn primal_heuristic(
    spec: &ProblemSpec,
    beta: &[f64],
    cache: &LocalScoreCache,
    current_ub: f64,
) -> Option<Incumbent> {
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); spec.num_nodes()];
    for (j, k) in round_to_dag(spec, beta) {
        parents[k].push(j);
    }
    parents.iter_mut().for_each(|ps| ps.sort_unstable());
    hill_climb(spec, cache, &mut parents);
    let mut support: Vec<(usize, usize)> = parents
        .iter()
        .enumerate()
        .flat_map(|(k, ps)| ps.iter().map(move |&j| (j, k)))
        .collect();
    support.sort_unstable();
    let inc = evaluate_incumbent(spec, cache, &support);
    (inc.value < current_ub).then_some(inc)
}

// ---------------------------------------------------------------------------
// The search.
// ---------------------------------------------------------------------------

pub fn solve(spec: &ProblemSpec, config: &SolveConfig) -> Result<SolveReport> {
    let m = spec.num_nodes();
    if m > 64 {
        return Err(Error::InvalidConfig(format!(
            "search supports at most 64 nodes, got {m}"
        )));
    }
    let t0 = Instant::now();
    let threads = if config.deterministic { 1 } else { config.threads.max(1) };
    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let cache = LocalScoreCache::new(spec.penalty.mu);
    let na = spec.num_arcs();

    let mut incumbent = evaluate_incumbent(spec, &cache, &[]);
    let mut ub = incumbent.value;
    // Local search from the empty graph seeds a strong incumbent before the
    // first relaxation, which arms pruning and reduced-cost fixing early.
    if let Some(better) = primal_heuristic(spec, &vec![0.0; na], &cache, ub) {
        ub = better.value;
        incumbent = better;
    }
    let mut lb = f64::NEG_INFINITY;
    let mut root_lb = f64::NEG_INFINITY;

    let mut heap: BinaryHeap<Entry> = BinaryHeap::new();
    heap.push(Entry {
        bound: f64::NEG_INFINITY,
        seq: 0,
        node: OpenNode {
            states: vec![ArcState::Free; na],
            warm: None,
            cut_rounds: 0,
            tighten_rounds: 0,
            tol: None,
        },
    });
    let mut next_seq = 1u64;

    let mut cycle_pool: Vec<CycleCut> = Vec::new();
    let mut cycle_keys: HashSet<Vec<usize>> = HashSet::new();
    let mut persp_pool: Vec<PerspCut> = Vec::new();

    let mut nodes_explored = 0usize;
    let mut cuts_added = 0usize;
    let mut relaxations = 0usize;
    let mut trajectory: Option<Vec<TracePoint>> = config.record_trajectory.then(Vec::new);
    let mut last_log = t0;
    let status;

    macro_rules! trace {
        () => {
            if let Some(tr) = trajectory.as_mut() {
                let point = TracePoint { t: t0.elapsed().as_secs_f64(), lb, ub };
                if tr.last().map_or(true, |p| p.lb != point.lb || p.ub != point.ub) {
                    tr.push(point);
                }
            }
        };
    }

    'search: loop {
        let elapsed = t0.elapsed().as_secs_f64();
        if let Some(tl) = config.stop.time_limit {
            if elapsed >= tl {
                status = Status::TimeLimit;
                break;
            }
        }
        if let Some(nl) = config.stop.node_limit {
            if nodes_explored >= nl {
                status = Status::NodeLimit;
                break;
            }
        }
        if lb.is_finite() {
            let gap = ub - lb;
            if gap <= 1e-12 * (1.0 + ub.abs()) {
                status = Status::Optimal;
                break;
            }
            if gap <= config.stop.abs_gap || gap / ub.abs().max(1e-300) <= config.stop.rel_gap {
                status = Status::GapReached;
                break;
            }
        }
        if config.log_interval > 0.0 && last_log.elapsed().as_secs_f64() >= config.log_interval
        {
            log::info!(
                "t={elapsed:.2} lb={lb:.6} ub={ub:.6} gap={:.3e} open={}",
                ub - lb,
                heap.len()
            );
            last_log = Instant::now();
        }

        // Collect a batch of non-prunable nodes.
        let prune_eps = 1e-9 * (1.0 + ub.abs());
        let mut batch: Vec<Entry> = Vec::new();
        while batch.len() < threads.max(1) {
            let Some(entry) = heap.pop() else { break };
            if entry.bound >= ub - prune_eps {
                continue;
            }
            batch.push(entry);
        }
        if batch.is_empty() {
            status = Status::Optimal;
            lb = ub;
            break;
        }
        if batch[0].bound.is_finite() {
            lb = lb.max(batch[0].bound);
        }
        trace!();

        // Solve the batch against a snapshot of the cut pools and incumbent.
        let cp: &[CycleCut] = &cycle_pool;
        let pp: &[PerspCut] = &persp_pool;
        let ub_snap = ub;
        let run = |entry: &Entry| {
            process(spec, &entry.node, cp, pp, &config.relax, config.max_separation_rounds, ub_snap)
        };
        let outs: Vec<ProcessOut> = match &pool {
            Some(p) => p.install(|| batch.par_iter().map(run).collect()),
            None => batch.iter().map(run).collect(),
        };
        nodes_explored += batch.len();

        // Apply results sequentially, in pop order.
        for (entry, out) in batch.into_iter().zip(outs) {
            match out {
                ProcessOut::Infeasible { node_lb, relax_calls } => {
                    relaxations += relax_calls;
                    if !root_lb.is_finite() {
                        root_lb = node_lb;
                    }
                }
                ProcessOut::Failed(msg) => {
                    log::error!("node relaxation failed: {msg}");
                    status = Status::SolverFailure;
                    break 'search;
                }
                ProcessOut::Solved {
                    res,
                    first_lb,
                    node_lb,
                    states,
                    new_persp,
                    new_cycles,
                    relax_calls,
                    saturated,
                    branch,
                } => {
                    relaxations += relax_calls;
                    // Fixing may have narrowed the node; branch from the
                    // narrowed states, not the ones it was popped with.
                    let node = OpenNode { states, ..entry.node };
                    for pc in new_persp {
                        let dup = persp_pool
                            .iter()
                            .any(|c| c.arc == pc.arc && (c.beta_bar - pc.beta_bar).abs() <= 1e-9);
                        if !dup {
                            persp_pool.push(pc);
                            cuts_added += 1;
                        }
                    }
                    for cut in new_cycles {
                        if cycle_keys.insert(cut.key()) {
                            cycle_pool.push(cut);
                            cuts_added += 1;
                        }
                    }
                    if !root_lb.is_finite() {
                        root_lb = first_lb;
                    }
                    if let Some(better) = primal_heuristic(spec, &res.beta, &cache, ub) {
                        ub = better.value;
                        incumbent = better;
                        trace!();
                    }
                    let prune_eps = 1e-9 * (1.0 + ub.abs());
                    if node_lb >= ub - prune_eps {
                        continue;
                    }

                    if !saturated && node.cut_rounds < config.max_cut_rounds_per_node {
                        // Separation ran out of rounds mid-stream; come back
                        // to this node before committing to a branch.
                        heap.push(Entry {
                            bound: node_lb,
                            seq: next_seq,
                            node: OpenNode {
                                states: node.states,
                                warm: Some(Arc::new(res.warm)),
                                cut_rounds: node.cut_rounds + 1,
                                tighten_rounds: node.tighten_rounds,
                                tol: node.tol,
                            },
                        });
                        next_seq += 1;
                        continue;
                    }

                    if res.integral {
                        let support: Vec<(usize, usize)> = spec
                            .arcs
                            .iter()
                            .enumerate()
                            .filter(|&(a, _)| match node.states[a] {
                                ArcState::PinnedOne => true,
                                ArcState::Free => res.g[a] >= 1.0 - INT_TOL,
                                ArcState::FixedZero => false,
                            })
                            .map(|(_, &jk)| jk)
                            .collect();
                        let dag = DirectedGraph::from_arcs(m, &support)
                            .expect("candidate arcs form a simple digraph");
                        if let Some(cycle) = find_cycle(&dag) {
                            let cut = cut_from_cycle(spec, &cycle)?;
                            let is_new = cycle_keys.insert(cut.key());
                            if is_new {
                                cycle_pool.push(cut.clone());
                                cuts_added += 1;
                            }
                            if is_new && node.cut_rounds < config.max_cut_rounds_per_node
                            {
                                heap.push(Entry {
                                    bound: node_lb,
                                    seq: next_seq,
                                    node: OpenNode {
                                        states: node.states,
                                        warm: Some(Arc::new(res.warm)),
                                        cut_rounds: node.cut_rounds + 1,
                                        tighten_rounds: node.tighten_rounds,
                                        tol: node.tol,
                                    },
                                });
                                next_seq += 1;
                            } else {
                                // The pool already had this cut (or the node
                                // exhausted its re-queues): split on the
                                // smallest free arc of the offending cycle.
                                let branch_arc = cut
                                    .arc_ids
                                    .iter()
                                    .copied()
                                    .filter(|&a| node.states[a] == ArcState::Free)
                                    .min_by_key(|&a| spec.arcs[a]);
                                match branch_arc {
                                    Some(a) => {
                                        push_children(
                                            spec,
                                            &mut heap,
                                            &mut next_seq,
                                            &node,
                                            a,
                                            node_lb,
                                            Arc::new(res.warm),
                                        );
                                    }
                                    None => {
                                        // Every member is pinned; with the
                                        // cut now pooled the re-solve proves
                                        // infeasibility.
                                        heap.push(Entry {
                                            bound: node_lb,
                                            seq: next_seq,
                                            node: OpenNode {
                                                states: node.states,
                                                warm: Some(Arc::new(res.warm)),
                                                cut_rounds: node.cut_rounds,
                                                tighten_rounds: node.tighten_rounds,
                                                tol: node.tol,
                                            },
                                        });
                                        next_seq += 1;
                                    }
                                }
                            }
                        } else {
                            // Integral and acyclic: candidate incumbents are
                            // the exact refit and the relaxation point itself.
                            let refit = evaluate_incumbent(spec, &cache, &support);
                            let betas: Vec<f64> = support
                                .iter()
                                .map(|&(j, k)| res.beta[spec.arc_id(j, k).unwrap()])
                                .collect();
                            let point_value =
                                score::score(&spec.gram, &support, &betas, &spec.penalty);
                            let (best_val, best_inc) = if refit.value <= point_value {
                                (refit.value, refit)
                            } else {
                                let arcs = support
                                    .iter()
                                    .zip(&betas)
                                    .map(|(&(j, k), &b)| (j, k, b))
                                    .collect();
                                let binding = betas
                                    .iter()
                                    .any(|b| b.abs() >= spec.big_m * (1.0 - 1e-4));
                                (
                                    point_value,
                                    Incumbent {
                                        arcs,
                                        value: point_value,
                                        big_m_binding: binding,
                                    },
                                )
                            };
                            if best_val < ub {
                                ub = best_val;
                                incumbent = best_inc;
                                trace!();
                            }
                            let close_eps = 1e-9 * (1.0 + best_val.abs());
                            if node_lb >= best_val - close_eps {
                                // Subtree solved: the bound meets the value.
                            } else if node.tighten_rounds < 3 {
                                // The relaxation tolerance may be hiding a
                                // better structure; re-queue tighter.
                                let cur = node.tol.unwrap_or(config.relax.tol);
                                let tighter = (cur / 100.0).max(1e-11);
                                heap.push(Entry {
                                    bound: node_lb,
                                    seq: next_seq,
                                    node: OpenNode {
                                        states: node.states,
                                        warm: Some(Arc::new(res.warm)),
                                        cut_rounds: node.cut_rounds,
                                        tighten_rounds: node.tighten_rounds + 1,
                                        tol: Some(tighter),
                                    },
                                });
                                next_seq += 1;
                            } else {
                                // Still open after tightening: force progress
                                // by splitting on a supported free arc.
                                let branch_arc = support
                                    .iter()
                                    .filter_map(|&(j, k)| spec.arc_id(j, k))
                                    .find(|&a| node.states[a] == ArcState::Free);
                                if let Some(a) = branch_arc {
                                    push_children(
                                        spec,
                                        &mut heap,
                                        &mut next_seq,
                                        &node,
                                        a,
                                        node_lb,
                                        Arc::new(res.warm),
                                    );
                                }
                                // With no free supported arc the node is a
                                // leaf; its relaxation is exact, so the
                                // residual gap is pure roundoff and the
                                // subtree is closed.
                            }
                        }
                    } else if let Some(plan) = branch {
                        // The probe already certified a bound and produced a
                        // resume state for each child; push them with those.
                        for (state, (bound, warm)) in [
                            (ArcState::FixedZero, plan.zero),
                            (ArcState::PinnedOne, plan.pin),
                        ] {
                            if bound >= ub - prune_eps {
                                continue;
                            }
                            let mut states = node.states.clone();
                            states[plan.arc] = state;
                            if state == ArcState::PinnedOne {
                                // A DAG holding this arc cannot hold its
                                // reverse.
                                let (j, k) = spec.arcs[plan.arc];
                                if let Some(rev) = spec.arc_id(k, j) {
                                    if states[rev] == ArcState::Free {
                                        states[rev] = ArcState::FixedZero;
                                    }
                                }
                                if spec.encoding == Encoding::Ln
                                    && pinned_cycle(spec, &states)
                                {
                                    continue;
                                }
                            }
                            heap.push(Entry {
                                bound: bound.max(node_lb),
                                seq: next_seq,
                                node: OpenNode {
                                    states,
                                    warm: Some(Arc::new(warm)),
                                    cut_rounds: 0,
                                    tighten_rounds: 0,
                                    tol: None,
                                },
                            });
                            next_seq += 1;
                        }
                    } else {
                        // Fractional with the separation budget exhausted:
                        // branch on the most ambivalent arc.
                        let branch_arc = (0..na)
                            .filter(|&a| node.states[a] == ArcState::Free)
                            .filter(|&a| {
                                res.g[a] > INT_TOL && (1.0 - res.g[a]).abs() > INT_TOL
                            })
                            .min_by(|&x, &y| {
                                let fx = (res.g[x] - 0.5).abs();
                                let fy = (res.g[y] - 0.5).abs();
                                fx.total_cmp(&fy).then(spec.arcs[x].cmp(&spec.arcs[y]))
                            })
                            .expect("non-integral relaxation has a fractional indicator");
                        push_children(
                            spec,
                            &mut heap,
                            &mut next_seq,
                            &node,
                            branch_arc,
                            node_lb,
                            Arc::new(res.warm),
                        );
                    }
                }
            }
        }

        // The heap minimum is now the tightest outstanding bound.
        if let Some(top) = heap.peek() {
            if top.bound.is_finite() {
                lb = lb.max(top.bound);
            }
        } else {
            lb = ub;
        }
        trace!();
    }

    if status == Status::Optimal {
        lb = ub;
    }
    lb = lb.min(ub);
    trace!();
    let gap = (ub - lb).max(0.0);
    let rgap = if gap == 0.0 { 0.0 } else { gap / ub.abs().max(1e-300) };
    Ok(SolveReport {
        status,
        ub,
        lb,
        gap,
        rgap,
        nodes_explored,
        cuts_added,
        relaxations,
        wall_seconds: t0.elapsed().as_secs_f64(),
        root_lb,
        big_m_binding: incumbent.big_m_binding,
        arcs: incumbent.arcs.clone(),
        config: ConfigEcho {
            mode: spec.mode,
            encoding: spec.encoding,
            lambda: spec.penalty.lambda,
            mu: spec.penalty.mu,
            big_m: spec.big_m,
            delta_total: spec.delta.sum(),
            abs_gap: config.stop.abs_gap,
            rel_gap: config.stop.rel_gap,
            time_limit: config.stop.time_limit,
            node_limit: config.stop.node_limit,
            threads,
            relax_tol: config.relax.tol,
        },
        trajectory,
    })
}

/// Whether the pinned arcs already contain a directed cycle, in which case
/// no DAG completes the node and its subtree is empty.
fn pinned_cycle(spec: &ProblemSpec, states: &[ArcState]) -> bool {
    let pinned: Vec<(usize, usize)> = states
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s == ArcState::PinnedOne)
        .map(|(a, _)| spec.arcs[a])
        .collect();
    let dag = DirectedGraph::from_arcs(spec.num_nodes(), &pinned)
        .expect("candidate arcs form a simple digraph");
    find_cycle(&dag).is_some()
}

/// Push the two children fixing `arc` out and in. Under the layered
/// encoding, a child whose pinned arcs already contain a directed cycle is
/// discarded outright (no DAG completes it); the lazy encoding leaves that
/// discovery to the cut loop.
fn push_children(
    spec: &ProblemSpec,
    heap: &mut BinaryHeap<Entry>,
    next_seq: &mut u64,
    parent: &OpenNode,
    arc: usize,
    bound: f64,
    warm: Arc<WarmStart>,
) {
    for state in [ArcState::FixedZero, ArcState::PinnedOne] {
        let mut states = parent.states.clone();
        states[arc] = state;
        if state == ArcState::PinnedOne {
            // A DAG holding this arc cannot hold its reverse.
            let (j, k) = spec.arcs[arc];
            if let Some(rev) = spec.arc_id(k, j) {
                if states[rev] == ArcState::Free {
                    states[rev] = ArcState::FixedZero;
                }
            }
            if spec.encoding == Encoding::Ln && pinned_cycle(spec, &states) {
                continue;
            }
        }
        heap.push(Entry {
            bound,
            seq: *next_seq,
            node: OpenNode {
                states,
                warm: Some(warm.clone()),
                cut_rounds: 0,
                tighten_rounds: 0,
                tol: None,
            },
        });
        *next_seq += 1;
    }
}
