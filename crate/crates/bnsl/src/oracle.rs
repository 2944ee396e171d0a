//! Exact reference solvers for small instances.
//!
//! Two independent ground-truth engines back the solver's test suite:
//!
//! * [`exact_solve`] — dynamic programming over node subsets: per-node best
//!   parent sets for every candidate subset, then a sink-ordering recursion.
//!   Exact for any instance small enough to enumerate (`m <= 16` by
//!   default), regardless of penalties.
//! * [`enumerate_dags`] — brute force over every subgraph of the candidate
//!   arc set, keeping the best acyclic one. Only viable for `m <= 5`, but
//!   its logic shares nothing with the DP, which is what makes the
//!   cross-check meaningful.
//!
//! Both optimize the same objective as the branch-and-bound solver —
//! squared residuals plus `lambda` per arc plus an optional ridge term —
//! but **ignore the coefficient box** `|beta| <= M`. When a refit
//! coefficient lands outside the box the result flags it, so callers can
//! tell apart "solver missed the optimum" from "the box truncated the
//! optimum".

use std::collections::BTreeMap;

use crate::formulation::ProblemSpec;
use crate::graphs::DirectedGraph;
use crate::score::{self, LocalScoreCache};
use crate::{Error, Result};

/// Node-count ceiling for [`exact_solve`]'s subset recursion.
pub const EXACT_MAX_NODES: usize = 16;
/// Candidate-parent ceiling per node; `2^20` local fits is the budget line.
pub const EXACT_MAX_CANDIDATES: usize = 20;
/// Node-count ceiling for [`enumerate_dags`].
pub const ENUMERATE_MAX_NODES: usize = 5;

/// A provably optimal network for the penalized least-squares objective.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub dag: DirectedGraph,
    /// Refit coefficients keyed by arc.
    pub beta: BTreeMap<(usize, usize), f64>,
    pub score: f64,
    /// Work counter: local fits for [`exact_solve`], acyclic structures
    /// scored for [`enumerate_dags`].
    pub subsets_evaluated: usize,
    /// Some refit coefficient exceeds the problem's box bound; the
    /// branch-and-bound optimum may then legitimately differ.
    pub bigm_exceeded: bool,
}

/// Score-and-coefficients summary of a fixed structure (parent list per
/// node), refit without any box.
fn assemble(
    spec: &ProblemSpec,
    parents: &[Vec<usize>],
    subsets_evaluated: usize,
) -> OracleResult {
    let m = spec.num_nodes();
    let mut dag = DirectedGraph::new(m);
    let mut beta = BTreeMap::new();
    let mut arcs = Vec::new();
    let mut betas = Vec::new();
    for k in 0..m {
        let fit = score::ols(&spec.gram, k, &parents[k], spec.penalty.mu);
        for (i, &j) in parents[k].iter().enumerate() {
            dag.add_arc(j, k).expect("oracle structure must be a simple digraph");
            beta.insert((j, k), fit.beta[i]);
            arcs.push((j, k));
            betas.push(fit.beta[i]);
        }
    }
    let score = score::score(&spec.gram, &arcs, &betas, &spec.penalty);
    let bigm_exceeded = betas.iter().any(|b| b.abs() > spec.big_m);
    OracleResult { dag, beta, score, subsets_evaluated, bigm_exceeded }
}

/// Exact global optimum by dynamic programming.
///
/// Stage 1 computes, for every node `k` and every subset `T` of its
/// candidate parents, the best penalized local score using parents within
/// `T`. Stage 2 runs the sink recursion `dp[S] = min over k in S of
/// dp[S minus k] + best_k[(S minus k) restricted to candidates]`, which
/// ranges over all DAGs consistent with the super-structure. Ties break
/// deterministically (smallest sink, then the first-found parent set).
///
/// Refuses instances with more than `max_m` nodes or more than
/// [`EXACT_MAX_CANDIDATES`] candidate parents anywhere.
pub fn exact_solve(spec: &ProblemSpec, max_m: usize) -> Result<OracleResult> {
    let m = spec.num_nodes();
    let cap = max_m.min(EXACT_MAX_NODES);
    if m > cap {
        return Err(Error::InvalidConfig(format!(
            "exact search over {m} nodes exceeds the cap of {cap}"
        )));
    }
    let lambda = spec.penalty.lambda;
    let mut subsets_evaluated = 0usize;

    // Stage 1: best_local[k][mask over candidate list] = (score, kept mask).
    let mut cands: Vec<Vec<usize>> = Vec::with_capacity(m);
    let mut best_local: Vec<Vec<(f64, u32)>> = Vec::with_capacity(m);
    for k in 0..m {
        let cand = spec.candidates(k);
        if cand.len() > EXACT_MAX_CANDIDATES {
            return Err(Error::InvalidConfig(format!(
                "node {k} has {} candidate parents; the exact search caps at {}",
                cand.len(),
                EXACT_MAX_CANDIDATES
            )));
        }
        let size = 1usize << cand.len();
        let mut table = vec![(f64::INFINITY, 0u32); size];
        let mut parents = Vec::new();
        for mask in 0..size {
            parents.clear();
            for (i, &j) in cand.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    parents.push(j);
                }
            }
            let fit = score::ols(&spec.gram, k, &parents, spec.penalty.mu);
            subsets_evaluated += 1;
            let mut best = (fit.rss + lambda * parents.len() as f64, mask as u32);
            // Using a subset of `mask` is also allowed; one-bit drops cover
            // all of them because the table fills in mask order.
            for (i, _) in cand.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    let sub = table[mask & !(1 << i)];
                    if sub.0 < best.0 {
                        best = sub;
                    }
                }
            }
            table[mask] = best;
        }
        cands.push(cand);
        best_local.push(table);
    }

    // Stage 2: sink recursion over node subsets.
    let full = (1usize << m) - 1;
    let mut dp = vec![f64::INFINITY; full + 1];
    let mut choice = vec![usize::MAX; full + 1];
    dp[0] = 0.0;
    for s in 1..=full {
        for k in 0..m {
            if s & (1 << k) == 0 {
                continue;
            }
            let rest = s & !(1 << k);
            // Project `rest` onto node k's candidate list.
            let mut t = 0u32;
            for (i, &j) in cands[k].iter().enumerate() {
                if rest & (1 << j) != 0 {
                    t |= 1 << i;
                }
            }
            let v = dp[rest] + best_local[k][t as usize].0;
            if v < dp[s] {
                dp[s] = v;
                choice[s] = k;
            }
        }
    }

    // Reconstruct parent sets along the chosen sink order.
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut s = full;
    while s != 0 {
        let k = choice[s];
        let rest = s & !(1 << k);
        let mut t = 0u32;
        for (i, &j) in cands[k].iter().enumerate() {
            if rest & (1 << j) != 0 {
                t |= 1 << i;
            }
        }
        let kept = best_local[k][t as usize].1;
        for (i, &j) in cands[k].iter().enumerate() {
            if kept & (1 << i) != 0 {
                parents[k].push(j);
            }
        }
        s = rest;
    }

    let result = assemble(spec, &parents, subsets_evaluated);
    debug_assert!(
        (result.score - dp[full]).abs() <= 1e-7 * (1.0 + dp[full].abs()),
        "refit score {} disagrees with DP value {}",
        result.score,
        dp[full]
    );
    Ok(result)
}

/// Exact global optimum by scoring every acyclic subgraph of the candidate
/// arc set. Shares no machinery with [`exact_solve`] beyond the local
/// least-squares fit.
pub fn enumerate_dags(spec: &ProblemSpec, max_m: usize) -> Result<OracleResult> {
    let m = spec.num_nodes();
    let cap = max_m.min(ENUMERATE_MAX_NODES);
    if m > cap {
        return Err(Error::InvalidConfig(format!(
            "exhaustive enumeration over {m} nodes exceeds the cap of {cap}"
        )));
    }
    let arcs = &spec.arcs;
    let na = arcs.len();
    let cache = LocalScoreCache::new(spec.penalty.mu);
    let lambda = spec.penalty.lambda;

    let mut best: Option<(f64, usize)> = None;
    let mut evaluated = 0usize;
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); m];
    for mask in 0usize..(1 << na) {
        let mut dag = DirectedGraph::new(m);
        let mut ok = true;
        for (a, &(j, k)) in arcs.iter().enumerate() {
            if mask & (1 << a) != 0 && dag.add_arc(j, k).is_err() {
                ok = false;
                break;
            }
        }
        if !ok || crate::graphs::find_cycle(&dag).is_some() {
            continue;
        }
        evaluated += 1;
        for p in parents.iter_mut() {
            p.clear();
        }
        for (a, &(j, k)) in arcs.iter().enumerate() {
            if mask & (1 << a) != 0 {
                parents[k].push(j);
            }
        }
        let mut total = 0.0;
        for k in 0..m {
            parents[k].sort_unstable();
            let fit = cache.fit(&spec.gram, k, &parents[k]);
            total += fit.rss + lambda * parents[k].len() as f64;
        }
        if best.map_or(true, |(s, _)| total < s) {
            best = Some((total, mask));
        }
    }

    let (_, mask) = best.expect("the empty structure is always acyclic");
    let mut parents: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (a, &(j, k)) in arcs.iter().enumerate() {
        if mask & (1 << a) != 0 {
            parents[k].push(j);
        }
    }
    for p in parents.iter_mut() {
        p.sort_unstable();
    }
    Ok(assemble(spec, &parents, evaluated))
}
