//! Problem assembly: candidate arcs from a super-structure, penalty and
//! big-M configuration, and the diagonal split of the (ridge-adjusted) Gram
//! matrix that powers the perspective strengthening of the relaxation.
//!
//! The split writes `X^T X + mu I = Q + diag(delta)` with `Q` positive
//! semidefinite. The separable `delta_j beta^2` mass is what the perspective
//! relaxation tightens into `delta_j beta^2 / g`, so larger feasible `delta`
//! means stronger lower bounds.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::graphs::UndirectedGraph;
use crate::linalg::{cholesky_psd, min_eigenvalue};
use crate::score::{bic_lambda, ols, GramData, OlsFit, Penalty};
use crate::{Error, Result};

/// Relaxation family used for the arc-indicator penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Box coupling `|beta| <= M g` only.
    Bigm,
    /// Conic strengthening `delta beta^2 / g` on the split-off diagonal mass.
    Persp,
    /// Outer approximation of the conic term by lazily separated tangent cuts.
    Perspcut,
}

/// How acyclicity is enforced during branch and bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// Cycle inequalities generated lazily at integral points.
    CpLazy,
    /// Additionally maintains layer values over the arcs fixed to one and
    /// prunes fixings that admit no valid layering. The lazy cycle cuts stay
    /// active: with relaxed indicators the layered difference constraints
    /// carry no bound strength of their own (any layer assignment satisfies
    /// them, and pairs fixed in both directions would still slip through).
    Ln,
}

/// Strategy for choosing the diagonal split vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaStrategy {
    /// `delta = 0`: the perspective modes degenerate to plain big-M.
    Zero,
    /// Uniform `max(lambda_min - eps, 0)` from the smallest eigenvalue.
    Eig,
    /// Coordinate ascent on `sum delta_j` with Cholesky feasibility checks,
    /// started from the eigenvalue choice (never worse than it).
    Greedy,
}

/// Which default rule sets `lambda` when no explicit value is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaRule {
    /// `ln n` (BIC rate in the sample count).
    Bic,
    /// `ln m` (rate in the node count, used by the early-stopping study).
    LogM,
}

/// Arcs entering one target node, with their positions in the global arc
/// list. `arc_ids[i]` is the candidate arc `(parents[i], target)`.
#[derive(Debug, Clone)]
pub struct TargetBlock {
    pub target: usize,
    pub parents: Vec<usize>,
    pub arc_ids: Vec<usize>,
}

/// A fully assembled problem: data, candidate arcs, penalty, big-M, and the
/// diagonal split. Immutable once built; shared by the relaxation solver,
/// the branch-and-bound driver, and the oracles.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub gram: GramData,
    pub super_structure: UndirectedGraph,
    /// Bidirected closure of the super-structure, lexicographically sorted.
    pub arcs: Vec<(usize, usize)>,
    pub arc_index: BTreeMap<(usize, usize), usize>,
    /// One block per node with at least one candidate parent.
    pub targets: Vec<TargetBlock>,
    pub penalty: Penalty,
    pub big_m: f64,
    pub delta: Array1<f64>,
    /// `X^T X + mu I - diag(delta)`; validated positive semidefinite.
    pub q_tilde: Array2<f64>,
    pub mode: Mode,
    pub encoding: Encoding,
}

impl ProblemSpec {
    pub fn num_nodes(&self) -> usize {
        self.gram.m
    }

    pub fn num_samples(&self) -> usize {
        self.gram.n
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn arc_id(&self, j: usize, k: usize) -> Option<usize> {
        self.arc_index.get(&(j, k)).copied()
    }

    /// Sorted candidate parents of `k` (the super-structure neighborhood).
    pub fn candidates(&self, k: usize) -> Vec<usize> {
        self.super_structure.neighbors(k)
    }
}

/// The PSD remainder of the diagonal split together with its Cholesky
/// factor `l` (lower triangular, `q_mat = l l^T`).
#[derive(Debug, Clone)]
pub struct QSplit {
    pub q_mat: Array2<f64>,
    pub chol: Array2<f64>,
}

impl QSplit {
    /// `max |l l^T - q_mat|`, the factorization residual.
    pub fn reconstruction_error(&self) -> f64 {
        let rebuilt = self.chol.dot(&self.chol.t());
        (&rebuilt - &self.q_mat).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Relative pivot tolerance for validating the split's PSD invariant.
const SPLIT_PSD_TOL: f64 = 1e-8;

/// Subtract `diag(delta)` from the ridge-adjusted Gram matrix and verify the
/// remainder is positive semidefinite.
pub fn split_gram(gram_plus_mu: &Array2<f64>, delta: &Array1<f64>) -> Result<QSplit> {
    let m = gram_plus_mu.nrows();
    assert_eq!(delta.len(), m, "delta length must match the matrix dimension");
    let mut q_mat = gram_plus_mu.clone();
    for j in 0..m {
        q_mat[[j, j]] -= delta[j];
    }
    let chol = cholesky_psd(&q_mat, SPLIT_PSD_TOL)
        .map_err(|e| Error::NotPsd { index: e.index, pivot: e.pivot })?;
    Ok(QSplit { q_mat, chol })
}

/// Default floor for the big-M estimate when every fitted coefficient is
/// zero, so the coupling `|beta| <= M g` never collapses spuriously.
pub const BIG_M_FLOOR: f64 = 1.0;

/// Candidate-count threshold above which the per-node best-subset search
/// falls back to greedy forward selection.
const BEST_SUBSET_CAP: usize = 20;

/// Safety cap on regression solves inside one node's best-subset search.
const BEST_SUBSET_MAX_FITS: usize = 200_000;

/// Estimate the box bound from the acyclicity-free optimum: per node, the
/// best subset of super-structure candidates under the same `lambda`/`mu`
/// penalty (exhaustive with bound pruning up to 20 candidates, greedy
/// forward selection beyond), then `gamma` times the largest absolute
/// coefficient across all nodes.
pub fn estimate_big_m(
    gram: &GramData,
    super_structure: &UndirectedGraph,
    penalty: &Penalty,
    gamma: f64,
) -> Result<f64> {
    if !(gamma >= 1.0) {
        return Err(Error::InvalidConfig(format!("gamma must be at least 1, got {gamma}")));
    }
    let mut max_abs = 0.0f64;
    for k in 0..gram.m {
        let cands = super_structure.neighbors(k);
        if cands.is_empty() {
            continue;
        }
        let fit = if cands.len() <= BEST_SUBSET_CAP {
            best_subset(gram, k, &cands, penalty)
        } else {
            greedy_forward(gram, k, &cands, penalty).1
        };
        for b in &fit.beta {
            max_abs = max_abs.max(b.abs());
        }
    }
    if max_abs < 1e-12 {
        log::warn!("all best-subset coefficients are zero; using big-M floor {BIG_M_FLOOR}");
        return Ok(BIG_M_FLOOR);
    }
    Ok(gamma * max_abs)
}

/// Exact per-node best subset of `cands` minimizing `rss + lambda |S|`.
/// Depth-first include/exclude search; each branch is cut off when even the
/// rss of "everything still undecided included" cannot beat the incumbent
/// (rss is non-increasing in the parent set, so that is a valid bound).
fn best_subset(gram: &GramData, k: usize, cands: &[usize], penalty: &Penalty) -> OlsFit {
    let (mut best_obj, mut best_fit, mut best_set) = {
        let (obj, fit, set) = greedy_forward_with_set(gram, k, cands, penalty);
        (obj, fit, set)
    };
    let mut fits = 0usize;
    let mut included: Vec<usize> = Vec::with_capacity(cands.len());

    fn dfs(
        gram: &GramData,
        k: usize,
        cands: &[usize],
        penalty: &Penalty,
        i: usize,
        included: &mut Vec<usize>,
        best_obj: &mut f64,
        best_fit: &mut OlsFit,
        best_set: &mut Vec<usize>,
        fits: &mut usize,
    ) {
        *fits += 1;
        if *fits > BEST_SUBSET_MAX_FITS {
            return;
        }
        // Lower bound: rss with every undecided candidate included, paying
        // lambda only for the committed ones.
        let mut widest: Vec<usize> = included.iter().copied().chain(cands[i..].iter().copied()).collect();
        widest.sort_unstable();
        let bound =
            ols(gram, k, &widest, penalty.mu).rss + penalty.lambda * included.len() as f64;
        if bound >= *best_obj - 1e-12 {
            return;
        }
        if i == cands.len() {
            // `widest == included` here, so `bound` is this subset's true
            // objective and it beats the incumbent.
            *best_obj = bound;
            *best_fit = ols(gram, k, &widest, penalty.mu);
            *best_set = widest;
            return;
        }
        included.push(cands[i]);
        dfs(gram, k, cands, penalty, i + 1, included, best_obj, best_fit, best_set, fits);
        included.pop();
        dfs(gram, k, cands, penalty, i + 1, included, best_obj, best_fit, best_set, fits);
    }

    dfs(
        gram,
        k,
        cands,
        penalty,
        0,
        &mut included,
        &mut best_obj,
        &mut best_fit,
        &mut best_set,
        &mut fits,
    );
    if fits > BEST_SUBSET_MAX_FITS {
        log::warn!(
            "best-subset search for node {k} hit the fit cap; using the best subset found so far"
        );
    }
    best_fit
}

fn greedy_forward(
    gram: &GramData,
    k: usize,
    cands: &[usize],
    penalty: &Penalty,
) -> (f64, OlsFit) {
    let (obj, fit, _) = greedy_forward_with_set(gram, k, cands, penalty);
    (obj, fit)
}

/// Forward stepwise selection on `rss + lambda |S|`: repeatedly add the
/// candidate with the largest objective decrease until none improves.
fn greedy_forward_with_set(
    gram: &GramData,
    k: usize,
    cands: &[usize],
    penalty: &Penalty,
) -> (f64, OlsFit, Vec<usize>) {
    let mut selected: Vec<usize> = Vec::new();
    let mut fit = ols(gram, k, &selected, penalty.mu);
    let mut obj = fit.rss;
    loop {
        let mut best: Option<(f64, OlsFit, Vec<usize>)> = None;
        for &c in cands {
            if selected.contains(&c) {
                continue;
            }
            let mut trial = selected.clone();
            trial.push(c);
            trial.sort_unstable();
            let tf = ols(gram, k, &trial, penalty.mu);
            let tobj = tf.rss + penalty.lambda * trial.len() as f64;
            if best.as_ref().map_or(true, |(b, _, _)| tobj < *b) {
                best = Some((tobj, tf, trial));
            }
        }
        match best {
            Some((tobj, tf, trial)) if tobj < obj - 1e-12 => {
                obj = tobj;
                fit = tf;
                selected = trial;
            }
            _ => break,
        }
    }
    (obj, fit, selected)
}

/// Default slack subtracted from the smallest eigenvalue, and the minimum
/// coordinate growth below which the greedy ascent stops.
pub const DELTA_EPS: f64 = 1e-6;

/// Uniform diagonal split: every coordinate gets `max(lambda_min - eps, 0)`.
/// A singular input yields the zero vector (the perspective modes then
/// degenerate to plain big-M), with a warning.
pub fn select_delta_eig(gram_plus_mu: &Array2<f64>, eps: f64) -> Array1<f64> {
    let m = gram_plus_mu.nrows();
    let lo = min_eigenvalue(gram_plus_mu);
    let val = (lo - eps).max(0.0);
    if val == 0.0 {
        log::warn!(
            "smallest eigenvalue {lo:.3e} leaves no diagonal mass to split off; \
             the perspective relaxation will coincide with big-M"
        );
    }
    Array1::from_elem(m, val)
}

/// Internal pivot tolerance for the greedy ascent's feasibility checks;
/// tighter than the split validation tolerance so accepted steps always
/// pass downstream PSD validation.
const GREEDY_PSD_TOL: f64 = 1e-10;

/// Diagonal split by coordinate ascent on `sum delta_j`: start from the
/// eigenvalue choice, then round-robin over coordinates, growing each by a
/// halving step while the Cholesky feasibility check still passes. Stops
/// when a full pass grows no coordinate by more than `DELTA_EPS`. The
/// result dominates `select_delta_eig` componentwise by construction.
pub fn select_delta_greedy(gram_plus_mu: &Array2<f64>, eps: f64) -> Array1<f64> {
    let m = gram_plus_mu.nrows();
    let mut delta = select_delta_eig(gram_plus_mu, eps);
    let feasible = |d: &Array1<f64>| {
        let mut q = gram_plus_mu.clone();
        for j in 0..m {
            q[[j, j]] -= d[j];
        }
        cholesky_psd(&q, GREEDY_PSD_TOL).is_ok()
    };
    if !feasible(&delta) {
        // The eigenvalue start can sit marginally outside the strict check;
        // fall back to zero, which is always feasible for a PSD input.
        log::warn!("eigenvalue delta start failed the strict feasibility check; starting from 0");
        delta.fill(0.0);
    }
    let min_step = DELTA_EPS / 4.0;
    for _pass in 0..64 {
        let mut max_gain = 0.0f64;
        for j in 0..m {
            let mut step = (gram_plus_mu[[j, j]] - delta[j]).max(1.0);
            let mut gained = 0.0;
            while step >= min_step {
                let mut trial = delta.clone();
                trial[j] += step;
                if feasible(&trial) {
                    delta = trial;
                    gained += step;
                } else {
                    step *= 0.5;
                }
            }
            max_gain = max_gain.max(gained);
        }
        if max_gain <= DELTA_EPS {
            break;
        }
    }
    delta
}

/// Knobs for [`build_problem`]. `lambda = None` applies `lambda_rule`.
#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub lambda: Option<f64>,
    pub lambda_rule: LambdaRule,
    pub mu: f64,
    pub gamma: f64,
    pub big_m: Option<f64>,
    pub delta: DeltaStrategy,
    pub delta_eps: f64,
    pub mode: Mode,
    pub encoding: Encoding,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            lambda: None,
            lambda_rule: LambdaRule::Bic,
            mu: 0.0,
            gamma: 2.0,
            big_m: None,
            delta: DeltaStrategy::Greedy,
            delta_eps: DELTA_EPS,
            mode: Mode::Persp,
            encoding: Encoding::CpLazy,
        }
    }
}

/// Wire data, super-structure, and options into an immutable [`ProblemSpec`]
/// plus the validated diagonal split. Fails if the split is not PSD or the
/// dimensions are inconsistent.
pub fn build_problem(
    data: &Array2<f64>,
    super_structure: &UndirectedGraph,
    opts: &BuildOptions,
) -> Result<(ProblemSpec, QSplit)> {
    let m = super_structure.num_nodes();
    if data.ncols() != m {
        return Err(Error::NodeCountMismatch { left: data.ncols(), right: m });
    }
    let n = data.nrows();
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 samples, got {n}")));
    }
    let gram = GramData::from_data(data.clone());
    let lambda = opts.lambda.unwrap_or(match opts.lambda_rule {
        LambdaRule::Bic => bic_lambda(n),
        LambdaRule::LogM => (m as f64).ln(),
    });
    let penalty = Penalty::new(lambda, opts.mu)?;
    if n < m && opts.mu == 0.0 {
        log::warn!(
            "n = {n} < m = {m} with mu = 0: the Gram matrix is rank-deficient; \
             consider a positive mu"
        );
    }

    let big_m = match opts.big_m {
        Some(v) if v > 0.0 => v,
        Some(v) => {
            return Err(Error::InvalidConfig(format!("big-M must be positive, got {v}")));
        }
        None => estimate_big_m(&gram, super_structure, &penalty, opts.gamma)?,
    };

    let mut gram_plus_mu = gram.gram.clone();
    for j in 0..m {
        gram_plus_mu[[j, j]] += opts.mu;
    }
    // Big-M mode has no conic term, so diagonal mass moved out of the
    // quadratic would simply be lost from the relaxation; keep delta = 0.
    let delta = if opts.mode == Mode::Bigm {
        Array1::zeros(m)
    } else {
        match opts.delta {
            DeltaStrategy::Zero => Array1::zeros(m),
            DeltaStrategy::Eig => select_delta_eig(&gram_plus_mu, opts.delta_eps),
            DeltaStrategy::Greedy => select_delta_greedy(&gram_plus_mu, opts.delta_eps),
        }
    };
    let qsplit = split_gram(&gram_plus_mu, &delta)?;

    let mut arcs = Vec::new();
    for j in 0..m {
        for k in 0..m {
            if j != k && super_structure.has_edge(j, k) {
                arcs.push((j, k));
            }
        }
    }
    let arc_index: BTreeMap<(usize, usize), usize> =
        arcs.iter().enumerate().map(|(i, &a)| (a, i)).collect();
    let mut targets = Vec::new();
    for k in 0..m {
        let parents = super_structure.neighbors(k);
        if parents.is_empty() {
            continue;
        }
        let arc_ids = parents.iter().map(|&j| arc_index[&(j, k)]).collect();
        targets.push(TargetBlock { target: k, parents, arc_ids });
    }

    let spec = ProblemSpec {
        gram,
        super_structure: super_structure.clone(),
        arcs,
        arc_index,
        targets,
        penalty,
        big_m,
        delta,
        q_tilde: qsplit.q_mat.clone(),
        mode: opts.mode,
        encoding: opts.encoding,
    };
    Ok((spec, qsplit))
}
