//! Penalized least-squares scoring. A DAG's score is the squared
//! reconstruction error of every column from its parents, plus `lambda` per
//! arc and an optional Tikhonov term `mu * ||beta||^2`. Everything here works
//! off the Gram matrix, so per-node fits cost O(p^3) regardless of sample
//! count.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ndarray::Array2;

use crate::linalg;

/// Sample data with its cached Gram matrix `X^T X`.
#[derive(Debug, Clone)]
pub struct GramData {
    pub n: usize,
    pub m: usize,
    pub data: Array2<f64>,
    pub gram: Array2<f64>,
}

impl GramData {
    pub fn from_data(data: Array2<f64>) -> Self {
        let n = data.nrows();
        let m = data.ncols();
        let gram = data.t().dot(&data);
        Self { n, m, data, gram }
    }

    /// Build directly from a Gram matrix (no sample matrix retained).
    pub fn from_gram(gram: Array2<f64>, n: usize) -> Self {
        let m = gram.nrows();
        assert_eq!(m, gram.ncols());
        Self { n, m, data: Array2::zeros((0, m)), gram }
    }

    /// `sum_k ||X_k||^2`, the score of the empty support.
    pub fn trace(&self) -> f64 {
        (0..self.m).map(|i| self.gram[[i, i]]).sum()
    }
}

/// Arc penalty `lambda` (per arc) and Tikhonov weight `mu`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Penalty {
    pub lambda: f64,
    pub mu: f64,
}

impl Penalty {
    pub fn new(lambda: f64, mu: f64) -> crate::Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(crate::Error::InvalidConfig(format!(
                "lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(crate::Error::InvalidConfig(format!(
                "mu must be finite and nonnegative, got {mu}"
            )));
        }
        Ok(Self { lambda, mu })
    }
}

/// The BIC-rate arc penalty `ln n`.
pub fn bic_lambda(n: usize) -> f64 {
    assert!(n >= 2, "bic_lambda needs n >= 2, got {n}");
    (n as f64).ln()
}

/// Result of a single-node least-squares fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    /// Coefficients aligned with the (sorted) parent list passed in.
    pub beta: Vec<f64>,
    /// `||X_k - X_P beta||^2 + mu ||beta||^2`.
    pub rss: f64,
    /// True when the normal equations were singular and the minimum-norm
    /// solution was returned instead.
    pub singular: bool,
}

/// Ridge-adjusted least squares of column `target` on columns `parents`,
/// solved through the Gram matrix: `(G_PP + mu I) beta = G_P,target`.
/// Singular systems fall back to the minimum-norm solution (rank-revealing
/// eigendecomposition) with a warning rather than failing.
pub fn ols(gram: &GramData, target: usize, parents: &[usize], mu: f64) -> OlsFit {
    debug_assert!(target < gram.m);
    debug_assert!(parents.windows(2).all(|w| w[0] < w[1]), "parents must be sorted");
    debug_assert!(!parents.contains(&target));

    let p = parents.len();
    if p == 0 {
        return OlsFit { beta: Vec::new(), rss: gram.gram[[target, target]], singular: false };
    }
    let mut a = Array2::zeros((p, p));
    let mut b = vec![0.0; p];
    for (ri, &i) in parents.iter().enumerate() {
        b[ri] = gram.gram[[i, target]];
        for (ci, &j) in parents.iter().enumerate() {
            a[[ri, ci]] = gram.gram[[i, j]];
        }
        a[[ri, ri]] += mu;
    }
    let (beta, singular) = match linalg::solve_spd(&a, &b) {
        Some(x) => (x, false),
        None => {
            log::warn!(
                "singular normal equations for node {target} ({p} parents); \
                 returning the minimum-norm solution"
            );
            (linalg::solve_min_norm(&a, &b), true)
        }
    };
    // General quadratic form, exact for any beta (not only the minimizer):
    // rss = ||X_k||^2 - 2 b.beta + beta.(G_PP)beta + mu ||beta||^2.
    let mut rss = gram.gram[[target, target]];
    for ri in 0..p {
        rss -= 2.0 * b[ri] * beta[ri];
        rss += mu * beta[ri] * beta[ri];
        for ci in 0..p {
            rss += beta[ri] * (a[[ri, ci]] - if ri == ci { mu } else { 0.0 }) * beta[ci];
        }
    }
    OlsFit { beta, rss, singular }
}

/// Score a weighted support: squared reconstruction error plus penalties.
/// `arcs[i]` carries weight `beta[i]`. The sum is accumulated in canonical
/// (target, parent) order, so the result is invariant to input arc order.
pub fn score(gram: &GramData, arcs: &[(usize, usize)], beta: &[f64], penalty: &Penalty) -> f64 {
    assert_eq!(arcs.len(), beta.len());
    let mut by_target: Vec<Vec<(usize, f64)>> = vec![Vec::new(); gram.m];
    for (&(j, k), &w) in arcs.iter().zip(beta) {
        by_target[k].push((j, w));
    }
    let mut total = penalty.lambda * arcs.len() as f64;
    for (k, row) in by_target.iter_mut().enumerate() {
        row.sort_unstable_by_key(|&(j, _)| j);
        total += gram.gram[[k, k]];
        for &(j, w) in row.iter() {
            total -= 2.0 * w * gram.gram[[j, k]];
            total += penalty.mu * w * w;
        }
        for &(j, w) in row.iter() {
            for &(j2, w2) in row.iter() {
                total += w * w2 * gram.gram[[j, j2]];
            }
        }
    }
    total
}

/// Shared cache of per-node fits keyed by (target, parent bitmask). Inserts
/// are if-absent: two threads may compute the same fit, the first insert
/// wins, and the duplicate work is tolerated.
pub struct LocalScoreCache {
    mu: f64,
    inner: Mutex<HashMap<(usize, u64), Arc<OlsFit>>>,
}

impl LocalScoreCache {
    pub fn new(mu: f64) -> Self {
        Self { mu, inner: Mutex::new(HashMap::new()) }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    fn mask(parents: &[usize]) -> u64 {
        parents.iter().fold(0u64, |acc, &p| {
            debug_assert!(p < 64);
            acc | (1u64 << p)
        })
    }

    /// Fit `target` on `parents` (sorted), reusing a cached result if present.
    pub fn fit(&self, gram: &GramData, target: usize, parents: &[usize]) -> Arc<OlsFit> {
        let key = (target, Self::mask(parents));
        if let Some(hit) = self.inner.lock().unwrap().get(&key) {
            return hit.clone();
        }
        let fresh = Arc::new(ols(gram, target, parents, self.mu));
        self.inner
            .lock()
            .unwrap()
            .entry(key)
            .or_insert(fresh)
            .clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
