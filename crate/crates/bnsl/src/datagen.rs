//! Synthetic linear-SEM instances: a random DAG with uniform arc weights,
//! Gaussian noise samples propagated in topological order, and the moral
//! graph of the truth as a candidate super-structure.
//!
//! All randomness flows through a ChaCha20 stream seeded from `GenConfig::
//! seed`, with a fixed draw order (permutation, then one uniform per ordered
//! node pair, then weight/sign draws per kept arc, then one standard normal
//! per sample cell in topological column order). Identical configs therefore
//! reproduce bit-identical instances on every platform.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::graphs::{moralize, topological_order, DirectedGraph, UndirectedGraph};
use crate::{Error, Result};

/// Weighted arcs, keyed `(parent, child)`.
pub type ArcWeights = BTreeMap<(usize, usize), f64>;

/// Instance-generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Number of nodes.
    pub m: usize,
    /// Number of samples.
    pub n: usize,
    /// Expected in-plus-out degree: each ordered candidate pair becomes an
    /// arc with probability `degree / (m - 1)`.
    pub degree: f64,
    pub weight_low: f64,
    pub weight_high: f64,
    pub noise_sd: f64,
    /// Flip each weight's sign with probability 1/2 (off by default).
    pub sign_flip: bool,
    pub seed: u64,
}

impl GenConfig {
    pub fn new(m: usize, n: usize, seed: u64) -> Self {
        Self {
            m,
            n,
            degree: 2.0,
            weight_low: 0.1,
            weight_high: 1.0,
            noise_sd: 1.0,
            sign_flip: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidConfig(format!("need m >= 2 nodes, got {}", self.m)));
        }
        if self.n < 1 {
            return Err(Error::InvalidConfig("need n >= 1 samples".into()));
        }
        if !(self.degree > 0.0 && self.degree < self.m as f64) {
            return Err(Error::InvalidConfig(format!(
                "degree must lie in (0, m), got {}",
                self.degree
            )));
        }
        if !(self.weight_low > 0.0 && self.weight_low <= self.weight_high) {
            return Err(Error::InvalidConfig(format!(
                "weight range [{}, {}] must satisfy 0 < low <= high",
                self.weight_low, self.weight_high
            )));
        }
        if !(self.noise_sd > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_sd must be positive, got {}",
                self.noise_sd
            )));
        }
        Ok(())
    }
}

/// A generated instance: the ground-truth DAG and weights, the sampled data,
/// and the two candidate super-structures (the truth's moral graph and the
/// complete graph).
#[derive(Debug, Clone)]
pub struct GeneratedInstance {
    pub config: GenConfig,
    pub dag: DirectedGraph,
    pub weights: ArcWeights,
    pub data: Array2<f64>,
    pub moral: UndirectedGraph,
    pub complete: UndirectedGraph,
}

/// Draw a random DAG: a uniform permutation fixes the topological order, and
/// each pair ordered by it becomes an arc with probability `degree/(m-1)`
/// carrying a Uniform(weight_low, weight_high) weight.
pub fn random_dag(cfg: &GenConfig, rng: &mut ChaCha20Rng) -> (DirectedGraph, ArcWeights) {
    let m = cfg.m;
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(rng);
    let p = (cfg.degree / (m as f64 - 1.0)).min(1.0);
    let mut dag = DirectedGraph::new(m);
    let mut weights = ArcWeights::new();
    for i in 0..m {
        for j in (i + 1)..m {
            if rng.gen::<f64>() < p {
                let (a, b) = (perm[i], perm[j]);
                let mut w = rng.gen_range(cfg.weight_low..=cfg.weight_high);
                if cfg.sign_flip && rng.gen::<bool>() {
                    w = -w;
                }
                dag.add_arc(a, b).expect("permutation pairs are valid arcs");
                weights.insert((a, b), w);
            }
        }
    }
    (dag, weights)
}

/// Sample `n` rows of the SEM `X_k = sum_j beta_jk X_j + noise`. `weights`
/// must carry exactly the DAG's arcs. Accepts `noise_sd = 0` for the
/// degenerate deterministic system.
pub fn sample_sem(
    dag: &DirectedGraph,
    weights: &ArcWeights,
    n: usize,
    noise_sd: f64,
    rng: &mut ChaCha20Rng,
) -> Result<Array2<f64>> {
    let order = topological_order(dag).ok_or(Error::CyclicInput)?;
    let arcs: Vec<(usize, usize)> = dag.arcs().collect();
    if weights.len() != arcs.len() || arcs.iter().any(|a| !weights.contains_key(a)) {
        return Err(Error::InvalidConfig(
            "weights must be defined exactly on the DAG's arcs".into(),
        ));
    }
    if noise_sd < 0.0 {
        return Err(Error::InvalidConfig("noise_sd must not be negative".into()));
    }
    let m = dag.num_nodes();
    let mut parents: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
    for (&(j, k), &w) in weights {
        parents[k].push((j, w));
    }
    let mut x = Array2::zeros((n, m));
    for row in 0..n {
        for &v in &order {
            let z: f64 = StandardNormal.sample(rng);
            let mut val = noise_sd * z;
            for &(j, w) in &parents[v] {
                val += w * x[[row, j]];
            }
            x[[row, v]] = val;
        }
    }
    Ok(x)
}

/// Generate a full instance from a validated config.
pub fn make_instance(cfg: &GenConfig) -> Result<GeneratedInstance> {
    cfg.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let (dag, weights) = random_dag(cfg, &mut rng);
    let data = sample_sem(&dag, &weights, cfg.n, cfg.noise_sd, &mut rng)?;
    let moral = moralize(&dag)?;
    let complete = UndirectedGraph::complete(cfg.m);
    Ok(GeneratedInstance { config: *cfg, dag, weights, data, moral, complete })
}

// ---------------------------------------------------------------------------
// File round-trips: headerless CSV of samples plus graph/metadata sidecars.
// ---------------------------------------------------------------------------

/// Write the sample matrix as headerless CSV (one row per sample). Values are
/// printed with Rust's shortest round-trip float formatting, so reading the
/// file back reproduces the matrix bit-exactly.
pub fn write_data_csv(data: &Array2<f64>, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in data.rows() {
        let rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        w.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_data_csv(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{}: {e}", path.display()),
            )),
            _ => Error::Parse(e.to_string()),
        })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let row: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            Error::Parse(format!("{}: bad float in row {}: {e}", path.display(), rows.len() + 1))
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse(format!(
                    "{}: ragged row {} ({} vs {} columns)",
                    path.display(),
                    rows.len() + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    let n = rows.len();
    let m = rows[0].len();
    Ok(Array2::from_shape_fn((n, m), |(i, j)| rows[i][j]))
}

/// Metadata sidecar written next to each generated instance.
#[derive(Debug, Serialize, Deserialize)]
pub struct InstanceMeta {
    #[serde(flatten)]
    pub config: GenConfig,
    pub true_arc_count: usize,
    pub moral_edge_count: usize,
}

/// Write `data.csv`, `true_dag.txt`, `moral.txt`, and `meta.json` into `dir`.
pub fn write_instance(inst: &GeneratedInstance, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_data_csv(&inst.data, &dir.join("data.csv"))?;
    crate::graphs::write_directed(&inst.dag, &dir.join("true_dag.txt"))?;
    crate::graphs::write_undirected(&inst.moral, &dir.join("moral.txt"))?;
    let meta = InstanceMeta {
        config: inst.config,
        true_arc_count: inst.dag.num_arcs(),
        moral_edge_count: inst.moral.num_edges(),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(dir.join("meta.json"), json)?;
    Ok(())
}
