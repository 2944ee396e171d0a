//! Benchmark grids and the early-stopping study.
//!
//! [`run_bench`] sweeps a configuration grid over synthetic instances,
//! writing one CSV row per (instance, configuration) run plus a per-cell
//! summary. A failing cell records its error and the sweep continues; a
//! benchmark never aborts half-way because one configuration is infeasible.
//!
//! [`compare_early_stop`] runs the two-arm experiment behind the
//! early-stopping rule: the same instances solved to proven optimality and
//! with the absolute gap threshold `s ln(m) / n` (where `s` counts
//! super-structure edges), comparing recovered structure quality and wall
//! time.

use std::path::Path;

use serde::Serialize;

use crate::bnb::{self, early_stop_threshold, SolveConfig, SolveReport, Status, StopRule};
use crate::datagen::{make_instance, GenConfig, GeneratedInstance};
use crate::formulation::{build_problem, BuildOptions, DeltaStrategy, Encoding, Mode};
use crate::graphs::{self, DirectedGraph, UndirectedGraph};
use crate::Result;

/// Which super-structure the solver receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceClass {
    /// Moral graph of the generating network: the informed prior.
    Moral,
    /// All pairs allowed: the uninformed worst case.
    Complete,
}

/// Grid specification. Every combination of the listed values runs on every
/// (m, seed) instance.
#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub m_list: Vec<usize>,
    pub n: usize,
    pub degree: f64,
    pub seeds: Vec<u64>,
    pub classes: Vec<InstanceClass>,
    pub modes: Vec<Mode>,
    pub encodings: Vec<Encoding>,
    /// Multipliers applied to the sample-size penalty `ln n`.
    pub lambda_multipliers: Vec<f64>,
    pub gammas: Vec<f64>,
    pub mus: Vec<f64>,
    pub delta: DeltaStrategy,
    pub stop: StopRule,
    pub threads: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            m_list: vec![10],
            n: 100,
            degree: 2.0,
            seeds: (0..10).collect(),
            classes: vec![InstanceClass::Moral],
            modes: vec![Mode::Persp],
            encodings: vec![Encoding::CpLazy],
            lambda_multipliers: vec![1.0],
            gammas: vec![2.0],
            mus: vec![0.0],
            delta: DeltaStrategy::Greedy,
            stop: StopRule { rel_gap: 0.01, ..Default::default() },
            threads: 1,
        }
    }
}

/// One benchmark run, flattened for CSV.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub m: usize,
    pub n: usize,
    pub degree: f64,
    pub seed: u64,
    pub class: InstanceClass,
    pub mode: Mode,
    pub encoding: Encoding,
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
    pub status: Option<Status>,
    pub ub: Option<f64>,
    pub lb: Option<f64>,
    pub gap: Option<f64>,
    pub rgap: Option<f64>,
    pub wall_seconds: Option<f64>,
    pub nodes_explored: Option<usize>,
    pub relaxations: Option<usize>,
    pub cuts_added: Option<usize>,
    pub root_relaxation_value: Option<f64>,
    pub shd: Option<usize>,
    pub error: Option<String>,
}

/// Per-cell aggregate: means over the seeds that solved, with timeouts
/// counted separately and excluded from the time average.
#[derive(Debug, Clone, Serialize)]
pub struct BenchSummaryRow {
    pub m: usize,
    pub class: InstanceClass,
    pub mode: Mode,
    pub encoding: Encoding,
    pub lambda: f64,
    pub mu: f64,
    pub gamma: f64,
    pub runs: usize,
    pub failures: usize,
    pub timeouts: usize,
    pub mean_shd: Option<f64>,
    pub mean_gap: Option<f64>,
    pub mean_nodes: Option<f64>,
    /// Wall-time mean over non-timeout, non-failed runs.
    pub mean_wall_seconds: Option<f64>,
}

fn super_structure(inst: &GeneratedInstance, class: InstanceClass) -> &UndirectedGraph {
    match class {
        InstanceClass::Moral => &inst.moral,
        InstanceClass::Complete => &inst.complete,
    }
}

fn dag_of(report: &SolveReport, m: usize) -> Result<DirectedGraph> {
    let pairs: Vec<(usize, usize)> = report.arcs.iter().map(|&(j, k, _)| (j, k)).collect();
    DirectedGraph::from_arcs(m, &pairs)
}

/// Run one configuration on one instance; errors land in the row.
fn run_cell(
    inst: &GeneratedInstance,
    class: InstanceClass,
    mode: Mode,
    encoding: Encoding,
    lambda: f64,
    mu: f64,
    gamma: f64,
    delta: DeltaStrategy,
    stop: StopRule,
    threads: usize,
) -> BenchRow {
    let cfg = &inst.config;
    let mut row = BenchRow {
        m: cfg.m,
        n: cfg.n,
        degree: cfg.degree,
        seed: cfg.seed,
        class,
        mode,
        encoding,
        lambda,
        mu,
        gamma,
        status: None,
        ub: None,
        lb: None,
        gap: None,
        rgap: None,
        wall_seconds: None,
        nodes_explored: None,
        relaxations: None,
        cuts_added: None,
        root_relaxation_value: None,
        shd: None,
        error: None,
    };
    let opts = BuildOptions {
        lambda: Some(lambda),
        mu,
        gamma,
        mode,
        encoding,
        delta,
        ..Default::default()
    };
    let built = build_problem(&inst.data, super_structure(inst, class), &opts);
    let (spec, _) = match built {
        Ok(pair) => pair,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let config = SolveConfig { stop, threads, ..Default::default() };
    match bnb::solve(&spec, &config) {
        Ok(report) => {
            row.status = Some(report.status);
            row.ub = Some(report.ub);
            row.lb = Some(report.lb);
            row.gap = Some(report.gap);
            row.rgap = Some(report.rgap);
            row.wall_seconds = Some(report.wall_seconds);
            row.nodes_explored = Some(report.nodes_explored);
            row.relaxations = Some(report.relaxations);
            row.cuts_added = Some(report.cuts_added);
            row.root_relaxation_value = Some(report.root_lb);
            match dag_of(&report, cfg.m).and_then(|est| graphs::shd(&est, &inst.dag)) {
                Ok(d) => row.shd = Some(d),
                Err(e) => row.error = Some(e.to_string()),
            }
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Sweep the grid, returning every row and writing `bench_rows.csv` and
/// `bench_summary.csv` under `out_dir`.
pub fn run_bench(spec: &BenchSpec, out_dir: &Path) -> Result<Vec<BenchRow>> {
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for &m in &spec.m_list {
        for &seed in &spec.seeds {
            let gen = GenConfig { degree: spec.degree, ..GenConfig::new(m, spec.n, seed) };
            let inst = match make_instance(&gen) {
                Ok(i) => i,
                Err(e) => {
                    log::error!("instance m={m} seed={seed}: {e}");
                    continue;
                }
            };
            for &class in &spec.classes {
                for &mode in &spec.modes {
                    for &encoding in &spec.encodings {
                        for &mult in &spec.lambda_multipliers {
                            let lambda = mult * (spec.n as f64).ln();
                            for &gamma in &spec.gammas {
                                for &mu in &spec.mus {
                                    rows.push(run_cell(
                                        &inst,
                                        class,
                                        mode,
                                        encoding,
                                        lambda,
                                        mu,
                                        gamma,
                                        spec.delta,
                                        spec.stop,
                                        spec.threads,
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    let mut w = csv::Writer::from_path(out_dir.join("bench_rows.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;

    let summary = summarize(&rows);
    let mut w = csv::Writer::from_path(out_dir.join("bench_summary.csv"))?;
    for row in &summary {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(rows)
}

/// Group rows into configuration cells (everything but the seed) and
/// average.
pub fn summarize(rows: &[BenchRow]) -> Vec<BenchSummaryRow> {
    use std::collections::BTreeMap;
    // Key by the formatted cell identity; BTreeMap keeps output stable.
    let mut cells: BTreeMap<String, Vec<&BenchRow>> = BTreeMap::new();
    for row in rows {
        let key = format!(
            "{:02}|{:?}|{:?}|{:?}|{:.9}|{:.9}|{:.9}",
            row.m, row.class, row.mode, row.encoding, row.lambda, row.mu, row.gamma
        );
        cells.entry(key).or_default().push(row);
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    cells
        .into_values()
        .map(|group| {
            let first = group[0];
            let failures = group.iter().filter(|r| r.error.is_some()).count();
            let timeouts = group
                .iter()
                .filter(|r| r.status == Some(Status::TimeLimit))
                .count();
            let shds: Vec<f64> =
                group.iter().filter_map(|r| r.shd.map(|d| d as f64)).collect();
            let gaps: Vec<f64> = group.iter().filter_map(|r| r.gap).collect();
            let nodes: Vec<f64> = group
                .iter()
                .filter_map(|r| r.nodes_explored.map(|x| x as f64))
                .collect();
            let walls: Vec<f64> = group
                .iter()
                .filter(|r| r.error.is_none() && r.status != Some(Status::TimeLimit))
                .filter_map(|r| r.wall_seconds)
                .collect();
            BenchSummaryRow {
                m: first.m,
                class: first.class,
                mode: first.mode,
                encoding: first.encoding,
                lambda: first.lambda,
                mu: first.mu,
                gamma: first.gamma,
                runs: group.len(),
                failures,
                timeouts,
                mean_shd: mean(&shds),
                mean_gap: mean(&gaps),
                mean_nodes: mean(&nodes),
                mean_wall_seconds: mean(&walls),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Early-stopping study.
// ---------------------------------------------------------------------------

/// One arm of the early-stopping comparison.
#[derive(Debug, Clone, Serialize)]
pub struct EarlyStopArm {
    pub mean_shd: f64,
    pub std_shd: f64,
    pub mean_gap: f64,
    pub mean_wall_seconds: f64,
    pub total_wall_seconds: f64,
    pub mean_nodes: f64,
    pub timeouts: usize,
    /// Per-seed (shd, gap, wall, status) details.
    pub runs: Vec<EarlyStopRun>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EarlyStopRun {
    pub seed: u64,
    pub shd: usize,
    pub gap: f64,
    pub wall_seconds: f64,
    pub status: Status,
    pub tau: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EarlyStopSummary {
    pub m: usize,
    pub n: usize,
    pub lambda: f64,
    pub mean_tau: f64,
    pub exact: EarlyStopArm,
    pub early: EarlyStopArm,
}

fn arm_from_runs(runs: Vec<EarlyStopRun>) -> EarlyStopArm {
    let k = runs.len().max(1) as f64;
    let mean_shd = runs.iter().map(|r| r.shd as f64).sum::<f64>() / k;
    let var = runs
        .iter()
        .map(|r| (r.shd as f64 - mean_shd).powi(2))
        .sum::<f64>()
        / k;
    EarlyStopArm {
        mean_shd,
        std_shd: var.sqrt(),
        mean_gap: runs.iter().map(|r| r.gap).sum::<f64>() / k,
        mean_wall_seconds: runs.iter().map(|r| r.wall_seconds).sum::<f64>() / k,
        total_wall_seconds: runs.iter().map(|r| r.wall_seconds).sum::<f64>(),
        mean_nodes: 0.0,
        timeouts: runs.iter().filter(|r| r.status == Status::TimeLimit).count(),
        runs,
    }
}

/// Solve each seed twice — to proven optimality and with the early-stopping
/// gap `s ln(m) / n` — using the moral super-structure and the
/// dimension-driven penalty `lambda = ln m`.
pub fn compare_early_stop(
    m: usize,
    n: usize,
    degree: f64,
    seeds: &[u64],
    time_limit: Option<f64>,
) -> Result<EarlyStopSummary> {
    let lambda = (m as f64).ln();
    let mut exact_runs = Vec::new();
    let mut early_runs = Vec::new();
    let mut exact_nodes = 0usize;
    let mut early_nodes = 0usize;
    let mut tau_sum = 0.0;
    for &seed in seeds {
        let gen = GenConfig { degree, ..GenConfig::new(m, n, seed) };
        let inst = make_instance(&gen)?;
        let tau = early_stop_threshold(m, n, inst.moral.num_edges());
        tau_sum += tau;
        let opts = BuildOptions { lambda: Some(lambda), ..Default::default() };
        let (spec, _) = build_problem(&inst.data, &inst.moral, &opts)?;
        for (early, runs) in [(false, &mut exact_runs), (true, &mut early_runs)] {
            let stop = StopRule {
                abs_gap: if early { tau } else { 0.0 },
                rel_gap: 0.0,
                time_limit,
                node_limit: None,
            };
            let config = SolveConfig { stop, ..Default::default() };
            let report = bnb::solve(&spec, &config)?;
            let est = dag_of(&report, m)?;
            let shd = graphs::shd(&est, &inst.dag)?;
            if early {
                early_nodes += report.nodes_explored;
            } else {
                exact_nodes += report.nodes_explored;
            }
            runs.push(EarlyStopRun {
                seed,
                shd,
                gap: report.gap,
                wall_seconds: report.wall_seconds,
                status: report.status,
                tau,
            });
        }
    }
    let k = seeds.len().max(1) as f64;
    let mut exact = arm_from_runs(exact_runs);
    exact.mean_nodes = exact_nodes as f64 / k;
    let mut early = arm_from_runs(early_runs);
    early.mean_nodes = early_nodes as f64 / k;
    Ok(EarlyStopSummary {
        m,
        n,
        lambda,
        mean_tau: tau_sum / k,
        exact,
        early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_smoke_produces_rows_and_files() {
        let spec = BenchSpec {
            m_list: vec![3, 4],
            n: 50,
            seeds: vec![0, 1],
            modes: vec![Mode::Persp],
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let rows = run_bench(&spec, dir.path()).unwrap();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            assert!(row.error.is_none(), "{:?}", row.error);
            assert!(row.lb.unwrap() <= row.ub.unwrap() + 1e-9);
            assert!(row.shd.is_some());
            assert!(row.root_relaxation_value.unwrap() <= row.ub.unwrap() + 1e-9);
        }
        assert!(dir.path().join("bench_rows.csv").exists());
        assert!(dir.path().join("bench_summary.csv").exists());
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 2); // one cell per m
        assert!(summary.iter().all(|s| s.runs == 2 && s.failures == 0));
    }

    #[test]
    fn failed_cells_are_recorded_not_fatal() {
        // gamma < 1 is rejected by the builder; the row must carry the error.
        let spec = BenchSpec {
            m_list: vec![3],
            n: 40,
            seeds: vec![0],
            gammas: vec![0.5],
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let rows = run_bench(&spec, dir.path()).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].error.is_some());
        assert!(rows[0].status.is_none());
        let summary = summarize(&rows);
        assert_eq!(summary[0].failures, 1);
    }

    #[test]
    fn stiffer_penalties_raise_the_root_bound() {
        let inst = make_instance(&GenConfig::new(4, 60, 3)).unwrap();
        let mut roots = Vec::new();
        for mult in [1.0, 2.0, 4.0] {
            let lambda = mult * 60f64.ln();
            let opts = BuildOptions { lambda: Some(lambda), ..Default::default() };
            let (spec, _) = build_problem(&inst.data, &inst.complete, &opts).unwrap();
            let report = bnb::solve(&spec, &SolveConfig::default()).unwrap();
            roots.push(report.root_lb);
        }
        assert!(roots[0] < roots[1] && roots[1] < roots[2], "{roots:?}");
    }

    #[test]
    fn early_stop_smoke() {
        let summary = compare_early_stop(4, 50, 2.0, &[0, 1], Some(30.0)).unwrap();
        assert_eq!(summary.exact.runs.len(), 2);
        assert_eq!(summary.early.runs.len(), 2);
        assert!(summary.lambda > 0.0);
        for run in &summary.early.runs {
            if run.status == Status::GapReached || run.status == Status::Optimal {
                assert!(run.gap <= run.tau + 1e-9);
            }
        }
        // The early arm can never be slower in nodes than the exact arm on
        // the same instances (identical search until the gap rule fires).
        assert!(summary.early.mean_nodes <= summary.exact.mean_nodes + 0.5);
    }
}
