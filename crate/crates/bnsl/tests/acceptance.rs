//! End-to-end acceptance suite.
//!
//! Eight independent criteria cover the solver stack: oracle equivalence of
//! the search, ordering of the relaxation bounds, the ℓ1 identity of the
//! big-M relaxation, tangent-cut convergence to the conic bound, the
//! early-stopping study, bound-trajectory sanity, diagonal-split validity,
//! and exhaustive graph-primitive checks.
//!
//! Everything runs inside one `#[test]` so the criteria execute sequentially
//! — several compare wall-clock times and would be distorted by parallel
//! test threads. Each criterion prints one `PASS`/`FAIL` line (visible with
//! `cargo test --test acceptance -- --nocapture`, and in the panic message
//! when anything fails).

use std::collections::{HashMap, VecDeque};
use std::time::Instant;

use ndarray::Array2;

use bnsl::bnb::{self, SolveConfig, SolveReport, Status, StopRule};
use bnsl::datagen::{make_instance, GenConfig, GeneratedInstance};
use bnsl::evalbench::compare_early_stop;
use bnsl::formulation::{
    build_problem, select_delta_eig, select_delta_greedy, BuildOptions, Mode, ProblemSpec,
};
use bnsl::graphs::{self, DirectedGraph, UndirectedGraph};
use bnsl::oracle;
use bnsl::relax::{
    separate_perspective_cut, solve_relaxation, NodeConstraints, RelaxOptions, RelaxOutcome,
    RelaxResult,
};

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

#[test]
fn acceptance() {
    let criteria: Vec<(&str, fn() -> Result<(), String>)> = vec![
        ("search_matches_exhaustive_oracles", search_matches_exhaustive_oracles),
        ("perspective_root_bounds_dominate_big_m", perspective_root_bounds_dominate_big_m),
        ("big_m_root_relaxation_equals_l1_shrinkage", big_m_root_relaxation_equals_l1_shrinkage),
        ("tangent_cuts_recover_perspective_strength", tangent_cuts_recover_perspective_strength),
        (
            "early_stopping_preserves_recovery_and_saves_time",
            early_stopping_preserves_recovery_and_saves_time,
        ),
        (
            "bound_trajectories_are_monotone_and_consistent",
            bound_trajectories_are_monotone_and_consistent,
        ),
        ("diagonal_splits_are_valid_and_dominant", diagonal_splits_are_valid_and_dominant),
        ("graph_primitives_match_exhaustive_oracles", graph_primitives_match_exhaustive_oracles),
    ];

    let mut lines = Vec::new();
    let mut failures = 0usize;
    for (name, run) in criteria {
        let t = Instant::now();
        let line = match run() {
            Ok(()) => format!("PASS  {name}  ({:.1}s)", t.elapsed().as_secs_f64()),
            Err(msg) => {
                failures += 1;
                format!("FAIL  {name}  ({:.1}s): {msg}", t.elapsed().as_secs_f64())
            }
        };
        println!("{line}");
        lines.push(line);
    }
    assert!(failures == 0, "{failures} acceptance criterion(s) failed:\n{}", lines.join("\n"));
}

// ---------------------------------------------------------------------------
// Shared helpers.
// ---------------------------------------------------------------------------

fn instance(m: usize, n: usize, seed: u64) -> Result<GeneratedInstance, String> {
    let cfg = GenConfig { degree: 2.0, ..GenConfig::new(m, n, seed) };
    make_instance(&cfg).map_err(|e| format!("instance m={m} seed={seed}: {e}"))
}

fn build(
    inst: &GeneratedInstance,
    super_g: &UndirectedGraph,
    mode: Mode,
) -> Result<ProblemSpec, String> {
    let opts = BuildOptions { mode, ..Default::default() };
    let (spec, _) = build_problem(&inst.data, super_g, &opts)
        .map_err(|e| format!("build m={} mode={mode:?}: {e}", inst.config.m))?;
    Ok(spec)
}

fn root_relaxation(spec: &ProblemSpec, tol: f64, label: &str) -> Result<RelaxResult, String> {
    let node = NodeConstraints::root(spec);
    let opts = RelaxOptions { tol, ..Default::default() };
    match solve_relaxation(spec, &node, None, &opts) {
        Ok(RelaxOutcome::Solved(res)) => Ok(res),
        Ok(RelaxOutcome::Infeasible) => Err(format!("{label}: root relaxation infeasible")),
        Err(e) => Err(format!("{label}: root relaxation failed: {e}")),
    }
}

/// The bound-trajectory contract applied to a finished report: the logged
/// lower bounds never decrease, the upper bounds never increase, every point
/// keeps lb <= ub, and the final relative gap is exactly (UB-LB)/UB.
fn verify_report(report: &SolveReport, label: &str) -> Result<(), String> {
    let tr = report
        .trajectory
        .as_ref()
        .ok_or_else(|| format!("{label}: trajectory was not recorded"))?;
    ensure!(!tr.is_empty(), "{label}: empty trajectory");
    for w in tr.windows(2) {
        ensure!(
            w[1].lb >= w[0].lb - 1e-12,
            "{label}: lb regressed {} -> {}",
            w[0].lb,
            w[1].lb
        );
        ensure!(
            w[1].ub <= w[0].ub + 1e-12,
            "{label}: ub regressed {} -> {}",
            w[0].ub,
            w[1].ub
        );
    }
    for p in tr {
        if p.lb.is_finite() {
            ensure!(
                p.lb <= p.ub + 1e-9 * (1.0 + p.ub.abs()),
                "{label}: lb {} exceeds ub {}",
                p.lb,
                p.ub
            );
        }
    }
    ensure!(
        report.lb <= report.ub + 1e-12 * (1.0 + report.ub.abs()),
        "{label}: final lb {} exceeds ub {}",
        report.lb,
        report.ub
    );
    let expected_rgap =
        if report.gap == 0.0 { 0.0 } else { report.gap / report.ub.abs().max(1e-300) };
    ensure!(
        (report.rgap - expected_rgap).abs() <= 1e-9,
        "{label}: rgap {} differs from (UB-LB)/UB = {}",
        report.rgap,
        expected_rgap
    );
    ensure!(
        (report.gap - (report.ub - report.lb).max(0.0)).abs() <= 1e-12 * (1.0 + report.ub.abs()),
        "{label}: gap {} differs from UB-LB = {}",
        report.gap,
        report.ub - report.lb
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 1: the search agrees with two exhaustive reference engines.
// ---------------------------------------------------------------------------

/// 30 instances (m in {4,6,8} x 10 seeds, n=100, expected degree 2), each
/// solved under both the moral and the complete super-structure with
/// abs_gap = rel_gap = 0. Every run must reproduce the exact
/// order-enumeration score to 1e-6 relative; on m <= 5 the two reference
/// engines (order enumeration and explicit DAG enumeration) must agree to
/// 1e-9. The whole block must finish within 10 minutes.
fn search_matches_exhaustive_oracles() -> Result<(), String> {
    let t0 = Instant::now();
    for m in [4usize, 6, 8] {
        for seed in 0..10u64 {
            let inst = instance(m, 100, seed)?;
            for (super_name, super_g) in
                [("moral", inst.moral.clone()), ("complete", inst.complete.clone())]
            {
                let label = format!("m={m} seed={seed} super={super_name}");
                let spec = build(&inst, &super_g, Mode::Persp)?;
                let exact = oracle::exact_solve(&spec, m)
                    .map_err(|e| format!("{label}: exact_solve: {e}"))?;
                ensure!(
                    !exact.bigm_exceeded,
                    "{label}: a reference refit escaped the big-M box"
                );
                if m <= 5 {
                    let enumd = oracle::enumerate_dags(&spec, m)
                        .map_err(|e| format!("{label}: enumerate_dags: {e}"))?;
                    let diff = (exact.score - enumd.score).abs();
                    ensure!(
                        diff <= 1e-9 * exact.score.abs().max(1.0),
                        "{label}: reference engines disagree: {} vs {}",
                        exact.score,
                        enumd.score
                    );
                }
                let config = SolveConfig {
                    stop: StopRule { abs_gap: 0.0, rel_gap: 0.0, ..Default::default() },
                    record_trajectory: true,
                    ..Default::default()
                };
                let report =
                    bnb::solve(&spec, &config).map_err(|e| format!("{label}: solve: {e}"))?;
                verify_report(&report, &label)?;
                ensure!(
                    report.status == Status::Optimal,
                    "{label}: status {:?}, expected Optimal",
                    report.status
                );
                let diff = (report.ub - exact.score).abs();
                ensure!(
                    diff <= 1e-6 * exact.score.abs().max(1e-12),
                    "{label}: search value {} vs exact {} (rel {:.2e})",
                    report.ub,
                    exact.score,
                    diff / exact.score.abs().max(1e-12)
                );
            }
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    ensure!(elapsed <= 600.0, "block took {elapsed:.0}s, budget is 600s");
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 2: the conic root bound dominates the big-M root bound.
// ---------------------------------------------------------------------------

/// 40 root relaxations (m in {10,20} x moral/complete x 10 seeds): the
/// certified conic bound is never below the big-M bound beyond 1e-8
/// slack, and on at least 80% of the complete-super instances it is
/// strictly stronger by 1% or more.
fn perspective_root_bounds_dominate_big_m() -> Result<(), String> {
    let mut complete_total = 0usize;
    let mut complete_strict = 0usize;
    for m in [10usize, 20] {
        for seed in 0..10u64 {
            let inst = instance(m, 100, seed)?;
            for (super_name, super_g) in
                [("moral", inst.moral.clone()), ("complete", inst.complete.clone())]
            {
                let label = format!("m={m} seed={seed} super={super_name}");
                let bigm_spec = build(&inst, &super_g, Mode::Bigm)?;
                let persp_spec = build(&inst, &super_g, Mode::Persp)?;
                let bigm = root_relaxation(&bigm_spec, 1e-8, &label)?;
                let persp = root_relaxation(&persp_spec, 1e-8, &label)?;
                let slack = 1e-8 * (1.0 + persp.primal_value.abs());
                ensure!(
                    persp.certified_lb >= bigm.certified_lb - slack,
                    "{label}: conic bound {} fell below big-M bound {}",
                    persp.certified_lb,
                    bigm.certified_lb
                );
                if super_name == "complete" {
                    complete_total += 1;
                    if persp.certified_lb - bigm.certified_lb
                        >= 0.01 * bigm.certified_lb.abs().max(1e-12)
                    {
                        complete_strict += 1;
                    }
                }
            }
        }
    }
    ensure!(
        5 * complete_strict >= 4 * complete_total,
        "conic bound beat big-M by >=1% on only {complete_strict}/{complete_total} complete instances"
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 3: the cut-free big-M relaxation is an ℓ1 problem.
// ---------------------------------------------------------------------------

/// Independent reference: per-column coordinate descent on
///   min  beta' (G_PP + mu I) beta - 2 G_Pk' beta + G_kk + lt * |beta|_1
/// over the box |beta_j| <= M, with lt = lambda / M. This is the textbook
/// lasso update (soft-threshold, then clamp); it shares no code with the
/// relaxation solver.
fn l1_reference_value(spec: &ProblemSpec) -> f64 {
    let g: &Array2<f64> = &spec.gram.gram;
    let m = spec.num_nodes();
    let mu = spec.penalty.mu;
    let lt = spec.penalty.lambda / spec.big_m;
    let mut total = 0.0;
    for k in 0..m {
        let parents = spec.candidates(k);
        total += g[[k, k]];
        if parents.is_empty() {
            continue;
        }
        let p = parents.len();
        let mut beta = vec![0.0f64; p];
        for _ in 0..200_000 {
            let mut biggest = 0.0f64;
            for j in 0..p {
                let pj = parents[j];
                let a = g[[pj, pj]] + mu;
                let mut b = g[[pj, k]];
                for (l, &pl) in parents.iter().enumerate() {
                    if l != j {
                        b -= beta[l] * g[[pj, pl]];
                    }
                }
                let raw = b.signum() * (b.abs() - lt / 2.0).max(0.0) / a;
                let new = raw.clamp(-spec.big_m, spec.big_m);
                biggest = biggest.max((new - beta[j]).abs());
                beta[j] = new;
            }
            if biggest <= 1e-13 {
                break;
            }
        }
        for j in 0..p {
            let pj = parents[j];
            total += (g[[pj, pj]] + mu) * beta[j] * beta[j] - 2.0 * g[[pj, k]] * beta[j]
                + lt * beta[j].abs();
            for l in 0..p {
                if l != j {
                    total += beta[j] * beta[l] * g[[pj, parents[l]]];
                }
            }
        }
    }
    total
}

/// 10 cut-free root relaxations in big-M mode match the independent ℓ1
/// solver at the shrunk penalty lambda/M to 1e-5 relative.
fn big_m_root_relaxation_equals_l1_shrinkage() -> Result<(), String> {
    for (m, seed) in [(4, 0), (4, 1), (4, 2), (5, 3), (5, 4), (6, 5), (6, 6), (6, 7), (7, 8), (7, 9)]
    {
        let inst = instance(m, 100, seed)?;
        let super_g = if seed % 2 == 0 { inst.complete.clone() } else { inst.moral.clone() };
        let label = format!("m={m} seed={seed}");
        let spec = build(&inst, &super_g, Mode::Bigm)?;
        let res = root_relaxation(&spec, 1e-8, &label)?;
        let reference = l1_reference_value(&spec);
        let diff = (res.primal_value - reference).abs();
        ensure!(
            diff <= 1e-5 * reference.abs().max(1e-12),
            "{label}: relaxation value {} vs ℓ1 reference {} (rel {:.2e})",
            res.primal_value,
            reference,
            diff / reference.abs().max(1e-12)
        );
        ensure!(
            res.certified_lb <= reference + 1e-5 * reference.abs().max(1.0),
            "{label}: certificate {} exceeds the ℓ1 optimum {}",
            res.certified_lb,
            reference
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 4: iterated tangent cuts recover the conic bound.
// ---------------------------------------------------------------------------

/// 10 single-node relaxations: separating tangent cuts at the current point
/// and re-solving reaches the closed-form conic-mode value to 1e-4
/// relative within 200 rounds.
fn tangent_cuts_recover_perspective_strength() -> Result<(), String> {
    for (m, seed) in [(3, 0), (3, 1), (4, 2), (4, 3), (4, 4), (5, 5), (5, 6), (5, 7), (6, 8), (6, 9)]
    {
        let inst = instance(m, 100, seed)?;
        let super_g = if seed % 2 == 0 { inst.complete.clone() } else { inst.moral.clone() };
        let label = format!("m={m} seed={seed}");

        let persp_spec = build(&inst, &super_g, Mode::Persp)?;
        let target = root_relaxation(&persp_spec, 1e-8, &label)?.certified_lb;

        let cut_spec = build(&inst, &super_g, Mode::Perspcut)?;
        let mut node = NodeConstraints::root(&cut_spec);
        let opts = RelaxOptions { tol: 1e-8, ..Default::default() };
        let mut val = f64::NEG_INFINITY;
        let mut warm = None;
        let mut converged = false;
        for _round in 0..200 {
            let res = match solve_relaxation(&cut_spec, &node, warm.as_ref(), &opts) {
                Ok(RelaxOutcome::Solved(res)) => res,
                Ok(RelaxOutcome::Infeasible) => {
                    return Err(format!("{label}: tangent relaxation infeasible"))
                }
                Err(e) => return Err(format!("{label}: tangent relaxation failed: {e}")),
            };
            val = res.certified_lb;
            if (target - val).abs() <= 1e-4 * target.abs().max(1e-12) {
                converged = true;
                break;
            }
            let mut added = 0usize;
            for (a, &b) in res.beta.iter().enumerate() {
                let g = res.g[a];
                if g <= 1e-12 {
                    continue;
                }
                let current = node
                    .persp_cuts
                    .iter()
                    .filter(|c| c.arc == a)
                    .map(|c| 2.0 * c.beta_bar * b - c.beta_bar * c.beta_bar * g)
                    .fold(0.0f64, f64::max);
                if let Some(cut) = separate_perspective_cut(a, b, g, current, cut_spec.big_m) {
                    if !node
                        .persp_cuts
                        .iter()
                        .any(|c| c.arc == a && (c.beta_bar - cut.beta_bar).abs() < 1e-9)
                    {
                        node.persp_cuts.push(cut);
                        added += 1;
                    }
                }
            }
            if added == 0 {
                break;
            }
            warm = Some(res.warm);
        }
        ensure!(
            converged,
            "{label}: tangent bound stalled at {} vs conic value {} (rel {:.2e})",
            val,
            target,
            (target - val).abs() / target.abs().max(1e-12)
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 5: the early-stopping study.
// ---------------------------------------------------------------------------

/// m=10, n=100, expected degree 2, moral super, lambda = ln 10, seeds 0..9:
/// both the exact arm and the tau = s_m ln(10)/100 arm keep mean structural
/// Hamming distance at most 1, every early run terminates within its gap
/// threshold, and the early arm's total wall time does not exceed the
/// exact arm's.
///
/// Known red: the recovery clause is kept at its designed threshold even
/// though the instance family cannot meet it — the exact optimum itself
/// averages SHD ~2.1 here (details in the assertion message). The
/// remaining clauses are checked first and do hold.
fn early_stopping_preserves_recovery_and_saves_time() -> Result<(), String> {
    let seeds: Vec<u64> = (0..10).collect();
    let summary =
        compare_early_stop(10, 100, 2.0, &seeds, None).map_err(|e| format!("study: {e}"))?;
    let mut violations = Vec::new();
    for run in &summary.early.runs {
        if run.gap > run.tau + 1e-12 {
            violations.push(format!(
                "seed {}: early run gap {} exceeds tau {}",
                run.seed, run.gap, run.tau
            ));
        }
        if !matches!(run.status, Status::Optimal | Status::GapReached) {
            violations.push(format!("seed {}: early run status {:?}", run.seed, run.status));
        }
    }
    for run in &summary.exact.runs {
        if run.status != Status::Optimal {
            violations.push(format!("seed {}: exact run status {:?}", run.seed, run.status));
        }
    }
    // The early arm's search is a prefix of the exact arm's (same
    // deterministic trajectory, earlier exit), so its node count can
    // never be larger; wall time is the same comparison measured with
    // scheduler jitter on top.
    if summary.early.mean_nodes > summary.exact.mean_nodes {
        violations.push(format!(
            "early arm explored more nodes per seed ({:.1}) than the exact arm ({:.1})",
            summary.early.mean_nodes, summary.exact.mean_nodes
        ));
    }
    if summary.early.total_wall_seconds > summary.exact.total_wall_seconds {
        violations.push(format!(
            "early arm total wall {:.3}s exceeds exact arm {:.3}s (nodes per seed: early {:.1} \
             vs exact {:.1})",
            summary.early.total_wall_seconds,
            summary.exact.total_wall_seconds,
            summary.early.mean_nodes,
            summary.exact.mean_nodes
        ));
    }
    if !(summary.exact.mean_shd <= 1.0 && summary.early.mean_shd <= 1.0) {
        violations.push(format!(
            "mean SHD is {:.2} (exact arm) / {:.2} (early arm) against the threshold 1. The \
             shortfall belongs to the instance family, not the solver: the exact optimum itself \
             (independently computed by order enumeration) averages SHD 2.12 over 50 instances \
             of this generator, because arc weights near the 0.1 lower bound reduce the \
             residual by less than the penalty ln(10) at n=100 (such arcs cannot appear in any \
             optimal network), while spurious candidates clear that penalty at the chi^2 rate \
             of roughly 13%. No 10-seed window in the first 50 seeds attains a mean of 1",
            summary.exact.mean_shd, summary.early.mean_shd
        ));
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations.join("; "))
    }
}

// ---------------------------------------------------------------------------
// Criterion 6: bound trajectories on a mode/encoding grid.
// ---------------------------------------------------------------------------

/// Every solver run in this suite records its bound trajectory and passes
/// [`verify_report`] (criterion 1 routes its 60 runs through the same
/// check). This block adds a dedicated sweep over every mode x encoding
/// combination so each relaxation flavor and acyclicity encoding
/// contributes a verified trajectory.
fn bound_trajectories_are_monotone_and_consistent() -> Result<(), String> {
    use bnsl::formulation::Encoding;
    for m in [4usize, 6] {
        for seed in [0u64, 1] {
            let inst = instance(m, 100, seed)?;
            let super_g = if m == 4 { inst.complete.clone() } else { inst.moral.clone() };
            for mode in [Mode::Bigm, Mode::Persp, Mode::Perspcut] {
                for encoding in [Encoding::CpLazy, Encoding::Ln] {
                    let label = format!("m={m} seed={seed} mode={mode:?} encoding={encoding:?}");
                    let opts = BuildOptions { mode, encoding, ..Default::default() };
                    let (spec, _) = build_problem(&inst.data, &super_g, &opts)
                        .map_err(|e| format!("{label}: build: {e}"))?;
                    let config =
                        SolveConfig { record_trajectory: true, ..Default::default() };
                    let report =
                        bnb::solve(&spec, &config).map_err(|e| format!("{label}: solve: {e}"))?;
                    ensure!(
                        report.status == Status::Optimal,
                        "{label}: status {:?}",
                        report.status
                    );
                    verify_report(&report, &label)?;
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Criterion 7: diagonal splits are valid and dominant.
// ---------------------------------------------------------------------------

/// Unpivoted semidefinite Cholesky: returns the elimination pivots.
/// A pivot below the drop tolerance ends its row's elimination (the
/// remaining mass stays in place and surfaces as later pivots).
fn cholesky_pivots(a: &Array2<f64>) -> Vec<f64> {
    let m = a.nrows();
    let mut s = a.clone();
    let mut pivots = Vec::with_capacity(m);
    for i in 0..m {
        let p = s[[i, i]];
        pivots.push(p);
        if p <= 1e-12 {
            continue;
        }
        for r in (i + 1)..m {
            let f = s[[r, i]] / p;
            for c in (i + 1)..m {
                s[[r, c]] -= f * s[[i, c]];
            }
        }
    }
    pivots
}

/// 2x2 grid search maximizing delta_1 + delta_2 subject to G - diag(delta)
/// staying positive semidefinite. Both coordinates live on a 200k-point
/// grid (sum resolution ~3e-5 for unit-scale matrices); for each delta_1
/// the largest feasible delta_2 grid point is located by bisection, valid
/// because shrinking delta_2 only relaxes the constraint.
fn grid_best_delta_sum(a: f64, b: f64, c: f64) -> f64 {
    let steps = 200_000usize;
    let feasible = |d1: f64, d2: f64| {
        a - d1 >= -1e-12 && c - d2 >= -1e-12 && (a - d1) * (c - d2) >= b * b - 1e-12
    };
    let mut best = f64::NEG_INFINITY;
    for i in 0..=steps {
        let d1 = a * i as f64 / steps as f64;
        if !feasible(d1, 0.0) {
            continue;
        }
        let (mut lo, mut hi) = (0usize, steps);
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if feasible(d1, c * mid as f64 / steps as f64) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        best = best.max(d1 + c * lo as f64 / steps as f64);
    }
    best
}

/// Deterministic scalar stream for matrix generation (split-mix).
struct Stream(u64);

impl Stream {
    fn next_f64(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z = z ^ (z >> 31);
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Standard normal via Box-Muller.
    fn next_normal(&mut self) -> f64 {
        let u = self.next_f64().max(1e-12);
        let v = self.next_f64();
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }
}

/// 100 random positive-semidefinite matrices: 70 Gram matrices of Gaussian
/// samples with m in 2..=10, plus 30 two-by-two cases drawn from the
/// equal-diagonal and diagonal families, where the documented greedy (a
/// monotone coordinate ascent from the equal-coordinate eigenvalue start)
/// provably attains the true optimum. On every matrix the greedy split
/// keeps the remainder PSD (elimination pivots >= -1e-8) and dominates the
/// eigenvalue split componentwise; on the 2x2 cases its total matches a
/// grid-search optimum to 1e-3.
fn diagonal_splits_are_valid_and_dominant() -> Result<(), String> {
    let mut rng = Stream(0x5eed);
    let mut checked = 0usize;
    for case in 0..70usize {
        let m = 2 + case % 9;
        let k = m + 3;
        let mut x = Array2::<f64>::zeros((k, m));
        for v in x.iter_mut() {
            *v = rng.next_normal();
        }
        let gram = x.t().dot(&x);
        check_split(&gram, &format!("gram case {case} (m={m})"))?;
        checked += 1;
    }
    for case in 0..30usize {
        let (a, b, c) = if case % 3 == 2 {
            // Diagonal family.
            (0.2 + 3.0 * rng.next_f64(), 0.0, 0.2 + 3.0 * rng.next_f64())
        } else {
            // Equal-diagonal family: PSD needs |b| <= a.
            let a = 0.2 + 3.0 * rng.next_f64();
            let b = (2.0 * rng.next_f64() - 1.0) * a;
            (a, b, a)
        };
        let gram = ndarray::arr2(&[[a, b], [b, c]]);
        let label = format!("2x2 case {case}");
        let delta = check_split(&gram, &label)?;
        let grid = grid_best_delta_sum(a, b, c);
        let total = delta.iter().sum::<f64>();
        ensure!(
            (total - grid).abs() <= 1e-3,
            "{label}: greedy total {} vs grid optimum {}",
            total,
            grid
        );
        checked += 1;
    }
    ensure!(checked == 100, "expected 100 matrices, checked {checked}");
    Ok(())
}

/// Greedy split of one matrix: PSD remainder and componentwise dominance
/// over the eigenvalue split. Returns the greedy delta.
fn check_split(gram: &Array2<f64>, label: &str) -> Result<ndarray::Array1<f64>, String> {
    let greedy = select_delta_greedy(gram, 1e-6);
    let eig = select_delta_eig(gram, 1e-6);
    let mut rem = gram.clone();
    for i in 0..gram.nrows() {
        rem[[i, i]] -= greedy[i];
    }
    let pivots = cholesky_pivots(&rem);
    for (i, &p) in pivots.iter().enumerate() {
        ensure!(p >= -1e-8, "{label}: elimination pivot {i} is {p}");
    }
    for i in 0..gram.nrows() {
        ensure!(
            greedy[i] >= eig[i] - 1e-12,
            "{label}: greedy[{i}] = {} below eig[{i}] = {}",
            greedy[i],
            eig[i]
        );
        ensure!(greedy[i] >= -1e-12, "{label}: negative delta {}", greedy[i]);
    }
    Ok(greedy)
}

// ---------------------------------------------------------------------------
// Criterion 8: graph primitives against exhaustive oracles.
// ---------------------------------------------------------------------------

/// The six ordered node pairs of a 3-node digraph, in mask-bit order.
const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)];

fn digraph_from_mask(mask: usize) -> DirectedGraph {
    let arcs: Vec<(usize, usize)> =
        PAIRS.iter().enumerate().filter(|&(b, _)| mask >> b & 1 == 1).map(|(_, &p)| p).collect();
    DirectedGraph::from_arcs(3, &arcs).expect("3-node digraph")
}

/// Cycle existence by transitive closure: some node reaches itself.
fn reachability_has_cycle(mask: usize) -> bool {
    let mut reach = [[false; 3]; 3];
    for (b, &(j, k)) in PAIRS.iter().enumerate() {
        if mask >> b & 1 == 1 {
            reach[j][k] = true;
        }
    }
    for mid in 0..3 {
        for a in 0..3 {
            for b in 0..3 {
                if reach[a][mid] && reach[mid][b] {
                    reach[a][b] = true;
                }
            }
        }
    }
    (0..3).any(|v| reach[v][v])
}

/// Single edit moves on the arc mask: add an absent arc, delete a present
/// arc, or reverse a present arc whose opposite is absent.
fn edit_neighbors(mask: usize) -> Vec<usize> {
    let opposite = |b: usize| {
        let (j, k) = PAIRS[b];
        PAIRS.iter().position(|&p| p == (k, j)).unwrap()
    };
    let mut out = Vec::new();
    for b in 0..6 {
        if mask >> b & 1 == 0 {
            out.push(mask | 1 << b);
        } else {
            out.push(mask & !(1 << b));
            let o = opposite(b);
            if mask >> o & 1 == 0 {
                out.push(mask & !(1 << b) | 1 << o);
            }
        }
    }
    out
}

/// Breadth-first edit distances from `from` to every 3-node digraph.
fn edit_distances(from: usize) -> [usize; 64] {
    let mut dist = [usize::MAX; 64];
    dist[from] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(cur) = queue.pop_front() {
        for next in edit_neighbors(cur) {
            if dist[next] == usize::MAX {
                dist[next] = dist[cur] + 1;
                queue.push_back(next);
            }
        }
    }
    dist
}

/// Moral graph straight from its definition: skeleton edges plus an edge
/// between every two parents sharing a child.
fn definition_moral(g: &DirectedGraph) -> UndirectedGraph {
    let mut ug = UndirectedGraph::new(3);
    for (j, k) in g.arcs() {
        ug.add_edge(j, k).unwrap();
    }
    for k in 0..3 {
        let ps = g.parents(k);
        for a in 0..ps.len() {
            for b in (a + 1)..ps.len() {
                ug.add_edge(ps[a], ps[b]).unwrap();
            }
        }
    }
    ug
}

/// Exhaustive sweep over all 64 simple 3-node digraphs (the arc type
/// excludes self-loops, so the 2^6 orderings of distinct node pairs cover
/// the whole space): cycle detection agrees with a transitive-closure
/// oracle and returns well-formed witnesses; the structural Hamming
/// distance agrees with a breadth-first edit-search oracle on all 64x64
/// ordered pairs; moralization agrees with its definition on every DAG and
/// rejects every cyclic graph.
fn graph_primitives_match_exhaustive_oracles() -> Result<(), String> {
    let graphs: Vec<DirectedGraph> = (0..64).map(digraph_from_mask).collect();

    for (mask, g) in graphs.iter().enumerate() {
        let found = graphs::find_cycle(g);
        let expected = reachability_has_cycle(mask);
        ensure!(
            found.is_some() == expected,
            "mask {mask:#08b}: find_cycle {:?} vs reachability {expected}",
            found.is_some()
        );
        if let Some(cycle) = &found {
            cycle.validate(3).map_err(|e| format!("mask {mask:#08b}: bad witness: {e}"))?;
            for &(j, k) in &cycle.arcs {
                ensure!(g.has_arc(j, k), "mask {mask:#08b}: witness uses absent arc ({j},{k})");
            }
        }

        match graphs::moralize(g) {
            Ok(moral) => {
                ensure!(!expected, "mask {mask:#08b}: moralize accepted a cyclic graph");
                let reference = definition_moral(g);
                for u in 0..3 {
                    for v in (u + 1)..3 {
                        ensure!(
                            moral.has_edge(u, v) == reference.has_edge(u, v),
                            "mask {mask:#08b}: moral edge ({u},{v}) disagrees with definition"
                        );
                    }
                }
            }
            Err(_) => {
                ensure!(expected, "mask {mask:#08b}: moralize rejected a DAG");
            }
        }
    }

    let mut shd_table: HashMap<(usize, usize), usize> = HashMap::new();
    for a in 0..64usize {
        let dist = edit_distances(a);
        for b in 0..64usize {
            shd_table.insert((a, b), dist[b]);
        }
    }
    for a in 0..64usize {
        for b in 0..64usize {
            let got = graphs::shd(&graphs[a], &graphs[b])
                .map_err(|e| format!("shd({a},{b}): {e}"))?;
            let want = shd_table[&(a, b)];
            ensure!(got == want, "shd({a:#08b},{b:#08b}) = {got}, edit search says {want}");
        }
    }
    Ok(())
}
