//! Command-line interface for the network-structure solver.
//!
//! Subcommands: `gen` (synthetic instances), `solve` (branch-and-bound),
//! `oracle` (exact reference for small instances), `eval` (structural
//! Hamming distance), and `bench` (configuration grids and the
//! early-stopping study).
//!
//! Exit codes: 0 success, 1 usage or invalid configuration, 2 solver
//! failure, 3 file I/O or malformed input files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bnsl::bnb::{self, early_stop_threshold, SolveConfig, SolveReport, Status, StopRule};
use bnsl::datagen::{self, GenConfig};
use bnsl::evalbench::{self, BenchSpec, InstanceClass};
use bnsl::formulation::{
    build_problem, BuildOptions, DeltaStrategy, Encoding, LambdaRule, Mode, ProblemSpec,
};
use bnsl::graphs::{self, DirectedGraph, UndirectedGraph};
use bnsl::relax::NodeConstraints;
use bnsl::{oracle, Error};

#[derive(Parser)]
#[command(name = "bnsl", version, about = "Sparse network structure learning from continuous data")]
struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance (data, true network, super-structures).
    Gen(GenArgs),
    /// Learn a network from a data matrix by branch-and-bound.
    Solve(SolveArgs),
    /// Exactly solve a small instance by dynamic programming.
    Oracle(OracleArgs),
    /// Structural Hamming distance between two network files.
    Eval(EvalArgs),
    /// Run a benchmark grid or the early-stopping study.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Number of variables.
    #[arg(long)]
    nodes: usize,
    /// Number of samples.
    #[arg(long)]
    samples: usize,
    /// Expected parents per node.
    #[arg(long, default_value_t = 2.0)]
    degree: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    weight_low: f64,
    #[arg(long, default_value_t = 1.0)]
    weight_high: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
    /// Flip each weight's sign with probability 1/2.
    #[arg(long)]
    sign_flip: bool,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProblemArgs {
    /// Data matrix CSV (rows = samples, columns = variables, no header).
    #[arg(long)]
    data: PathBuf,
    /// Super-structure file; all pairs are allowed when omitted.
    #[arg(long = "super")]
    super_path: Option<PathBuf>,
    /// Arc penalty; overrides the rule when set.
    #[arg(long)]
    lambda: Option<f64>,
    /// Penalty rule when --lambda is absent: bic = ln(samples),
    /// logm = ln(variables).
    #[arg(long, value_enum, default_value_t = LambdaRule::Bic)]
    lambda_rule: LambdaRule,
    /// Ridge weight on coefficients.
    #[arg(long, default_value_t = 0.0)]
    mu: f64,
    /// Safety factor for the estimated coefficient box.
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    /// Coefficient box half-width; estimated from the data when omitted.
    #[arg(long)]
    big_m: Option<f64>,
}

impl ProblemArgs {
    fn load(&self) -> bnsl::Result<(ndarray::Array2<f64>, UndirectedGraph)> {
        let data = datagen::read_data_csv(&self.data)?;
        let m = data.ncols();
        let sup = match &self.super_path {
            Some(p) => graphs::read_undirected(p)?,
            None => UndirectedGraph::complete(m),
        };
        Ok((data, sup))
    }

    fn build_options(&self, mode: Mode, encoding: Encoding, delta: DeltaStrategy) -> BuildOptions {
        BuildOptions {
            lambda: self.lambda,
            lambda_rule: self.lambda_rule,
            mu: self.mu,
            gamma: self.gamma,
            big_m: self.big_m,
            delta,
            mode,
            encoding,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Relaxation of the indicator penalty.
    #[arg(long, value_enum, default_value_t = Mode::Persp)]
    mode: Mode,
    /// Acyclicity encoding.
    #[arg(long, value_enum, default_value_t = Encoding::CpLazy)]
    encoding: Encoding,
    /// Diagonal split strategy for the quadratic term.
    #[arg(long, value_enum, default_value_t = DeltaStrategy::Greedy)]
    delta: DeltaStrategy,
    #[arg(long, default_value_t = 0.0)]
    abs_gap: f64,
    #[arg(long, default_value_t = 0.01)]
    rel_gap: f64,
    /// Stop at the statistically safe gap `s ln(m) / n` (s = super-structure
    /// edge count) instead of the configured absolute gap.
    #[arg(long)]
    early_stop: bool,
    /// Seconds; defaults to 50 per variable.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    node_limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Force single-threaded, bit-reproducible search.
    #[arg(long)]
    deterministic: bool,
    /// Seconds between progress lines (visible at --log-level info).
    #[arg(long, default_value_t = 5.0)]
    log_interval: f64,
    /// Write a plain-text model description of the root node here.
    #[arg(long)]
    dump_model: Option<PathBuf>,
    /// Record the (time, lb, ub) trajectory in the report.
    #[arg(long)]
    trajectory: bool,
    /// Output directory for report.json and estimated_dag.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Refuse instances with more variables than this.
    #[arg(long, default_value_t = oracle::EXACT_MAX_NODES)]
    max_nodes: usize,
    /// Output directory for report.json and estimated_dag.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference network file.
    #[arg(long = "true")]
    true_path: PathBuf,
    /// Estimated network file.
    #[arg(long = "est")]
    est_path: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Output directory for CSV/JSON results.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    m_list: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 2.0)]
    degree: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
    seeds: Vec<u64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "moral")]
    classes: Vec<InstanceClass>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "persp")]
    modes: Vec<Mode>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "cp-lazy")]
    encodings: Vec<Encoding>,
    /// Multipliers on the sample-size penalty ln(n).
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    lambda_multipliers: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "2.0")]
    gammas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.0")]
    mus: Vec<f64>,
    #[arg(long, value_enum, default_value_t = DeltaStrategy::Greedy)]
    delta: DeltaStrategy,
    #[arg(long, default_value_t = 0.0)]
    abs_gap: f64,
    #[arg(long, default_value_t = 0.01)]
    rel_gap: f64,
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Run the two-arm early-stopping comparison instead of the grid.
    #[arg(long)]
    early_stop_study: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse(_) => 3,
        Error::NotPsd { .. } | Error::RelaxStalled { .. } => 2,
        _ => 1,
    }
}

fn run(command: Command) -> bnsl::Result<ExitCode> {
    match command {
        Command::Gen(args) => run_gen(args),
        Command::Solve(args) => run_solve(args),
        Command::Oracle(args) => run_oracle(args),
        Command::Eval(args) => run_eval(args),
        Command::Bench(args) => run_bench_cmd(args),
    }
}

fn run_gen(args: GenArgs) -> bnsl::Result<ExitCode> {
    let cfg = GenConfig {
        degree: args.degree,
        weight_low: args.weight_low,
        weight_high: args.weight_high,
        noise_sd: args.noise_sd,
        sign_flip: args.sign_flip,
        ..GenConfig::new(args.nodes, args.samples, args.seed)
    };
    let inst = datagen::make_instance(&cfg)?;
    datagen::write_instance(&inst, &args.out)?;
    println!(
        "wrote instance: m={} n={} arcs={} moral_edges={} -> {}",
        cfg.m,
        cfg.n,
        inst.dag.num_arcs(),
        inst.moral.num_edges(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn dag_from_report(report: &SolveReport, m: usize) -> bnsl::Result<DirectedGraph> {
    let pairs: Vec<(usize, usize)> = report.arcs.iter().map(|&(j, k, _)| (j, k)).collect();
    DirectedGraph::from_arcs(m, &pairs)
}

fn write_outputs(out: &Path, report: &SolveReport, m: usize) -> bnsl::Result<()> {
    std::fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Parse(format!("report serialization: {e}")))?;
    std::fs::write(out.join("report.json"), json)?;
    graphs::write_directed(&dag_from_report(report, m)?, &out.join("estimated_dag.txt"))?;
    Ok(())
}

fn print_summary(report: &SolveReport) {
    println!(
        "status={} ub={:.9} lb={:.9} gap={:.3e} rgap={:.3e} nodes={} cuts={} wall={:.2}s arcs={}",
        match report.status {
            Status::Optimal => "optimal",
            Status::GapReached => "gap_reached",
            Status::TimeLimit => "time_limit",
            Status::NodeLimit => "node_limit",
            Status::SolverFailure => "solver_failure",
            Status::Exact => "exact",
        },
        report.ub,
        report.lb,
        report.gap,
        report.rgap,
        report.nodes_explored,
        report.cuts_added,
        report.wall_seconds,
        report.arcs.len()
    );
    if report.big_m_binding {
        eprintln!(
            "warning: a coefficient sits on the box bound (within 1e-4 of big-M); \
             the box may be truncating the optimum — consider a larger --gamma"
        );
    }
}

fn run_solve(args: SolveArgs) -> bnsl::Result<ExitCode> {
    let (data, sup) = args.problem.load()?;
    let m = data.ncols();
    let n = data.nrows();
    let opts = args.problem.build_options(args.mode, args.encoding, args.delta);
    let (spec, _) = build_problem(&data, &sup, &opts)?;
    if let Some(path) = &args.dump_model {
        bnsl::relax::dump_model(&spec, &NodeConstraints::root(&spec), path)?;
    }
    let mut abs_gap = args.abs_gap;
    if args.early_stop {
        let tau = early_stop_threshold(m, n, sup.num_edges());
        println!("tau={tau:.9}");
        abs_gap = abs_gap.max(tau);
    }
    let config = SolveConfig {
        stop: StopRule {
            abs_gap,
            rel_gap: args.rel_gap,
            time_limit: args.time_limit.or(Some(50.0 * m as f64)),
            node_limit: args.node_limit,
        },
        threads: args.threads,
        deterministic: args.deterministic,
        log_interval: args.log_interval,
        record_trajectory: args.trajectory,
        ..Default::default()
    };
    let report = bnb::solve(&spec, &config)?;
    write_outputs(&args.out, &report, m)?;
    print_summary(&report);
    if report.status == Status::SolverFailure {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_oracle(args: OracleArgs) -> bnsl::Result<ExitCode> {
    let (data, sup) = args.problem.load()?;
    let m = data.ncols();
    let opts = args
        .problem
        .build_options(Mode::Persp, Encoding::CpLazy, DeltaStrategy::Zero);
    let (spec, _) = build_problem(&data, &sup, &opts)?;
    let started = std::time::Instant::now();
    let result = oracle::exact_solve(&spec, args.max_nodes)?;
    let report = oracle_report(&spec, &result, started.elapsed().as_secs_f64());
    write_outputs(&args.out, &report, m)?;
    print_summary(&report);
    Ok(ExitCode::SUCCESS)
}

/// Shape an exact result like a search report so downstream tooling can
/// consume either.
fn oracle_report(spec: &ProblemSpec, result: &oracle::OracleResult, wall: f64) -> SolveReport {
    let arcs: Vec<(usize, usize, f64)> =
        result.beta.iter().map(|(&(j, k), &b)| (j, k, b)).collect();
    SolveReport {
        status: Status::Exact,
        ub: result.score,
        lb: result.score,
        gap: 0.0,
        rgap: 0.0,
        nodes_explored: result.subsets_evaluated,
        cuts_added: 0,
        relaxations: 0,
        wall_seconds: wall,
        root_lb: result.score,
        big_m_binding: result.bigm_exceeded,
        arcs,
        config: bnb::ConfigEcho {
            mode: spec.mode,
            encoding: spec.encoding,
            lambda: spec.penalty.lambda,
            mu: spec.penalty.mu,
            big_m: spec.big_m,
            delta_total: spec.delta.sum(),
            abs_gap: 0.0,
            rel_gap: 0.0,
            time_limit: None,
            node_limit: None,
            threads: 1,
            relax_tol: 0.0,
        },
        trajectory: None,
    }
}

fn run_eval(args: EvalArgs) -> bnsl::Result<ExitCode> {
    let truth = graphs::read_directed(&args.true_path)?;
    let est = graphs::read_directed(&args.est_path)?;
    let d = graphs::shd(&est, &truth)?;
    println!("SHD {d}");
    Ok(ExitCode::SUCCESS)
}

fn run_bench_cmd(args: BenchArgs) -> bnsl::Result<ExitCode> {
    std::fs::create_dir_all(&args.out)?;
    if args.early_stop_study {
        let m = args.m_list.first().copied().unwrap_or(10);
        let summary =
            evalbench::compare_early_stop(m, args.n, args.degree, &args.seeds, args.time_limit)?;
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Parse(format!("summary serialization: {e}")))?;
        std::fs::write(args.out.join("early_stop.json"), json)?;
        println!(
            "early-stop study m={} n={} tau~{:.6}: exact shd {:.3} ({:.2}s total) vs early shd {:.3} ({:.2}s total)",
            summary.m,
            summary.n,
            summary.mean_tau,
            summary.exact.mean_shd,
            summary.exact.total_wall_seconds,
            summary.early.mean_shd,
            summary.early.total_wall_seconds,
        );
        return Ok(ExitCode::SUCCESS);
    }
    let spec = BenchSpec {
        m_list: args.m_list,
        n: args.n,
        degree: args.degree,
        seeds: args.seeds,
        classes: args.classes,
        modes: args.modes,
        encodings: args.encodings,
        lambda_multipliers: args.lambda_multipliers,
        gammas: args.gammas,
        mus: args.mus,
        delta: args.delta,
        stop: StopRule {
            abs_gap: args.abs_gap,
            rel_gap: args.rel_gap,
            time_limit: args.time_limit,
            node_limit: None,
        },
        threads: args.threads,
    };
    let rows = evalbench::run_bench(&spec, &args.out)?;
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    println!(
        "bench complete: {} runs, {} failures -> {}",
        rows.len(),
        failures,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}
