//! End-to-end checks of the command-line interface: subcommand round
//! trips, output files, and the documented exit codes (0 success, 1 usage,
//! 2 solver failure, 3 I/O).

use std::path::Path;
use std::process::{Command, Output};

fn bnsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnsl")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen_instance(dir: &Path, m: usize, n: usize, seed: u64) {
    let out = bnsl(&[
        "gen",
        "--nodes",
        &m.to_string(),
        "--samples",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn version_flag_prints_a_build_identifier() {
    let out = bnsl(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("bnsl"), "unexpected version line: {text}");
    assert!(text.chars().any(|c| c.is_ascii_digit()), "no version number in: {text}");
}

#[test]
fn gen_writes_the_four_instance_files() {
    let dir = tempfile::tempdir().unwrap();
    gen_instance(dir.path(), 5, 40, 7);
    for name in ["data.csv", "meta.json", "moral.txt", "true_dag.txt"] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
}

#[test]
fn gen_solve_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    gen_instance(dir.path(), 4, 60, 1);
    let sol = dir.path().join("sol");
    let out = bnsl(&[
        "solve",
        "--data",
        dir.path().join("data.csv").to_str().unwrap(),
        "--super",
        dir.path().join("moral.txt").to_str().unwrap(),
        "--abs-gap",
        "0",
        "--rel-gap",
        "0",
        "--out",
        sol.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("status=optimal"), "{}", stdout(&out));
    assert!(sol.join("report.json").exists());
    assert!(sol.join("estimated_dag.txt").exists());

    let eval = bnsl(&[
        "eval",
        "--true",
        dir.path().join("true_dag.txt").to_str().unwrap(),
        "--est",
        sol.join("estimated_dag.txt").to_str().unwrap(),
    ]);
    assert_eq!(eval.status.code(), Some(0));
    assert!(stdout(&eval).starts_with("SHD "), "{}", stdout(&eval));

    let self_eval = bnsl(&[
        "eval",
        "--true",
        dir.path().join("true_dag.txt").to_str().unwrap(),
        "--est",
        dir.path().join("true_dag.txt").to_str().unwrap(),
    ]);
    assert_eq!(self_eval.status.code(), Some(0));
    assert_eq!(stdout(&self_eval).trim(), "SHD 0");
}

#[test]
fn oracle_agrees_with_the_search_value() {
    let dir = tempfile::tempdir().unwrap();
    gen_instance(dir.path(), 5, 80, 3);
    let data = dir.path().join("data.csv");
    let sup = dir.path().join("moral.txt");

    let value = |subcmd: &str, extra: &[&str], out_dir: &Path| -> f64 {
        let mut args = vec![
            subcmd,
            "--data",
            data.to_str().unwrap(),
            "--super",
            sup.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let out = bnsl(&args);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
                .unwrap();
        report["ub"].as_f64().unwrap()
    };

    let solved = value("solve", &["--abs-gap", "0", "--rel-gap", "0"], &dir.path().join("s"));
    let exact = value("oracle", &[], &dir.path().join("o"));
    assert!(
        (solved - exact).abs() <= 1e-6 * exact.abs().max(1.0),
        "search value {solved} differs from exact value {exact}"
    );
}

#[test]
fn early_stop_echoes_tau_and_stops_within_it() {
    let dir = tempfile::tempdir().unwrap();
    gen_instance(dir.path(), 6, 80, 2);
    let sol = dir.path().join("sol");
    let out = bnsl(&[
        "solve",
        "--data",
        dir.path().join("data.csv").to_str().unwrap(),
        "--super",
        dir.path().join("moral.txt").to_str().unwrap(),
        "--early-stop",
        "--rel-gap",
        "0",
        "--out",
        sol.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let tau: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("tau="))
        .expect("tau echoed")
        .trim()
        .parse()
        .unwrap();

    // tau = (edge count of the super-structure) * ln(m) / n.
    let moral = std::fs::read_to_string(dir.path().join("moral.txt")).unwrap();
    let edges = moral.lines().filter(|l| !l.trim().is_empty()).count() - 1;
    let expected = edges as f64 * 6.0f64.ln() / 80.0;
    // The echo prints nine decimal places.
    assert!((tau - expected).abs() <= 1e-9, "tau {tau} vs expected {expected}");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(sol.join("report.json")).unwrap()).unwrap();
    assert!(report["gap"].as_f64().unwrap() <= tau + 1e-12);
}

#[test]
fn bench_grid_writes_csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = bnsl(&[
        "bench",
        "--m-list",
        "3",
        "--n",
        "40",
        "--seeds",
        "0,1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("bench_rows.csv").exists());
    assert!(dir.path().join("bench_summary.csv").exists());
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = bnsl(&["solve"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = bnsl(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn node_count_mismatch_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.txt"), "2\n0 1\n").unwrap();
    std::fs::write(dir.path().join("b.txt"), "3\n0 1\n").unwrap();
    let out = bnsl(&[
        "eval",
        "--true",
        dir.path().join("a.txt").to_str().unwrap(),
        "--est",
        dir.path().join("b.txt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_input_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bnsl(&[
        "solve",
        "--data",
        dir.path().join("nope.csv").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
