use std::path::Path;

use cic_core::benchmark::{read_summary_csv, Method};
use cic_core::cic::read_traces_csv;
use cic_core::math::std_normal_sf;
use cic_core::pipeline::PipelineDocument;

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cic_core::cli::run(std::iter::once("cic-sampler").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

const SMALL: [&str; 6] = ["--tau", "3", "--batch-size", "300", "--final-batch-size", "400"];

#[test]
fn run_writes_result_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "res");
    let mut args = vec!["run", "--problem", "parabolic", "--b", "1.5", "--seed", "42", "--threads", "1", "--output", &out];
    args.extend(SMALL);
    let (code, stdout, _) = cli(&args);
    assert_eq!(code, 0);
    assert!(stdout.starts_with("rho_hat="));
    assert!(stdout.contains("k_history="));

    let doc: PipelineDocument = serde_json::from_str(&std::fs::read_to_string(format!("{out}.json")).unwrap()).unwrap();
    assert_eq!(doc.seed, 42);
    assert_eq!(doc.batch_sizes, vec![300, 300, 300, 400]);
    assert_eq!(doc.k_history.len(), 3);

    let trace = std::fs::read_to_string(format!("{out}_trace.csv")).unwrap();
    assert!(trace.starts_with("# seed=42 "));
    assert!(!trace.contains('\r'));
    let rows = read_traces_csv(trace.as_bytes()).unwrap();
    for t in 1..=3 {
        let chosen: Vec<_> = rows.iter().filter(|r| r.t == t && r.chosen == 1).collect();
        assert_eq!(chosen.len(), 1);
        assert_eq!(chosen[0].k, doc.k_history[t - 1]);
    }
}

#[test]
fn run_defaults_to_standard_batch_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "d");
    let (code, _, _) = cli(&["run", "--b", "1.5", "--tau", "7", "--output", &out]);
    assert_eq!(code, 0);
    let doc: PipelineDocument = serde_json::from_str(&std::fs::read_to_string(format!("{out}.json")).unwrap()).unwrap();
    assert_eq!(doc.batch_sizes, vec![1000, 1000, 1000, 1000, 1000, 1000, 1000, 1700]);
    assert_eq!(doc.seed, 0);
}

#[test]
fn usage_errors_exit_2() {
    let (code, _, err) = cli(&["run", "--seed", "1"]);
    assert_eq!(code, 2);
    assert!(err.contains("--b"));
    assert_eq!(cli(&["run", "--b", "1.5", "--bogus"]).0, 2);
    assert_eq!(cli(&["run", "--b", "1.5", "--problem", "cantilever"]).0, 2);
    assert_eq!(cli(&["oracle"]).0, 2);
    assert_eq!(cli(&[]).0, 2);
    assert_eq!(cli(&["--help"]).0, 0);
}

#[test]
fn fatal_errors_exit_1_with_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = p(dir.path(), "x");
    let mut args = vec!["run", "--b", "80", "--output", &out];
    args.extend(SMALL);
    let (code, _, err) = cli(&args);
    assert_eq!(code, 1);
    assert!(err.contains("NoEffectiveSamples"), "{err}");

    let (code, _, err) = cli(&["oracle", "--b", "1.5", "--kappa", "-1"]);
    assert_eq!(code, 1);
    assert!(err.contains("InvalidConfig"));

    let (code, _, err) = cli(&["benchmark", "--repetitions", "2", "--methods", "cmc"]);
    assert_eq!(code, 1);
    assert!(err.contains("Parse"));
}

#[test]
fn oracle_lines() {
    let (code, out, _) = cli(&["oracle", "--b", "1.5"]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().count(), 1);
    let (_, out, _) = cli(&["oracle", "--b-list", "1.5,2.0,2.5"]);
    let vals: Vec<f64> = out.lines().map(|l| l.split(' ').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(vals.len(), 3);
    assert!(vals[0] > vals[1] && vals[1] > vals[2]);
    assert!(out.lines().next().unwrap().starts_with("1.5 8.29610961786e-2"));

    let (_, out, _) = cli(&["oracle", "--b", "1.5", "--kappa", "1e-12"]);
    let v: f64 = out.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((v - std_normal_sf(1.5)).abs() < 1e-10);
}

#[test]
fn benchmark_csv_layout() {
    let mut args = vec!["benchmark", "--repetitions", "2", "--seed", "3", "--b-list", "2.0", "--methods", "cic-is,ce-ais-gm,cmc-analytic"];
    args.extend(SMALL);
    let (code, out, _) = cli(&args);
    assert_eq!(code, 0);
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "# seed=3 repetitions=2");
    assert!(lines.next().unwrap().starts_with("# low-precision"));
    assert_eq!(lines.next().unwrap(), "b,method,mean,std_error,cmc_ratio,repetitions,n_total");
    let rows = read_summary_csv(out.as_bytes()).unwrap();
    assert_eq!(rows.iter().map(|r| r.method).collect::<Vec<_>>(), vec![Method::CicIs, Method::CeAisGm, Method::CmcAnalytic]);
    assert!(rows.iter().all(|r| r.b == 2.0 && r.repetitions == 2 && r.n_total == 1300));
}

#[test]
fn benchmark_default_rows() {
    let mut args = vec!["benchmark", "--repetitions", "2", "--seed", "7"];
    args.extend(SMALL);
    let (code, out, _) = cli(&args);
    assert_eq!(code, 0);
    let rows = read_summary_csv(out.as_bytes()).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows.iter().map(|r| r.b).collect::<Vec<_>>(), vec![1.5, 1.5, 2.0, 2.0, 2.5, 2.5]);
}

#[test]
fn select_prints_trace() {
    let (code, out, _) = cli(&["select", "--b", "1.5", "--seed", "4", "--batch-size", "500", "--threads", "2"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("# seed=4 "));
    let rows = read_traces_csv(out.as_bytes()).unwrap();
    assert!(rows.iter().all(|r| r.t == 1));
    assert_eq!(rows.iter().filter(|r| r.chosen == 1).count(), 1);
    assert_eq!(cli(&["select", "--b", "1.5", "--seed", "4", "--batch-size", "500", "--threads", "1"]).1, out);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_cic-sampler");
    let status = std::process::Command::new(bin).args(["run", "--seed", "1"]).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    let status = std::process::Command::new(bin).args(["oracle", "--b", "2.0"]).env("CIC_SAMPLER_THREADS", "1").output().unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(String::from_utf8(status.stdout).unwrap().starts_with("2 3.01872569126e-2"));
    let status = std::process::Command::new(bin)
        .args(["select", "--b", "1.5", "--batch-size", "200"])
        .env("CIC_SAMPLER_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
}

#[test]
fn negative_shape_values_parse() {
    let (code, out, _) = cli(&["oracle", "--b", "-1", "--e", "-0.5"]);
    assert_eq!(code, 0);
    let v: f64 = out.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(v > 0.8 && v < 1.0, "{v}");
}
