//! End-to-end runs of the `csahomog` binary on small cases.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use csahomog::compare::compare;
use csahomog::metrics::MetricsLog;
use csahomog_core::pod::ReducedBasis;
use tempfile::TempDir;

const CASE: &str = "
macro_mesh = builtin:lshape
micro_mesh = builtin:cell-tiny
material.1 = 5.7e9 1.35e9
material.2 = 43.21e9 28.46e9
load.peak = 1e8
steps = 3
method = csa
rho = 0.005
vtk = false
probe.A = 0.3 0.1
probe.D = 0.6 0.2
";

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("case.conf");
    fs::write(&path, format!("{CASE}{extra}")).unwrap();
    path
}

fn csahomog(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csahomog")).args(args).output().unwrap()
}

fn stderr_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or_default().to_string()
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    csahomog(&args)
}

#[test]
fn zero_load_succeeds_with_zero_displacement() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("zero");
    let res = run(&cfg, &out, &["--set", "load.peak=0", "--set", "vtk=true"]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr_line(&res));
    let log = MetricsLog::read(&out.join("metrics.csv")).unwrap();
    let u: Vec<f64> = log.rows.iter().filter(|r| r.quantity == "u").map(|r| r.value).collect();
    assert!(!u.is_empty() && u.iter().all(|v| *v == 0.0));
    for f in ["config.resolved", "meta.json", "timing.json", "convergence.log", "centroids.txt", "vtk/step_002.vtk"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let log = fs::read_to_string(out.join("convergence.log")).unwrap();
    assert_eq!(log.lines().filter(|l| !l.starts_with('#')).count(), 3, "one evaluation per step:\n{log}");
}

#[test]
fn missing_method_parameter_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("case.conf");
    fs::write(&path, CASE.replace("rho = 0.005\n", "")).unwrap();
    let res = run(&path, &tmp.path().join("o"), &[]);
    assert_eq!(res.status.code(), Some(2));
    let line = stderr_line(&res);
    assert!(line.starts_with("error=config code=2 reason=\"") && line.contains("'rho'"), "{line}");
    let res = run(&path, &tmp.path().join("o"), &["--method", "pod"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr_line(&res).contains("'delta'"));
}

#[test]
fn unknown_mesh_and_missing_file_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let res = run(&cfg, &tmp.path().join("o"), &["--set", "micro_mesh=builtin:nope"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr_line(&res).starts_with("error=setup"));
    let res = csahomog(&["run", "/nonexistent.conf"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn newton_and_cell_failures_map_to_their_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let res = run(&cfg, &tmp.path().join("a"), &["--set", "macro_max_iterations=2"]);
    assert_eq!(res.status.code(), Some(3), "{}", stderr_line(&res));
    assert!(stderr_line(&res).starts_with("error=non_convergence code=3"));
    let res = run(&cfg, &tmp.path().join("b"), &["--set", "micro_max_iterations=1", "--set", "micro_tolerance=1e-14"]);
    assert_eq!(res.status.code(), Some(4), "{}", stderr_line(&res));
    assert!(stderr_line(&res).starts_with("error=micro_failure code=4"));
    // Partial outputs stay inspectable.
    let meta = fs::read_to_string(tmp.path().join("b/meta.json")).unwrap();
    assert!(meta.contains("micro_failure"));
}

#[test]
fn identical_runs_are_byte_identical_and_compare_to_zero() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&cfg, &a, &["--seed", "3"]).status.code(), Some(0));
    assert_eq!(run(&cfg, &b, &["--seed", "3"]).status.code(), Some(0));
    for f in ["metrics.csv", "centroids.txt", "convergence.log"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let c = compare(&a, &b, &["A".into(), "D".into()]).unwrap();
    assert_eq!(c.summary.replayed, 0);
    assert!(c.summary.records > 0);
    assert!(c.log.rows.iter().all(|r| r.value == 0.0));

    let res = csahomog(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--probes", "A,D"]);
    assert_eq!(res.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&res.stdout).starts_with("step,iter,probe,quantity,component,value\n"));
}

#[test]
fn compare_rejects_runs_of_different_cases() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run(&cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(run(&cfg, &b, &["--set", "load.peak=5e7"]).status.code(), Some(0));
    let res = csahomog(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--probes", "A"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(stderr_line(&res).starts_with("error=incompatible"));
}

#[test]
fn pod_run_writes_a_basis_keyed_to_the_cell() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "pod_states = 4\n");
    let out = tmp.path().join("pod");
    let res = run(&cfg, &out, &["--method", "pod", "--delta", "0.001"]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr_line(&res));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("meta.json")).unwrap()).unwrap();
    let hex = meta["cell_checksum"].as_str().unwrap();
    let mut sum = [0u8; 32];
    for (i, b) in sum.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).unwrap();
    }
    let bytes = fs::read(out.join("pod_basis.bin")).unwrap();
    let basis = ReducedBasis::<f64>::read_from(bytes.as_slice(), &sum).unwrap();
    let timing: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("timing.json")).unwrap()).unwrap();
    assert_eq!(timing["basis_size"].as_u64(), Some(basis.size() as u64));
    assert!(basis.size() > 0);
}

#[test]
fn bench_counts_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    write_config(tmp.path(), "");
    let matrix = tmp.path().join("m.bench");
    fs::write(
        &matrix,
        "base = case.conf\nout = out\nreference = big\nvariant.big = rho=0.01\nvariant.small = rho=0.002\nvariant.again = rho=0.002\n",
    )
    .unwrap();
    let res = csahomog(&["bench", matrix.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", stderr_line(&res));
    let report = fs::read_to_string(tmp.path().join("out/bench.csv")).unwrap();
    let rows: Vec<Vec<&str>> = report.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let (again, small) = (&rows[0], &rows[2]);
    assert_eq!(again[0], "again");
    // Status, evaluations, cell solves, point evaluations, centroids.
    assert_eq!(again[1..6], small[1..6]);
    assert_eq!(rows[1][0], "big");
    assert_eq!(rows[1][14], format!("{:e}", rows[1][3].parse::<f64>().unwrap() / rows[1][4].parse::<f64>().unwrap()));
}
