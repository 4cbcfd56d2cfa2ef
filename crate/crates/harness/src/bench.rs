//! Benchmark matrices: one base configuration run under several overrides.
//!
//! ```text
//! base = lshape.conf              # run configuration, relative to this file
//! out = bench                     # each variant writes to out/<name>
//! reference = fe2                 # variant the ratios are taken against
//! variant.fe2 = method=fe2
//! variant.csa_0.005 = method=csa rho=0.005
//! variant.pod = method=pod delta=0.02 micro_mesh=builtin:cell-fine
//! ```
//!
//! The report `out/bench.csv` lists phase times, counters and, for every
//! variant, the cell-solve ratio against the reference's quadrature point
//! evaluations and the wall-clock ratio against the reference run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{ConfigError, RawConfig};
use crate::run::{execute, RunReport};
use crate::HarnessError;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchMatrix {
    pub base: PathBuf,
    pub out: PathBuf,
    pub reference: Option<String>,
    /// Variant name to `key=value` overrides, in name order.
    pub variants: BTreeMap<String, Vec<(String, String)>>,
}

impl BenchMatrix {
    pub fn parse(text: &str, dir: &Path) -> Result<Self, ConfigError> {
        let err = |line: usize, message: String| ConfigError { line: Some(line), message };
        let (mut base, mut out, mut reference) = (None, None, None);
        let mut variants = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| err(ln, format!("expected 'key = value', got '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "base" => base = Some(dir.join(value)),
                "out" => out = Some(dir.join(value)),
                "reference" => reference = Some(value.to_string()),
                _ => {
                    let Some(name) = key.strip_prefix("variant.").filter(|n| !n.is_empty()) else {
                        return Err(err(ln, format!("unknown key '{key}'")));
                    };
                    let overrides = value
                        .split_whitespace()
                        .map(|kv| {
                            kv.split_once('=')
                                .map(|(k, v)| (k.to_string(), v.to_string()))
                                .ok_or_else(|| err(ln, format!("override '{kv}' is not key=value")))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    variants.insert(name.to_string(), overrides);
                }
            }
        }
        let base = base.ok_or_else(|| ConfigError { line: None, message: "key 'base' is required".into() })?;
        let out = out.ok_or_else(|| ConfigError { line: None, message: "key 'out' is required".into() })?;
        if variants.is_empty() {
            return Err(ConfigError { line: None, message: "no 'variant.<name>' entries".into() });
        }
        if let Some(r) = &reference {
            if !variants.contains_key(r) {
                return Err(ConfigError { line: None, message: format!("reference '{r}' is not a variant") });
            }
        }
        Ok(Self { base, out, reference, variants })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { line: None, message: format!("cannot read {}: {e}", path.display()) })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }
}

/// Per-variant outcome: the run report, or the error that stopped it.
pub type BenchResults = BTreeMap<String, Result<RunReport, HarnessError>>;

/// Runs every variant; a failing variant is reported and does not stop the others.
/// Configuration errors in any variant abort before anything runs.
pub fn bench(matrix: &BenchMatrix) -> Result<BenchResults, HarnessError> {
    let base = RawConfig::load(&matrix.base)?;
    let mut configs = Vec::new();
    for (name, overrides) in &matrix.variants {
        let mut raw = base.clone();
        for (k, v) in overrides {
            raw.set(k, v)?;
        }
        raw.set("out", &matrix.out.join(name).display().to_string())?;
        configs.push((name.clone(), raw.resolve()?));
    }
    let mut results = BTreeMap::new();
    for (name, config) in configs {
        results.insert(name, execute(&config).map(|s| s.report));
    }
    std::fs::create_dir_all(&matrix.out).map_err(|e| HarnessError::io(&matrix.out, e))?;
    let path = matrix.out.join("bench.csv");
    std::fs::write(&path, report_csv(matrix, &results)).map_err(|e| HarnessError::io(&path, e))?;
    Ok(results)
}

pub fn report_csv(matrix: &BenchMatrix, results: &BenchResults) -> String {
    let reference = matrix.reference.as_ref().and_then(|r| results.get(r)).and_then(|r| r.as_ref().ok());
    let mut out = String::from(
        "variant,status,evaluations,micro_solves,qp_iterations,centroids,basis_size,\
         total_s,snapshot_s,basis_s,assembly_s,linear_solve_s,micro_s,reduction_s,solve_ratio,time_ratio\n",
    );
    for (name, result) in results {
        match result {
            Ok(r) => {
                let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
                let (solve_ratio, time_ratio) = match reference {
                    Some(base) => (
                        format!("{:e}", r.micro_solves as f64 / base.qp_iterations as f64),
                        format!("{:e}", r.total_time.as_secs_f64() / base.total_time.as_secs_f64()),
                    ),
                    None => (String::new(), String::new()),
                };
                let _ = writeln!(
                    out,
                    "{name},ok,{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{solve_ratio},{time_ratio}",
                    r.evaluations,
                    r.micro_solves,
                    r.qp_iterations,
                    opt(r.centroids),
                    opt(r.basis_size),
                    r.total_time.as_secs_f64(),
                    r.snapshot_time.as_secs_f64(),
                    r.basis_time.as_secs_f64(),
                    r.assembly_time.as_secs_f64(),
                    r.linear_solve_time.as_secs_f64(),
                    r.micro_time.as_secs_f64(),
                    r.reduction_time.as_secs_f64(),
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{name},{},,,,,,,,,,,,,,", e.kind());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_variants_and_checks_reference() {
        let text = "base = a.conf\nout = o\nreference = fe2\nvariant.fe2 = method=fe2\nvariant.csa = method=csa rho=0.01\n";
        let m = BenchMatrix::parse(text, Path::new("/d")).unwrap();
        assert_eq!(m.base, PathBuf::from("/d/a.conf"));
        assert_eq!(m.variants["csa"], vec![("method".into(), "csa".into()), ("rho".into(), "0.01".into())]);
        assert!(BenchMatrix::parse("base = a\nout = o\nreference = x\nvariant.y = method=fe2", Path::new("/")).is_err());
        assert!(BenchMatrix::parse("base = a\nout = o\nvariant.y = rho", Path::new("/")).is_err());
    }
}
