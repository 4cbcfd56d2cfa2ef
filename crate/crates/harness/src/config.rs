//! Run configuration: a line-oriented `key = value` file.
//!
//! ```text
//! # comments start with '#'
//! macro_mesh = builtin:lshape        # or a path to a mesh file
//! micro_mesh = builtin:cell-coarse   # or a path to a mesh file
//! material.1 = 5.7e9 1.35e9          # region = bulk shear (Pa)
//! material.2 = 43.21e9 28.46e9
//! load.clamped = 1                   # facet tag with u = 0
//! load.loaded = 2                    # facet tag carrying t = [peak·x2/height, 0]
//! load.peak = 1e8
//! load.height = 0.2
//! steps = 10
//! method = csa                       # fe2 | csa | pod
//! rho = 0.005                        # csa only
//! metric = components                # csa only: components | tensor
//! delta = 0.02                       # pod only
//! pod_bound = 0.015                  # pod only: snapshot ramp amplitude
//! pod_states = 10                    # pod only: states per ramp
//! pod_dense = false                  # pod only: eigen-solve the N×N correlation
//! macro_tolerance = 1e-6
//! macro_max_iterations = 25
//! stall_window = 4
//! micro_tolerance = 1e-9
//! micro_max_iterations = 20
//! seed = 1
//! threads = 0                        # 0 = all cores
//! vtk = true
//! probe.A = 0.3 0.1                  # named probe: nearest quadrature point
//! out = runs/csa
//! ```
//!
//! Relative paths are resolved against the directory of the file that names
//! them. Command-line overrides are applied as if appended to the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csahomog_core::csa::StrainMetric;
use thiserror::Error;

#[derive(Debug, Error)]
#[error("{}{message}", .line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        Self { line: None, message: message.into() }
    }

    fn at(line: usize, message: impl Into<String>) -> Self {
        Self { line: Some(line), message: message.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Fe2,
    Csa,
    Pod,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fe2 => "fe2",
            Method::Csa => "csa",
            Method::Pod => "pod",
        }
    }
}

impl FromStr for Method {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "fe2" => Ok(Method::Fe2),
            "csa" => Ok(Method::Csa),
            "pod" => Ok(Method::Pod),
            other => Err(ConfigError::new(format!("unknown method '{other}' (expected fe2, csa or pod)"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A mesh named either by a built-in generator or by a file.
#[derive(Clone, Debug, PartialEq)]
pub enum MeshSource {
    Builtin(String),
    File(PathBuf),
}

impl MeshSource {
    fn parse(value: &str, base: &Path) -> Self {
        match value.strip_prefix("builtin:") {
            Some(name) => MeshSource::Builtin(name.to_string()),
            None => MeshSource::File(base.join(value)),
        }
    }
}

impl fmt::Display for MeshSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeshSource::Builtin(name) => write!(f, "builtin:{name}"),
            MeshSource::File(path) => write!(f, "{}", path.display()),
        }
    }
}

/// Clamped edge plus a traction linear in the height on the loaded edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadSpec {
    pub clamped: u32,
    pub loaded: u32,
    pub peak: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub name: String,
    pub position: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub macro_mesh: MeshSource,
    pub micro_mesh: MeshSource,
    /// Region id to `(bulk, shear)`.
    pub materials: BTreeMap<u32, (f64, f64)>,
    pub load: LoadSpec,
    pub steps: usize,
    pub method: Method,
    pub rho: Option<f64>,
    pub metric: StrainMetric,
    pub delta: Option<f64>,
    pub pod_bound: f64,
    pub pod_states: usize,
    pub pod_dense: bool,
    pub macro_tolerance: f64,
    pub macro_max_iterations: usize,
    pub stall_window: usize,
    pub micro_tolerance: f64,
    pub micro_max_iterations: usize,
    pub seed: u64,
    pub threads: usize,
    pub vtk: bool,
    /// Ordered by name.
    pub probes: Vec<Probe>,
    pub out: Option<PathBuf>,
}

/// Keys and raw values in file order, with the line and base directory each came from.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, RawValue>,
}

#[derive(Clone, Debug)]
struct RawValue {
    value: String,
    line: Option<usize>,
    base: PathBuf,
}

const SCALAR_KEYS: &[&str] = &[
    "macro_mesh",
    "micro_mesh",
    "load.clamped",
    "load.loaded",
    "load.peak",
    "load.height",
    "steps",
    "method",
    "rho",
    "metric",
    "delta",
    "pod_bound",
    "pod_states",
    "pod_dense",
    "macro_tolerance",
    "macro_max_iterations",
    "stall_window",
    "micro_tolerance",
    "micro_max_iterations",
    "seed",
    "threads",
    "vtk",
    "out",
];

fn known_key(key: &str) -> bool {
    SCALAR_KEYS.contains(&key)
        || key.strip_prefix("material.").is_some_and(|r| r.parse::<u32>().is_ok())
        || key.strip_prefix("probe.").is_some_and(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
}

impl RawConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut raw = Self::default();
        for (i, line) in text.lines().enumerate() {
            let ln = i + 1;
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) =
                content.split_once('=').ok_or_else(|| ConfigError::at(ln, format!("expected 'key = value', got '{content}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if !known_key(key) {
                return Err(ConfigError::at(ln, format!("unknown key '{key}'")));
            }
            if raw.entries.contains_key(key) {
                return Err(ConfigError::at(ln, format!("duplicate key '{key}'")));
            }
            raw.entries.insert(key.to_string(), RawValue { value: value.to_string(), line: Some(ln), base: base.to_path_buf() });
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Replaces or adds `key`; relative paths resolve against the working directory.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !known_key(key) {
            return Err(ConfigError::new(format!("unknown key '{key}'")));
        }
        self.entries.insert(key.to_string(), RawValue { value: value.trim().to_string(), line: None, base: PathBuf::new() });
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|v| v.value.as_str())
    }

    fn parsed<V: FromStr>(&self, key: &str) -> Result<Option<V>, ConfigError> {
        let Some(raw) = self.entries.get(key) else {
            return Ok(None);
        };
        raw.value.parse().map(Some).map_err(|_| ConfigError {
            line: raw.line,
            message: format!("key '{key}': cannot parse '{}'", raw.value),
        })
    }

    fn or<V: FromStr>(&self, key: &str, default: V) -> Result<V, ConfigError> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    fn required<V: FromStr>(&self, key: &str, why: &str) -> Result<V, ConfigError> {
        self.parsed(key)?.ok_or_else(|| ConfigError::new(format!("key '{key}' is required {why}")))
    }

    fn pair(&self, key: &str) -> Result<[f64; 2], ConfigError> {
        let raw = &self.entries[key];
        let nums: Vec<f64> = raw.value.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| ConfigError {
            line: raw.line,
            message: format!("key '{key}': expected two numbers, got '{}'", raw.value),
        })?;
        match nums[..] {
            [a, b] => Ok([a, b]),
            _ => Err(ConfigError { line: raw.line, message: format!("key '{key}': expected two numbers, got '{}'", raw.value) }),
        }
    }

    fn mesh(&self, key: &str) -> Result<MeshSource, ConfigError> {
        let raw = self.entries.get(key).ok_or_else(|| ConfigError::new(format!("key '{key}' is required")))?;
        Ok(MeshSource::parse(&raw.value, &raw.base))
    }

    pub fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let method: Method = self.required("method", "")?;
        let mut materials = BTreeMap::new();
        let mut probes = Vec::new();
        for key in self.entries.keys() {
            if let Some(region) = key.strip_prefix("material.") {
                let [bulk, shear] = self.pair(key)?;
                materials.insert(region.parse().expect("validated on insert"), (bulk, shear));
            } else if let Some(name) = key.strip_prefix("probe.") {
                probes.push(Probe { name: name.to_string(), position: self.pair(key)? });
            }
        }
        if materials.is_empty() {
            return Err(ConfigError::new("at least one 'material.<region>' entry is required"));
        }
        let metric = match self.get("metric").unwrap_or("components") {
            "components" => StrainMetric::Components,
            "tensor" => StrainMetric::Tensor,
            other => return Err(ConfigError::new(format!("key 'metric': unknown metric '{other}'"))),
        };
        let config = RunConfig {
            macro_mesh: self.mesh("macro_mesh")?,
            micro_mesh: self.mesh("micro_mesh")?,
            materials,
            load: LoadSpec {
                clamped: self.or("load.clamped", 1)?,
                loaded: self.or("load.loaded", 2)?,
                peak: self.required("load.peak", "")?,
                height: self.or("load.height", 0.2)?,
            },
            steps: self.or("steps", 10)?,
            method,
            rho: match method {
                Method::Csa => Some(self.required("rho", "for method csa")?),
                _ => self.parsed("rho")?,
            },
            metric,
            delta: match method {
                Method::Pod => Some(self.required("delta", "for method pod")?),
                _ => self.parsed("delta")?,
            },
            pod_bound: self.or("pod_bound", 0.015)?,
            pod_states: self.or("pod_states", 10)?,
            pod_dense: self.or("pod_dense", false)?,
            macro_tolerance: self.or("macro_tolerance", 1e-6)?,
            macro_max_iterations: self.or("macro_max_iterations", 25)?,
            stall_window: self.or("stall_window", 4)?,
            micro_tolerance: self.or("micro_tolerance", 1e-9)?,
            micro_max_iterations: self.or("micro_max_iterations", 20)?,
            seed: self.or("seed", 1)?,
            threads: self.or("threads", 0)?,
            vtk: self.or("vtk", true)?,
            probes,
            out: self.entries.get("out").map(|raw| raw.base.join(&raw.value)),
        };
        config.validate()?;
        Ok(config)
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        RawConfig::load(path)?.resolve()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::new(format!("key '{key}' must be positive, got {v}")))
            }
        };
        if let Some(rho) = self.rho {
            positive("rho", rho)?;
        }
        if let Some(delta) = self.delta {
            if !(0.0..1.0).contains(&delta) {
                return Err(ConfigError::new(format!("key 'delta' must lie in [0, 1), got {delta}")));
            }
        }
        for (region, &(bulk, shear)) in &self.materials {
            if !(bulk > 0.0 && shear > 0.0 && bulk.is_finite() && shear.is_finite()) {
                return Err(ConfigError::new(format!("material.{region}: moduli must be positive")));
            }
        }
        positive("load.height", self.load.height)?;
        if !self.load.peak.is_finite() {
            return Err(ConfigError::new("key 'load.peak' must be finite"));
        }
        positive("macro_tolerance", self.macro_tolerance)?;
        positive("micro_tolerance", self.micro_tolerance)?;
        positive("pod_bound", self.pod_bound)?;
        if self.steps == 0 {
            return Err(ConfigError::new("key 'steps' must be at least 1"));
        }
        if self.pod_states < 2 {
            return Err(ConfigError::new("key 'pod_states' must be at least 2"));
        }
        if self.macro_max_iterations == 0 || self.micro_max_iterations == 0 || self.stall_window == 0 {
            return Err(ConfigError::new("iteration limits must be at least 1"));
        }
        Ok(())
    }

    /// Canonical text form; parsing it back yields an equal configuration.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("macro_mesh = {}", self.macro_mesh),
            format!("micro_mesh = {}", self.micro_mesh),
        ];
        for (region, (bulk, shear)) in &self.materials {
            lines.push(format!("material.{region} = {bulk:e} {shear:e}"));
        }
        lines.push(format!("load.clamped = {}", self.load.clamped));
        lines.push(format!("load.loaded = {}", self.load.loaded));
        lines.push(format!("load.peak = {:e}", self.load.peak));
        lines.push(format!("load.height = {:e}", self.load.height));
        lines.push(format!("steps = {}", self.steps));
        lines.push(format!("method = {}", self.method));
        if let Some(rho) = self.rho {
            lines.push(format!("rho = {rho:e}"));
        }
        lines.push(format!(
            "metric = {}",
            match self.metric {
                StrainMetric::Components => "components",
                StrainMetric::Tensor => "tensor",
            }
        ));
        if let Some(delta) = self.delta {
            lines.push(format!("delta = {delta:e}"));
        }
        lines.push(format!("pod_bound = {:e}", self.pod_bound));
        lines.push(format!("pod_states = {}", self.pod_states));
        lines.push(format!("pod_dense = {}", self.pod_dense));
        lines.push(format!("macro_tolerance = {:e}", self.macro_tolerance));
        lines.push(format!("macro_max_iterations = {}", self.macro_max_iterations));
        lines.push(format!("stall_window = {}", self.stall_window));
        lines.push(format!("micro_tolerance = {:e}", self.micro_tolerance));
        lines.push(format!("micro_max_iterations = {}", self.micro_max_iterations));
        lines.push(format!("seed = {}", self.seed));
        lines.push(format!("threads = {}", self.threads));
        lines.push(format!("vtk = {}", self.vtk));
        for p in &self.probes {
            lines.push(format!("probe.{} = {:e} {:e}", p.name, p.position[0], p.position[1]));
        }
        if let Some(out) = &self.out {
            lines.push(format!("out = {}", out.display()));
        }
        lines.join("\n") + "\n"
    }

    pub fn probe(&self, name: &str) -> Option<&Probe> {
        self.probes.iter().find(|p| p.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "
        macro_mesh = builtin:lshape
        micro_mesh = meshes/cell.mesh   # relative
        material.1 = 5.7e9 1.35e9
        material.2 = 43.21e9 28.46e9
        load.peak = 1e8
        method = csa
        rho = 0.005
        probe.D = 0.6 0.2
        probe.A = 0.3 0.1
    ";

    #[test]
    fn parses_defaults_and_resolves_paths() {
        let c = RawConfig::parse(BASE, Path::new("/cfg")).unwrap().resolve().unwrap();
        assert_eq!(c.method, Method::Csa);
        assert_eq!(c.rho, Some(0.005));
        assert_eq!(c.micro_mesh, MeshSource::File(PathBuf::from("/cfg/meshes/cell.mesh")));
        assert_eq!(c.macro_mesh, MeshSource::Builtin("lshape".into()));
        assert_eq!(c.steps, 10);
        assert_eq!(c.probes.iter().map(|p| p.name.as_str()).collect::<Vec<_>>(), ["A", "D"]);
        assert_eq!(c.materials[&2], (43.21e9, 28.46e9));
    }

    #[test]
    fn canonical_text_round_trips() {
        let c = RawConfig::parse(BASE, Path::new("/cfg")).unwrap().resolve().unwrap();
        let back = RawConfig::parse(&c.to_text(), Path::new("/elsewhere")).unwrap().resolve().unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn method_parameters_are_required() {
        let mut raw = RawConfig::parse(BASE, Path::new("/")).unwrap();
        raw.entries.remove("rho");
        let err = raw.resolve().unwrap_err();
        assert!(err.message.contains("'rho'"), "{err}");
        raw.set("method", "pod").unwrap();
        assert!(raw.resolve().unwrap_err().message.contains("'delta'"));
        raw.set("delta", "0.02").unwrap();
        assert!(raw.resolve().is_ok());
        raw.set("method", "fe2").unwrap();
        assert!(raw.resolve().is_ok());
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed_lines() {
        let err = RawConfig::parse("foo = 1", Path::new("/")).unwrap_err();
        assert_eq!(err.line, Some(1));
        assert!(RawConfig::parse("steps = 1\nsteps = 2", Path::new("/")).is_err());
        assert!(RawConfig::parse("steps 1", Path::new("/")).is_err());
        let mut raw = RawConfig::parse(BASE, Path::new("/")).unwrap();
        raw.set("rho", "-1").unwrap();
        assert!(raw.resolve().is_err());
        raw.set("rho", "abc").unwrap();
        assert!(raw.resolve().is_err());
    }
}
