//! One macroscopic solve with the configured backend and its output tree:
//!
//! | file | content |
//! |------|---------|
//! | `config.resolved` | effective configuration, canonical form |
//! | `meta.json` | checksums, probe resolution, status |
//! | `metrics.csv` | per evaluation and probe: `F`, `S`, `A`, nodal `u` |
//! | `convergence.log` | `step iter residual n_new_centroids` |
//! | `timing.json` | phase → seconds, plus counters |
//! | `centroids.txt` | centroid registry (csa) |
//! | `pod_basis.bin` | reduced basis (pod) |
//! | `vtk/step_NNN.vtk` | converged fields per load step |

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use csahomog_core::backend::{CoefficientBackend, CoefficientField, Fe2Backend};
use csahomog_core::csa::{CsaBackend, CsaSettings};
use csahomog_core::macroscale::{IterationView, MacroObserver, MacroState};
use csahomog_core::mesh::{quadrature, Mesh, VtkWriter};
use csahomog_core::pod::{generate_snapshots, PodBackend, ReducedBasis};
use csahomog_core::tensor::Tensor2;
use serde_json::{json, Map, Value};

use crate::config::{Method, RunConfig};
use crate::metrics::MetricsLog;
use crate::setup::Setup;
use crate::{hex, HarnessError};

/// A configured probe resolved on the macroscopic mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedProbe {
    pub name: String,
    pub point: usize,
    pub node: usize,
}

/// Counters and phase times of a finished (or aborted) run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub method: Option<Method>,
    pub steps_converged: usize,
    pub evaluations: usize,
    /// Cell problems solved by the backend, the initial cell included.
    pub micro_solves: usize,
    /// Quadrature points times coefficient evaluations: the cell solves a
    /// backend without reuse would perform.
    pub qp_iterations: usize,
    pub centroids: Option<usize>,
    pub centroid_newton_iterations: Option<usize>,
    pub basis_size: Option<usize>,
    pub snapshot_time: Duration,
    pub basis_time: Duration,
    pub assembly_time: Duration,
    pub linear_solve_time: Duration,
    pub coefficient_time: Duration,
    pub micro_time: Duration,
    pub reduction_time: Duration,
    pub io_time: Duration,
    /// Wall clock without file output.
    pub total_time: Duration,
}

impl RunReport {
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        let secs = |d: Duration| json!(d.as_secs_f64());
        m.insert("method".into(), json!(self.method.map(Method::name)));
        m.insert("steps_converged".into(), json!(self.steps_converged));
        m.insert("evaluations".into(), json!(self.evaluations));
        m.insert("micro_solves".into(), json!(self.micro_solves));
        m.insert("qp_iterations".into(), json!(self.qp_iterations));
        m.insert("centroids".into(), json!(self.centroids));
        m.insert("centroid_newton_iterations".into(), json!(self.centroid_newton_iterations));
        m.insert("basis_size".into(), json!(self.basis_size));
        m.insert("snapshot_s".into(), secs(self.snapshot_time));
        m.insert("basis_s".into(), secs(self.basis_time));
        m.insert("assembly_s".into(), secs(self.assembly_time));
        m.insert("linear_solve_s".into(), secs(self.linear_solve_time));
        m.insert("coefficient_s".into(), secs(self.coefficient_time));
        m.insert("micro_s".into(), secs(self.micro_time));
        m.insert("reduction_s".into(), secs(self.reduction_time));
        m.insert("io_s".into(), secs(self.io_time));
        m.insert("total_s".into(), secs(self.total_time));
        Value::Object(m)
    }
}

/// Outcome of [`execute`]: where the outputs went and what the run cost.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out: PathBuf,
    pub report: RunReport,
    pub probes: Vec<ResolvedProbe>,
}

struct Recorder<'a> {
    probes: &'a [ResolvedProbe],
    mesh: &'a Mesh<f64>,
    /// Element of each quadrature point.
    point_element: Vec<usize>,
    metrics: MetricsLog,
    convergence: String,
    vtk_dir: Option<PathBuf>,
    io_time: Duration,
    io_error: Option<HarnessError>,
    evaluations: usize,
    steps_converged: usize,
}

impl MacroObserver<f64> for Recorder<'_> {
    fn iteration(&mut self, v: &IterationView<'_, f64>) {
        self.evaluations += 1;
        for p in self.probes {
            self.metrics.push_tensor2(v.step, v.iteration, &p.name, "F", &v.deformation[p.point]);
            self.metrics.push_tensor2(v.step, v.iteration, &p.name, "S", &v.coefficients.stress[p.point]);
            self.metrics.push_tensor4(v.step, v.iteration, &p.name, "A", &v.coefficients.tangent[p.point]);
            for d in 0..2 {
                self.metrics.push(v.step, v.iteration, &p.name, "u", &(d + 1).to_string(), v.displacement[2 * p.node + d]);
            }
        }
        let _ = writeln!(self.convergence, "{} {} {:e} {}", v.step, v.iteration, v.residual, v.new_centroids);
    }

    fn step_converged(&mut self, step: usize, state: &MacroState<f64>, coefficients: &CoefficientField<f64>) {
        self.steps_converged = step + 1;
        let Some(dir) = &self.vtk_dir else { return };
        if self.io_error.is_some() {
            return;
        }
        let start = Instant::now();
        let n_el = self.mesh.element_count();
        let mut strain = vec![Tensor2::zero(); n_el];
        let mut stress = vec![Tensor2::zero(); n_el];
        let mut count = vec![0.0; n_el];
        for (q, &e) in self.point_element.iter().enumerate() {
            let f = state.deformation[q];
            strain[e] += (f.transpose().dot(&f) - Tensor2::identity()) * 0.5;
            stress[e] += coefficients.stress[q];
            count[e] += 1.0;
        }
        for e in 0..n_el {
            strain[e] = strain[e] * (1.0 / count[e]);
            stress[e] = stress[e] * (1.0 / count[e]);
        }
        let u: Vec<[f64; 2]> = state.displacement.chunks(2).map(|c| [c[0], c[1]]).collect();
        let path = dir.join(format!("step_{step:03}.vtk"));
        let written = VtkWriter::new(self.mesh, &format!("load step {step}"))
            .point_vectors("displacement", &u)
            .cell_tensors("green_strain", &strain)
            .cell_tensors("stress", &stress)
            .write(&path);
        if let Err(e) = written {
            self.io_error = Some(HarnessError::io(&path, e));
        }
        self.io_time += start.elapsed();
    }
}

enum Backend {
    Fe2(Fe2Backend<f64>),
    Csa(CsaBackend<f64>),
    Pod(PodBackend<f64>),
}

impl Backend {
    fn as_dyn(&mut self) -> &mut dyn CoefficientBackend<f64> {
        match self {
            Backend::Fe2(b) => b,
            Backend::Csa(b) => b,
            Backend::Pod(b) => b,
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    write_file(path, text + "\n")
}

/// Runs `config` with its own thread pool when `threads > 0`.
pub fn execute(config: &RunConfig) -> Result<RunSummary, HarnessError> {
    if config.threads == 0 {
        return execute_inner(config);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| HarnessError::Setup(format!("thread pool: {e}")))?;
    pool.install(|| execute_inner(config))
}

fn execute_inner(config: &RunConfig) -> Result<RunSummary, HarnessError> {
    let wall = Instant::now();
    let out = config
        .out
        .clone()
        .ok_or_else(|| HarnessError::Config(crate::ConfigError { line: None, message: "no output directory: set 'out' or pass --out".into() }))?;
    let setup = Setup::new(config)?;
    let mut problem = setup.macro_problem(config)?;
    let probes: Vec<ResolvedProbe> = config
        .probes
        .iter()
        .map(|p| ResolvedProbe { name: p.name.clone(), point: problem.nearest_point(p.position), node: problem.nearest_node(p.position) })
        .collect();
    fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
    let vtk_dir = config.vtk.then(|| out.join("vtk"));
    if let Some(dir) = &vtk_dir {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let io_start = Instant::now();
    write_file(&out.join("config.resolved"), config.to_text())?;
    let mut io_time = io_start.elapsed();

    let mut report = RunReport { method: Some(config.method), ..Default::default() };
    let n = problem.point_count();
    let mut backend = match config.method {
        Method::Fe2 => Backend::Fe2(Fe2Backend::new(setup.cell_problem(config, false)?, n)?),
        Method::Csa => {
            let settings = CsaSettings { radius: config.rho.expect("validated"), metric: config.metric, seed: config.seed };
            let backend = CsaBackend::new(setup.cell_problem(config, true)?, settings)
                .map_err(|e| HarnessError::Setup(e.to_string()))?;
            Backend::Csa(backend)
        }
        Method::Pod => {
            let cell = setup.cell_problem(config, false)?;
            let start = Instant::now();
            let bank = generate_snapshots(&cell, config.pod_bound, config.pod_states).map_err(|e| HarnessError::MicroFailure(e.to_string()))?;
            report.snapshot_time = start.elapsed();
            let start = Instant::now();
            let basis = ReducedBasis::build(&bank, config.delta.expect("validated"), config.pod_dense)
                .map_err(|e| HarnessError::Setup(format!("reduced basis: {e}")))?;
            report.basis_time = start.elapsed();
            report.basis_size = Some(basis.size());
            let start = Instant::now();
            let path = out.join("pod_basis.bin");
            let file = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
            basis.write_to(BufWriter::new(file), &setup.cell_checksum).map_err(|e| HarnessError::io(&path, e))?;
            io_time += start.elapsed();
            Backend::Pod(PodBackend::new(cell, Arc::new(basis), n).map_err(|e| HarnessError::MicroFailure(e.to_string()))?)
        }
    };

    let point_element: Vec<usize> = setup
        .macro_mesh
        .elements()
        .iter()
        .enumerate()
        .flat_map(|(e, el)| std::iter::repeat_n(e, quadrature::<f64>(el.kind).len()))
        .collect();
    let mut recorder = Recorder {
        probes: &probes,
        mesh: &setup.macro_mesh,
        point_element,
        metrics: MetricsLog::default(),
        convergence: String::from("# step iter residual n_new_centroids\n"),
        vtk_dir,
        io_time: Duration::ZERO,
        io_error: None,
        evaluations: 0,
        steps_converged: 0,
    };
    let outcome = problem.solve(backend.as_dyn(), &mut recorder);

    let stats = backend.as_dyn().stats().clone();
    report.steps_converged = recorder.steps_converged;
    report.evaluations = recorder.evaluations;
    report.micro_solves = stats.micro_solves;
    report.qp_iterations = recorder.evaluations * n;
    report.assembly_time = problem.stats().assembly_time;
    report.linear_solve_time = problem.stats().solve_time;
    report.coefficient_time = problem.stats().coefficient_time;
    report.micro_time = stats.micro_time;
    report.reduction_time = stats.reduction_time;

    let start = Instant::now();
    if let Backend::Csa(csa) = &backend {
        report.centroids = Some(csa.registry().len());
        report.centroid_newton_iterations = Some(csa.centroid_newton_iterations());
        write_file(&out.join("centroids.txt"), csa.registry().export())?;
    }
    recorder.metrics.write(&out.join("metrics.csv"))?;
    write_file(&out.join("convergence.log"), &recorder.convergence)?;
    io_time += recorder.io_time + start.elapsed();
    report.io_time = io_time;
    report.total_time = wall.elapsed().saturating_sub(io_time);
    write_json(&out.join("timing.json"), &report.to_json())?;

    let result = outcome.map_err(HarnessError::from);
    let status = match &result {
        Ok(_) => json!({ "status": "ok", "code": 0 }),
        Err(e) => json!({ "status": e.kind(), "code": e.exit_code(), "reason": e.to_string() }),
    };
    let probe_json: Map<String, Value> = probes
        .iter()
        .map(|p| {
            let x = problem.point_positions()[p.point];
            (p.name.clone(), json!({ "point": p.point, "node": p.node, "x": x[0], "y": x[1] }))
        })
        .collect();
    let meta = json!({
        "method": config.method.name(),
        "case_checksum": hex(&setup.case_checksum),
        "macro_checksum": hex(&setup.macro_checksum),
        "cell_checksum": hex(&setup.cell_checksum),
        "points": n,
        "probes": probe_json,
        "result": status,
    });
    write_json(&out.join("meta.json"), &meta)?;
    if let Some(e) = recorder.io_error {
        return Err(e);
    }
    result?;
    Ok(RunSummary { out, report, probes })
}
