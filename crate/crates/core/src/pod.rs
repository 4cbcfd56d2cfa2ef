//! Proper orthogonal decomposition of the cell problem.
//!
//! Offline, the cell is driven along strain ramps and its periodic fields are
//! collected as snapshots. Their dominant left singular vectors form a basis
//! `Φ`; online, every linear solve of equilibrium and of the corrector
//! problems is replaced by the Galerkin system `ΦᵀKΦ ξ = Φᵀf`.

use std::io::{Read, Write};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::backend::{BackendError, BackendStats, CoefficientBackend, CoefficientField};
use crate::linalg::{lu_solve, symmetric_eigen, DenseMatrix, LinalgError};
use crate::micro::{CellProblem, MicroError, MicroState, MicroStats, SENSITIVITY_MODES};
use crate::scalar::Real;
use crate::tensor::Tensor2;

#[derive(Debug, Error)]
pub enum PodError {
    #[error("snapshot ramp {mode:?} failed at strain {strain:e}: {source}")]
    Snapshot {
        mode: (usize, usize),
        strain: f64,
        #[source]
        source: MicroError,
    },
    #[error("snapshot bank is empty or identically zero")]
    EmptyBank,
    #[error("ramp needs at least two states, got {0}")]
    TooFewSteps(usize),
    #[error("reduced system is singular: {0}")]
    Singular(#[from] LinalgError),
    #[error(transparent)]
    Micro(#[from] MicroError),
    #[error("basis file: {0}")]
    Format(String),
    #[error("basis file I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl From<PodError> for BackendError {
    fn from(e: PodError) -> Self {
        match e {
            PodError::Micro(source) => BackendError::Micro { point: 0, source },
            other => BackendError::Reduction(other.to_string()),
        }
    }
}

/// Periodic snapshot vectors over the free DOFs of one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotBank<T> {
    pub columns: Vec<Vec<T>>,
    pub bound: T,
    pub steps: usize,
}

/// Columns recorded per converged ramp state: four correctors and the fluctuation.
pub const COLUMNS_PER_STATE: usize = 5;

impl<T: Real> SnapshotBank<T> {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn frobenius_squared(&self) -> T {
        self.columns.iter().flat_map(|c| c.iter()).map(|v| *v * *v).sum()
    }
}

/// Ramp states `k / (steps - 1) · (±bound)` in one symmetric strain mode.
pub fn ramp_strain<T: Real>(mode: usize, sign: T, bound: T, steps: usize, k: usize) -> [T; 3] {
    let mut e = [T::zero(); 3];
    e[mode] = sign * bound * T::lit(k as f64) / T::lit((steps - 1) as f64);
    e
}

fn symmetric_stretch<T: Real>(e: &[T; 3]) -> Tensor2<T> {
    Tensor2::from_plane([[T::one() + e[0], e[2]], [e[2], T::one() + e[1]]], T::one())
}

/// Periodic part of the cell displacement relative to the anchor.
fn fluctuation<T: Real>(problem: &CellProblem<T>, state: &MicroState<T>) -> Vec<T> {
    let f = state.mean_gradient();
    let x = problem.reference().nodes();
    let y = state.coordinates();
    let anchor = problem.cell().anchor();
    let affine = |n: usize, d: usize| f.0[d][0] * x[n][0] + f.0[d][1] * x[n][1];
    let shift = [y[anchor][0] - affine(anchor, 0), y[anchor][1] - affine(anchor, 1)];
    let full: Vec<T> = (0..x.len()).flat_map(|n| [0, 1].map(|d| y[n][d] - affine(n, d) - shift[d])).collect();
    problem.cell().restrict(&full)
}

/// Drives the cell along `±bound` in every symmetric mode, recording the
/// correctors and the fluctuation at each of the `steps` ramp states.
pub fn generate_snapshots<T: Real>(problem: &CellProblem<T>, bound: T, steps: usize) -> Result<SnapshotBank<T>, PodError> {
    if steps < 2 {
        return Err(PodError::TooFewSteps(steps));
    }
    let ramps: Vec<(usize, T)> = (0..SENSITIVITY_MODES.len()).flat_map(|m| [(m, T::one()), (m, -T::one())]).collect();
    let initial = problem.initial_state()?;
    let per_ramp: Vec<Vec<Vec<T>>> = ramps
        .par_iter()
        .map(|&(mode, sign)| {
            let mut state = initial.clone();
            let mut cols = Vec::with_capacity(steps * COLUMNS_PER_STATE);
            for k in 0..steps {
                let e = ramp_strain(mode, sign, bound, steps, k);
                if k > 0 {
                    state = problem.step_to(&state, &symmetric_stretch(&e)).map_err(|source| PodError::Snapshot {
                        mode: SENSITIVITY_MODES[mode],
                        strain: e[mode].as_f64(),
                        source,
                    })?;
                }
                for m in 0..4 {
                    cols.push(problem.cell().restrict(state.corrector(m)));
                }
                cols.push(fluctuation(problem, &state));
            }
            Ok(cols)
        })
        .collect::<Result<_, PodError>>()?;
    Ok(SnapshotBank { columns: per_ramp.into_iter().flatten().collect(), bound, steps })
}

/// Orthonormal reduced basis with the correlation spectrum it was cut from.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedBasis<T> {
    /// Basis vectors over the free DOFs.
    pub vectors: Vec<Vec<T>>,
    /// All nonnegative eigenvalues of the correlation operator, descending.
    pub eigenvalues: Vec<T>,
    pub tolerance: T,
}

/// Smallest `M` with `sqrt(Σ_{l>M} λ_l) / sqrt(Σ λ_l) < tolerance`. A zero
/// tolerance keeps the numerical rank.
pub fn truncation_size<T: Real>(eigenvalues: &[T], tolerance: T) -> usize {
    let total: T = eigenvalues.iter().copied().sum();
    if !(total > T::zero()) {
        return 0;
    }
    let rank = numerical_rank(eigenvalues);
    if tolerance <= T::zero() {
        return rank;
    }
    let mut tail = total;
    for (m, l) in eigenvalues.iter().enumerate() {
        if (tail / total).sqrt() < tolerance {
            return m;
        }
        tail -= *l;
    }
    rank
}

/// Eigenvalues of a Gram matrix above rounding level.
fn numerical_rank<T: Real>(eigenvalues: &[T]) -> usize {
    let top = eigenvalues.first().copied().unwrap_or(T::zero());
    let cut = top * T::lit(eigenvalues.len().max(1) as f64) * T::epsilon();
    eigenvalues.iter().take_while(|l| **l > cut && **l > T::zero()).count()
}

impl<T: Real> ReducedBasis<T> {
    /// Truncated basis from the snapshot-space problem `VᵀV ψ = λψ`, lifted by
    /// `φ = Vψ / sqrt(λ)`. With `dense_correlation` the `N×N` problem
    /// `VVᵀ φ = λφ` is solved directly instead.
    pub fn build(bank: &SnapshotBank<T>, tolerance: T, dense_correlation: bool) -> Result<Self, PodError> {
        let n = bank.columns.first().map_or(0, |c| c.len());
        if bank.is_empty() || n == 0 || !(bank.frobenius_squared() > T::zero()) {
            return Err(PodError::EmptyBank);
        }
        let (eigenvalues, raw) = if dense_correlation { dense_modes(bank, n) } else { snapshot_modes(bank) };
        let m = truncation_size(&eigenvalues, tolerance);
        let vectors = orthonormalize(raw.into_iter().take(m).collect());
        Ok(Self { vectors, eigenvalues, tolerance })
    }

    /// Identity basis over `n` DOFs; the reduced problem is the full one.
    pub fn complete(n: usize) -> Self {
        let vectors = (0..n)
            .map(|i| {
                let mut v = vec![T::zero(); n];
                v[i] = T::one();
                v
            })
            .collect();
        Self { vectors, eigenvalues: vec![T::one(); n], tolerance: T::zero() }
    }

    pub fn size(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    /// `sqrt(Σ_{l>M} λ_l) / sqrt(Σ λ_l)` for the retained size.
    pub fn tail_ratio(&self) -> T {
        let total: T = self.eigenvalues.iter().copied().sum();
        let tail: T = self.eigenvalues.iter().skip(self.size()).copied().sum();
        (tail.max(T::zero()) / total).sqrt()
    }

    /// `Φᵀ v`.
    pub fn project(&self, v: &[T]) -> Vec<T> {
        self.vectors.iter().map(|phi| dot(phi, v)).collect()
    }

    /// `Φ ξ`.
    pub fn lift(&self, coeffs: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        for (phi, c) in self.vectors.iter().zip(coeffs) {
            for (o, p) in out.iter_mut().zip(phi) {
                *o += *c * *p;
            }
        }
        out
    }

    /// Binary form: magic, `N`, `M`, tolerance, 32-byte checksum, then the
    /// basis column by column, all little endian.
    pub fn write_to(&self, mut w: impl Write, checksum: &[u8; 32]) -> Result<(), PodError> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        w.write_all(&(self.size() as u64).to_le_bytes())?;
        w.write_all(&self.tolerance.as_f64().to_le_bytes())?;
        w.write_all(checksum)?;
        for phi in &self.vectors {
            for v in phi {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a basis written by [`ReducedBasis::write_to`], rejecting a
    /// different cell checksum. The spectrum is not stored.
    pub fn read_from(mut r: impl Read, checksum: &[u8; 32]) -> Result<Self, PodError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(PodError::Format("not a basis file".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<[u8; 8], PodError> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let m = u64::from_le_bytes(next(&mut r)?) as usize;
        let tolerance = T::lit(f64::from_le_bytes(next(&mut r)?));
        let mut stored = [0u8; 32];
        r.read_exact(&mut stored)?;
        if &stored != checksum {
            return Err(PodError::Format("cell mesh checksum mismatch".into()));
        }
        let mut vectors = Vec::with_capacity(m);
        for _ in 0..m {
            let mut phi = Vec::with_capacity(n);
            for _ in 0..n {
                phi.push(T::lit(f64::from_le_bytes(next(&mut r)?)));
            }
            vectors.push(phi);
        }
        Ok(Self { vectors, eigenvalues: Vec::new(), tolerance })
    }
}

const MAGIC: &[u8; 8] = b"PODBASIS";

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn snapshot_modes<T: Real>(bank: &SnapshotBank<T>) -> (Vec<T>, Vec<Vec<T>>) {
    let k = bank.len();
    let mut gram = DenseMatrix::<T>::zeros(k, k);
    for i in 0..k {
        for j in 0..=i {
            let v = dot(&bank.columns[i], &bank.columns[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let (values, psi) = symmetric_eigen(&gram);
    let rank = numerical_rank(&values);
    let n = bank.columns[0].len();
    let vectors = (0..rank)
        .map(|m| {
            let scale = T::one() / values[m].sqrt();
            let mut phi = vec![T::zero(); n];
            for (c, col) in bank.columns.iter().enumerate() {
                let w = psi[(c, m)] * scale;
                for (p, v) in phi.iter_mut().zip(col) {
                    *p += w * *v;
                }
            }
            phi
        })
        .collect();
    (values.into_iter().map(|l| l.max(T::zero())).collect(), vectors)
}

fn dense_modes<T: Real>(bank: &SnapshotBank<T>, n: usize) -> (Vec<T>, Vec<Vec<T>>) {
    let mut corr = DenseMatrix::<T>::zeros(n, n);
    for col in &bank.columns {
        for i in 0..n {
            if col[i] == T::zero() {
                continue;
            }
            for j in 0..n {
                corr[(i, j)] += col[i] * col[j];
            }
        }
    }
    let (values, phi) = symmetric_eigen(&corr);
    let rank = numerical_rank(&values);
    let vectors = (0..rank).map(|m| phi.column(m)).collect();
    (values.into_iter().map(|l| l.max(T::zero())).collect(), vectors)
}

/// Two passes of modified Gram-Schmidt, dropping vectors that vanish, then a
/// sign convention: the entry of largest magnitude is positive.
fn orthonormalize<T: Real>(raw: Vec<Vec<T>>) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = Vec::with_capacity(raw.len());
    for mut v in raw {
        let original = dot(&v, &v).sqrt();
        for _ in 0..2 {
            for q in &out {
                let c = dot(q, &v);
                for (x, y) in v.iter_mut().zip(q) {
                    *x -= c * *y;
                }
            }
        }
        let norm = dot(&v, &v).sqrt();
        if !(norm > T::lit(1e-10) * original) {
            continue;
        }
        let peak = v.iter().copied().fold(T::zero(), |m, x| if x.abs() > m.abs() { x } else { m });
        let s = if peak < T::zero() { -T::one() / norm } else { T::one() / norm };
        v.iter_mut().for_each(|x| *x *= s);
        out.push(v);
    }
    out
}

/// Dense reduced matrix `ΦᵀKΦ` from the sparse tangent values.
fn reduced_matrix<T: Real>(problem: &CellProblem<T>, basis: &ReducedBasis<T>, values: &[T]) -> DenseMatrix<T> {
    let m = basis.size();
    let k_phi: Vec<Vec<T>> = basis.vectors.iter().map(|phi| problem.pattern().matvec(values, phi)).collect();
    let mut out = DenseMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = dot(&basis.vectors[i], &k_phi[j]);
        }
    }
    out
}

/// Outcome of a reduced cell step, with the Galerkin residuals of its final
/// corrector solves.
#[derive(Clone, Debug)]
pub struct ReducedStep<T> {
    pub state: MicroState<T>,
    /// `max_m |Φᵀ(K Φζ_m - f_m)|` relative to `max_m |Φᵀ f_m|`.
    pub galerkin_residual: T,
}

/// Reduced counterpart of [`CellProblem::step_to`].
pub fn reduced_step_to<T: Real>(
    problem: &CellProblem<T>,
    basis: &ReducedBasis<T>,
    state: &MicroState<T>,
    target: &Tensor2<T>,
) -> Result<ReducedStep<T>, PodError> {
    reduced_advance(problem, basis, state, target, 0)
}

fn reduced_advance<T: Real>(
    problem: &CellProblem<T>,
    basis: &ReducedBasis<T>,
    state: &MicroState<T>,
    target: &Tensor2<T>,
    level: usize,
) -> Result<ReducedStep<T>, PodError> {
    match reduced_increment(problem, basis, state, target) {
        Err(PodError::Micro(e)) if e.is_recoverable() && level < problem.settings().max_substep_levels => {
            let mid = (*state.mean_gradient() + *target) * T::lit(0.5);
            let first = reduced_advance(problem, basis, state, &mid, level + 1)?;
            reduced_advance(problem, basis, &first.state, target, level + 1)
        }
        other => other,
    }
}

fn reduced_increment<T: Real>(
    problem: &CellProblem<T>,
    basis: &ReducedBasis<T>,
    state: &MicroState<T>,
    target: &Tensor2<T>,
) -> Result<ReducedStep<T>, PodError> {
    let n = problem.n_free();
    if basis.size() > 0 && basis.dim() != n {
        return Err(PodError::Format(format!("basis has {} rows, cell has {n} free DOFs", basis.dim())));
    }
    // An empty basis lifts to the zero update.
    let lift = |c: &[T]| {
        let mut v = basis.lift(c);
        v.resize(n, T::zero());
        v
    };
    let inv = state.mean_gradient().inverse().ok_or(MicroError::Inverted { element: 0, jacobian: 0.0 })?;
    let g = target.dot(&inv) - Tensor2::identity();
    let correctors: [Vec<T>; 4] = std::array::from_fn(|m| state.corrector(m).to_vec());
    let mut coords = problem.predict(state.coordinates(), &correctors, &g);
    problem.lattice_fix(&mut coords, target);
    let mut stats: MicroStats = state.stats();
    let scale = problem.reference_area().sqrt();
    let settings = problem.settings();
    let mut converged = false;
    let mut last = T::infinity();
    for _ in 0..settings.max_iterations {
        let (values, internal, _) = problem.tangent_and_residual(&coords)?;
        let kr = reduced_matrix(problem, basis, &values);
        let rhs: Vec<T> = basis.project(&internal).into_iter().map(|v| -v).collect();
        let xi = lu_solve(&kr, &rhs)?;
        stats.newton_iterations += 1;
        stats.factorizations += 1;
        let dw = lift(&xi);
        problem.apply_periodic_update(&mut coords, &dw);
        last = dw.iter().fold(T::zero(), |m, v| m.max(v.abs())) / scale;
        if !last.is_finite() {
            break;
        }
        if last <= settings.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MicroError::NotConverged { iterations: settings.max_iterations, last_update: last.as_f64() }.into());
    }
    let (values, _, rhs) = problem.tangent_and_residual(&coords)?;
    let kr = reduced_matrix(problem, basis, &values);
    stats.factorizations += 1;
    let mut worst = T::zero();
    let mut size = T::zero();
    let mut new_correctors: [Vec<T>; 4] = Default::default();
    for (m, f) in rhs.iter().enumerate() {
        let pf = basis.project(f);
        let zeta = lu_solve(&kr, &pf)?;
        let q = lift(&zeta);
        let kq = problem.pattern().matvec(&values, &q);
        let galerkin: Vec<T> = basis.project(&kq).iter().zip(&pf).map(|(a, b)| *a - *b).collect();
        worst = galerkin.iter().fold(worst, |w, v| w.max(v.abs()));
        size = pf.iter().fold(size, |s, v| s.max(v.abs()));
        new_correctors[m] = problem.cell().expand(&q);
    }
    let state = problem.state_from_parts(coords, new_correctors, *target, stats)?;
    let galerkin_residual = if size > T::zero() { worst / size } else { worst };
    Ok(ReducedStep { state, galerkin_residual })
}

/// Coefficient backend running reduced cell solves at every macro point.
pub struct PodBackend<T> {
    problem: Arc<CellProblem<T>>,
    basis: Arc<ReducedBasis<T>>,
    states: Vec<MicroState<T>>,
    stats: BackendStats,
}

impl<T: Real> PodBackend<T> {
    pub fn new(problem: Arc<CellProblem<T>>, basis: Arc<ReducedBasis<T>>, points: usize) -> Result<Self, PodError> {
        let start = Instant::now();
        let initial = problem.initial_state()?;
        let stats = BackendStats { micro_solves: 1, micro_time: start.elapsed(), ..Default::default() };
        Ok(Self { problem, basis, states: vec![initial; points], stats })
    }

    pub fn basis(&self) -> &ReducedBasis<T> {
        &self.basis
    }
}

impl<T: Real> CoefficientBackend<T> for PodBackend<T> {
    fn coefficients(&mut self, deformation: &[Tensor2<T>]) -> Result<CoefficientField<T>, BackendError> {
        assert_eq!(deformation.len(), self.states.len(), "one deformation gradient per point");
        let start = Instant::now();
        let (problem, basis) = (&self.problem, &self.basis);
        let updated: Vec<Option<MicroState<T>>> = self
            .states
            .par_iter()
            .zip(deformation.par_iter())
            .enumerate()
            .map(|(point, (state, f))| {
                if state.mean_gradient() == f {
                    return Ok(None);
                }
                reduced_step_to(problem, basis, state, f).map(|s| Some(s.state)).map_err(|e| match e {
                    PodError::Micro(source) => BackendError::Micro { point, source },
                    other => BackendError::Reduction(format!("macro point {point}: {other}")),
                })
            })
            .collect::<Result<_, _>>()?;
        let mut solved = 0;
        for (state, new) in self.states.iter_mut().zip(updated) {
            if let Some(s) = new {
                *state = s;
                solved += 1;
            }
        }
        self.stats.evaluations += 1;
        self.stats.micro_solves += solved;
        self.stats.last_new_solves = solved;
        self.stats.micro_time += start.elapsed();
        Ok(CoefficientField::from_sets(self.states.iter().map(|s| s.coefficients().clone())))
    }

    fn stats(&self) -> &BackendStats {
        &self.stats
    }

    fn name(&self) -> &'static str {
        "pod"
    }
}
