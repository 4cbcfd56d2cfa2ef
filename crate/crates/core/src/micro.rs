//! Periodic cell problem: equilibrium, correctors, homogenized coefficients
//! and their sensitivities with respect to the macroscopic deformation.
//!
//! A cell state is stored as the current nodal positions `y`. Its macroscopic
//! deformation gradient `F̄` is the lattice map: for every periodic pair,
//! `y_slave - y_master = F̄ (X_slave - X_master)`.
//!
//! All cell integrals are averages over the current cell,
//! `a(u, v) = 1/|Y| ∫_Y A_ijkl ∂_l u_k ∂_j v_i`. The affine modes are
//! `Π^ij_k(y) = y_j δ_ik` and `Ξ^ij = ω^ij + Π^ij`, where the periodic corrector
//! `ω^ij` solves `a(ω^ij + Π^ij, v) = 0` for all periodic `v`.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{LinalgError, SparseLdl, SymmetricPattern};
use crate::material::{DeformationState, NeoHookean};
use crate::mesh::{match_periodic, quadrature, shape_gradients, Mesh, MeshError, PeriodicCell};
use crate::scalar::Real;
use crate::tensor::{Tensor2, Tensor4};

/// In-plane strain modes `(i, j)` carrying correctors: 11, 22, 12, 21.
pub const MODES: [(usize, usize); 4] = [(0, 0), (1, 1), (0, 1), (1, 0)];

/// Symmetric modes carrying sensitivities: 11, 22 and the symmetrised shear.
/// The shear sensitivity is the derivative along `½(e1⊗e2 + e2⊗e1)`.
pub const SENSITIVITY_MODES: [(usize, usize); 3] = [(0, 0), (1, 1), (0, 1)];

#[derive(Debug, Error)]
pub enum MicroError {
    #[error("element {element} inverted (J = {jacobian})")]
    Inverted { element: usize, jacobian: f64 },
    #[error("cell equilibrium not reached after {iterations} iterations (last update {last_update:e})")]
    NotConverged { iterations: usize, last_update: f64 },
    #[error("no material assigned to region {0}")]
    MissingMaterial(u32),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl MicroError {
    /// Failures a smaller increment may avoid.
    pub fn is_recoverable(&self) -> bool {
        matches!(self, MicroError::Inverted { .. } | MicroError::NotConverged { .. } | MicroError::Linalg(_))
    }
}

/// Solver controls for the cell problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicroSettings<T> {
    /// Equilibrium stops once the largest nodal update, relative to the cell size, is at most this.
    pub tolerance: T,
    pub max_iterations: usize,
    /// How many times a failing increment may be halved.
    pub max_substep_levels: usize,
    /// Relative tolerance for periodic node pairing.
    pub pairing_tolerance: T,
    /// Compute coefficient sensitivities after each step.
    pub sensitivities: bool,
}

impl<T: Real> Default for MicroSettings<T> {
    fn default() -> Self {
        Self {
            tolerance: T::lit(1e-9),
            max_iterations: 20,
            max_substep_levels: 8,
            pairing_tolerance: T::lit(1e-8),
            sensitivities: true,
        }
    }
}

/// Homogenized stress `S`, tangent `A`, and optionally their sensitivities
/// along [`SENSITIVITY_MODES`].
///
/// Only in-plane entries of `tangent` are populated; `stress` keeps the
/// out-of-plane normal component.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSet<T> {
    pub stress: Tensor2<T>,
    pub tangent: Tensor4<T>,
    pub sensitivities: Option<Sensitivities<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sensitivities<T> {
    pub stress: [Tensor2<T>; 3],
    pub tangent: [Tensor4<T>; 3],
}

/// Counters accumulated over a state's history.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MicroStats {
    pub newton_iterations: usize,
    pub factorizations: usize,
    pub substeps: usize,
}

/// Converged cell configuration with its correctors and coefficients.
#[derive(Clone, Debug)]
pub struct MicroState<T> {
    coords: Vec<[T; 2]>,
    correctors: [Vec<T>; 4],
    mean_gradient: Tensor2<T>,
    coeffs: CoefficientSet<T>,
    stats: MicroStats,
}

impl<T: Real> MicroState<T> {
    pub fn coordinates(&self) -> &[[T; 2]] {
        &self.coords
    }

    /// Interleaved nodal corrector of `MODES[mode]`.
    pub fn corrector(&self, mode: usize) -> &[T] {
        &self.correctors[mode]
    }

    pub fn mean_gradient(&self) -> &Tensor2<T> {
        &self.mean_gradient
    }

    pub fn coefficients(&self) -> &CoefficientSet<T> {
        &self.coeffs
    }

    pub fn stats(&self) -> MicroStats {
        self.stats
    }
}

/// Reference geometry of one integration point. Affine elements use a single
/// point carrying the whole element area, which is exact for constant integrands.
#[derive(Clone, Copy, Debug)]
struct RefPoint<T> {
    grads: [[T; 2]; 4],
    weight: T,
}

/// Current-configuration data at one integration point.
struct Point<T> {
    grads: [[T; 2]; 4],
    weight: T,
    state: DeformationState<T>,
}

/// Immutable description of one discretised cell and its materials.
#[derive(Debug)]
pub struct CellProblem<T> {
    cell: PeriodicCell<T>,
    materials: Vec<NeoHookean<T>>,
    element_material: Vec<usize>,
    ref_points: Vec<Vec<RefPoint<T>>>,
    pattern: Arc<SymmetricPattern>,
    reference_area: T,
    settings: MicroSettings<T>,
}

struct ElementBlock<T> {
    stiffness: Vec<T>,
    internal: Vec<T>,
    corrector_rhs: [Vec<T>; 4],
}

struct Assembly<T> {
    values: Vec<T>,
    internal: Vec<T>,
    corrector_rhs: [Vec<T>; 4],
}

impl<T: Real> CellProblem<T> {
    /// Builds the cell from a mesh of the unit square (or any rectangle) and
    /// a material per region tag.
    pub fn new(
        mesh: &Mesh<T>,
        materials: &BTreeMap<u32, NeoHookean<T>>,
        settings: MicroSettings<T>,
    ) -> Result<Self, MicroError> {
        let cell = match_periodic(mesh, settings.pairing_tolerance)?;
        let tags: Vec<u32> = materials.keys().copied().collect();
        let element_material = mesh
            .elements()
            .iter()
            .map(|el| tags.binary_search(&el.region).map_err(|_| MicroError::MissingMaterial(el.region)))
            .collect::<Result<Vec<_>, _>>()?;
        let ref_points: Vec<Vec<RefPoint<T>>> = (0..mesh.element_count())
            .map(|e| {
                let el = &mesh.elements()[e];
                let coords = mesh.element_coords(e);
                let rule = quadrature::<T>(el.kind);
                let pts: Vec<RefPoint<T>> = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(xi, w)| {
                        let sg = shape_gradients(el.kind, &coords, *xi);
                        RefPoint { grads: sg.grads, weight: *w * sg.det }
                    })
                    .collect();
                if el.kind.is_affine() {
                    let weight = pts.iter().map(|p| p.weight).sum();
                    vec![RefPoint { grads: pts[0].grads, weight }]
                } else {
                    pts
                }
            })
            .collect();
        let reference_area = ref_points.iter().flatten().map(|p| p.weight).sum();
        let element_dofs = mesh
            .elements()
            .iter()
            .map(|el| el.nodes().iter().flat_map(|&n| [cell.dof_index(n, 0), cell.dof_index(n, 1)]).collect())
            .collect();
        let pattern = SymmetricPattern::new(cell.n_free(), element_dofs)?;
        Ok(Self {
            cell,
            materials: materials.values().copied().collect(),
            element_material,
            ref_points,
            pattern,
            reference_area,
            settings,
        })
    }

    pub fn cell(&self) -> &PeriodicCell<T> {
        &self.cell
    }

    pub fn reference(&self) -> &Mesh<T> {
        self.cell.reference()
    }

    pub fn settings(&self) -> &MicroSettings<T> {
        &self.settings
    }

    pub fn settings_mut(&mut self) -> &mut MicroSettings<T> {
        &mut self.settings
    }

    /// Number of independent periodic unknowns.
    pub fn n_free(&self) -> usize {
        self.cell.n_free()
    }

    pub fn reference_area(&self) -> T {
        self.reference_area
    }

    pub(crate) fn pattern(&self) -> &Arc<SymmetricPattern> {
        &self.pattern
    }

    /// Undeformed, unstressed cell with its correctors and coefficients.
    pub fn initial_state(&self) -> Result<MicroState<T>, MicroError> {
        let coords = self.reference().nodes().to_vec();
        let mut stats = MicroStats::default();
        let correctors = self.solve_correctors(&coords, &mut stats)?;
        let coeffs = self.coefficients(&coords, &correctors, self.settings.sensitivities)?;
        Ok(MicroState { coords, correctors, mean_gradient: Tensor2::identity(), coeffs, stats })
    }

    /// Advances a state by the macroscopic increment `g`, so that the new mean
    /// gradient is `(I + g) F̄`. The in-plane block of `g` is used.
    pub fn micro_step(&self, state: &MicroState<T>, g: &Tensor2<T>) -> Result<MicroState<T>, MicroError> {
        let target = (Tensor2::identity() + plane_part(g)).dot(&state.mean_gradient);
        self.step_to(state, &target)
    }

    /// Advances a state to the mean gradient `target`, halving the increment
    /// on inversion or stalled equilibrium.
    pub fn step_to(&self, state: &MicroState<T>, target: &Tensor2<T>) -> Result<MicroState<T>, MicroError> {
        let mut out = self.advance(state, target, 0)?;
        out.coeffs = self.coefficients(&out.coords, &out.correctors, self.settings.sensitivities)?;
        Ok(out)
    }

    fn advance(&self, state: &MicroState<T>, target: &Tensor2<T>, level: usize) -> Result<MicroState<T>, MicroError> {
        match self.single_increment(state, target) {
            Ok(s) => Ok(s),
            Err(e) if e.is_recoverable() && level < self.settings.max_substep_levels => {
                let half = T::lit(0.5);
                let mid = (state.mean_gradient + *target) * half;
                let mut first = self.advance(state, &mid, level + 1)?;
                first.stats.substeps += 1;
                self.advance(&first, target, level + 1)
            }
            Err(e) => Err(e),
        }
    }

    fn single_increment(&self, state: &MicroState<T>, target: &Tensor2<T>) -> Result<MicroState<T>, MicroError> {
        let inv = state.mean_gradient.inverse().ok_or(MicroError::Inverted { element: 0, jacobian: 0.0 })?;
        let g = target.dot(&inv) - Tensor2::identity();
        let mut coords = self.predict(&state.coords, &state.correctors, &g);
        self.enforce_lattice(&mut coords, target);
        let mut stats = state.stats;
        self.equilibrate(&mut coords, &mut stats)?;
        let correctors = self.solve_correctors(&coords, &mut stats)?;
        Ok(MicroState {
            coords,
            correctors,
            mean_gradient: *target,
            coeffs: state.coeffs.clone(),
            stats,
        })
    }

    /// Predictor `y + Ξ^ij g_ij`, with all four in-plane modes.
    pub fn predict(&self, coords: &[[T; 2]], correctors: &[Vec<T>; 4], g: &Tensor2<T>) -> Vec<[T; 2]> {
        coords
            .iter()
            .enumerate()
            .map(|(n, y)| {
                let mut out = *y;
                for (m, &(i, j)) in MODES.iter().enumerate() {
                    let gij = g.0[i][j];
                    out[0] += correctors[m][2 * n] * gij;
                    out[1] += correctors[m][2 * n + 1] * gij;
                    out[i] += y[j] * gij;
                }
                out
            })
            .collect()
    }

    /// Places every slave node exactly at `master + F̄ (X_slave - X_master)`.
    fn enforce_lattice(&self, coords: &mut [[T; 2]], mean: &Tensor2<T>) {
        for (slave, master) in self.cell.pairings() {
            let off = self.cell.lattice_offset(slave);
            let m = coords[master];
            coords[slave] = [
                m[0] + mean.0[0][0] * off[0] + mean.0[0][1] * off[1],
                m[1] + mean.0[1][0] * off[0] + mean.0[1][1] * off[1],
            ];
        }
    }

    /// Newton iterations on `a(δw, v) = -⨍ σ : ∇v` until the update is below tolerance.
    pub fn equilibrate(&self, coords: &mut [[T; 2]], stats: &mut MicroStats) -> Result<usize, MicroError> {
        let scale = self.reference_area.sqrt();
        let mut last = T::infinity();
        for it in 1..=self.settings.max_iterations {
            let asm = self.assemble(coords)?;
            let ldl = SparseLdl::factor(&self.pattern, &asm.values)?;
            stats.factorizations += 1;
            stats.newton_iterations += 1;
            let rhs: Vec<T> = asm.internal.iter().map(|v| -*v).collect();
            let dw = ldl.solve(&rhs);
            self.apply_periodic_update(coords, &dw);
            last = dw.iter().fold(T::zero(), |m, v| m.max(v.abs())) / scale;
            if !last.is_finite() {
                break;
            }
            if last <= self.settings.tolerance {
                self.check_orientation(coords)?;
                return Ok(it);
            }
        }
        Err(MicroError::NotConverged { iterations: self.settings.max_iterations, last_update: last.as_f64() })
    }

    pub(crate) fn apply_periodic_update(&self, coords: &mut [[T; 2]], reduced: &[T]) {
        for (n, y) in coords.iter_mut().enumerate() {
            for (d, yd) in y.iter_mut().enumerate() {
                if let Some(i) = self.cell.dof_index(n, d) {
                    *yd += reduced[i];
                }
            }
        }
    }

    fn solve_correctors(&self, coords: &[[T; 2]], stats: &mut MicroStats) -> Result<[Vec<T>; 4], MicroError> {
        let asm = self.assemble(coords)?;
        let ldl = SparseLdl::factor(&self.pattern, &asm.values)?;
        stats.factorizations += 1;
        Ok(std::array::from_fn(|m| self.cell.expand(&ldl.solve(&asm.corrector_rhs[m]))))
    }

    fn check_orientation(&self, coords: &[[T; 2]]) -> Result<(), MicroError> {
        for e in 0..self.ref_points.len() {
            self.points(coords, e)?;
        }
        Ok(())
    }

    fn points(&self, coords: &[[T; 2]], e: usize) -> Result<Vec<Point<T>>, MicroError> {
        let el = &self.reference().elements()[e];
        let nodes = el.nodes();
        self.ref_points[e]
            .iter()
            .map(|rp| {
                let mut f = [[T::zero(); 2]; 2];
                for (a, &n) in nodes.iter().enumerate() {
                    for i in 0..2 {
                        for j in 0..2 {
                            f[i][j] += coords[n][i] * rp.grads[a][j];
                        }
                    }
                }
                let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
                if !(det > T::zero()) {
                    return Err(MicroError::Inverted { element: e, jacobian: det.as_f64() });
                }
                let inv = [[f[1][1] / det, -f[0][1] / det], [-f[1][0] / det, f[0][0] / det]];
                let mut grads = [[T::zero(); 2]; 4];
                for a in 0..nodes.len() {
                    for j in 0..2 {
                        grads[a][j] = rp.grads[a][0] * inv[0][j] + rp.grads[a][1] * inv[1][j];
                    }
                }
                let state = DeformationState::new(Tensor2::from_plane(f, T::one()))
                    .map_err(|_| MicroError::Inverted { element: e, jacobian: det.as_f64() })?;
                Ok(Point { grads, weight: rp.weight * det, state })
            })
            .collect()
    }

    fn element_block(&self, coords: &[[T; 2]], e: usize) -> Result<ElementBlock<T>, MicroError> {
        let nn = self.reference().elements()[e].nodes().len();
        let nd = 2 * nn;
        let mat = &self.materials[self.element_material[e]];
        let mut stiffness = vec![T::zero(); nd * nd];
        let mut internal = vec![T::zero(); nd];
        let mut corrector_rhs: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); nd]);
        for p in self.points(coords, e)? {
            let (sigma, a) = mat.stress_and_tangent(&p.state);
            let w = p.weight;
            for ai in 0..nn {
                let ga = p.grads[ai];
                for i in 0..2 {
                    let row = 2 * ai + i;
                    internal[row] += w * (sigma.0[i][0] * ga[0] + sigma.0[i][1] * ga[1]);
                    for (m, &(pi, pj)) in MODES.iter().enumerate() {
                        corrector_rhs[m][row] -= w * (a.get(i, 0, pi, pj) * ga[0] + a.get(i, 1, pi, pj) * ga[1]);
                    }
                    for bi in 0..nn {
                        let gb = p.grads[bi];
                        for k in 0..2 {
                            let mut s = T::zero();
                            for j in 0..2 {
                                for l in 0..2 {
                                    s += a.get(i, j, k, l) * ga[j] * gb[l];
                                }
                            }
                            stiffness[row * nd + 2 * bi + k] += w * s;
                        }
                    }
                }
            }
        }
        Ok(ElementBlock { stiffness, internal, corrector_rhs })
    }

    fn assemble(&self, coords: &[[T; 2]]) -> Result<Assembly<T>, MicroError> {
        let blocks: Vec<ElementBlock<T>> = (0..self.ref_points.len())
            .into_par_iter()
            .map(|e| self.element_block(coords, e))
            .collect::<Result<_, _>>()?;
        let n = self.pattern.dim();
        let mut values = self.pattern.zero_values();
        let mut internal = vec![T::zero(); n];
        let mut corrector_rhs: [Vec<T>; 4] = std::array::from_fn(|_| vec![T::zero(); n]);
        for (e, b) in blocks.iter().enumerate() {
            self.pattern.add_element(e, &b.stiffness, &mut values);
            self.pattern.add_element_vector(e, &b.internal, &mut internal);
            for m in 0..4 {
                self.pattern.add_element_vector(e, &b.corrector_rhs[m], &mut corrector_rhs[m]);
            }
        }
        Ok(Assembly { values, internal, corrector_rhs })
    }

    /// Homogenized stress and tangent of a configuration with known
    /// correctors, plus sensitivities on request.
    pub fn coefficients(
        &self,
        coords: &[[T; 2]],
        correctors: &[Vec<T>; 4],
        with_sensitivities: bool,
    ) -> Result<CoefficientSet<T>, MicroError> {
        let partials: Vec<CoefficientSums<T>> = (0..self.ref_points.len())
            .into_par_iter()
            .map(|e| self.element_coefficients(coords, correctors, e, with_sensitivities))
            .collect::<Result<_, _>>()?;
        let mut total = CoefficientSums::new(with_sensitivities);
        for p in &partials {
            total.add(p);
        }
        Ok(total.finish())
    }

    fn element_coefficients(
        &self,
        coords: &[[T; 2]],
        correctors: &[Vec<T>; 4],
        e: usize,
        with_sensitivities: bool,
    ) -> Result<CoefficientSums<T>, MicroError> {
        let nodes = self.reference().elements()[e].nodes();
        let mat = &self.materials[self.element_material[e]];
        let mut sums = CoefficientSums::new(with_sensitivities);
        for p in self.points(coords, e)? {
            let w = p.weight;
            let (sigma, a) = mat.stress_and_tangent(&p.state);
            // ∇Ξ^m = e_i ⊗ e_j + ∇ω^m.
            let h: [Tensor2<T>; 4] = std::array::from_fn(|m| {
                let (i, j) = MODES[m];
                let mut t = Tensor2::unit(i, j);
                for (a_, &n) in nodes.iter().enumerate() {
                    for r in 0..2 {
                        let v = correctors[m][2 * n + r];
                        t.0[r][0] += v * p.grads[a_][0];
                        t.0[r][1] += v * p.grads[a_][1];
                    }
                }
                t
            });
            let ah: [Tensor2<T>; 4] = std::array::from_fn(|m| a.contract(&h[m]));
            sums.area += w;
            sums.stress += sigma * w;
            for (mi, &(i, j)) in MODES.iter().enumerate() {
                for (mk, &(k, l)) in MODES.iter().enumerate() {
                    sums.tangent.add_at(i, j, k, l, w * h[mi].ddot(&ah[mk]));
                }
            }
            let Some(sens) = sums.sens.as_mut() else { continue };
            let half = T::lit(0.5);
            for (r, grad) in [h[0], h[1], (h[2] + h[3]) * half].iter().enumerate() {
                let div = grad.trace();
                let da = mat.d_tangent_a(&p.state, grad);
                let dsigma = mat.d_cauchy_stress(&p.state, grad);
                sens.stress_div[r] += sigma * (w * div);
                sens.div[r] += w * div;
                sens.d_stress[r] += dsigma * w;
                let hg: [Tensor2<T>; 4] = std::array::from_fn(|m| h[m].dot(grad));
                // ∇(δΠ^kl) = e_k ⊗ (row l of ∇𝒱).
                let pm: [Tensor2<T>; 4] = std::array::from_fn(|m| {
                    let (k, l) = MODES[m];
                    let mut t = Tensor2::zero();
                    t.0[k] = grad.0[l];
                    t
                });
                let dah: [Tensor2<T>; 4] = std::array::from_fn(|m| da.contract(&h[m]));
                let ahg: [Tensor2<T>; 4] = std::array::from_fn(|m| a.contract(&hg[m]));
                let ap: [Tensor2<T>; 4] = std::array::from_fn(|m| a.contract(&pm[m]));
                for (mi, &(i, j)) in MODES.iter().enumerate() {
                    for (mk, &(k, l)) in MODES.iter().enumerate() {
                        let v = h[mi].ddot(&dah[mk]) - h[mi].ddot(&ahg[mk]) - hg[mi].ddot(&ah[mk])
                            + div * h[mi].ddot(&ah[mk])
                            + h[mi].ddot(&ap[mk])
                            + pm[mi].ddot(&ah[mk]);
                        sens.d_tangent[r].add_at(i, j, k, l, w * v);
                    }
                }
            }
        }
        Ok(sums)
    }

    /// Per-element mean deformation gradient of a configuration.
    pub fn element_gradients(&self, coords: &[[T; 2]]) -> Result<Vec<Tensor2<T>>, MicroError> {
        (0..self.ref_points.len())
            .map(|e| {
                let pts = self.points(coords, e)?;
                let total: T = self.ref_points[e].iter().map(|p| p.weight).sum();
                let mut f = Tensor2::zero();
                for (p, rp) in pts.iter().zip(&self.ref_points[e]) {
                    f += *p.state.deformation_gradient() * (rp.weight / total);
                }
                Ok(f)
            })
            .collect()
    }

    /// Assembled tangent values and internal-force vector at `coords`, for
    /// reduced-order solvers sharing this discretisation.
    pub(crate) fn tangent_and_residual(&self, coords: &[[T; 2]]) -> Result<(Vec<T>, Vec<T>, [Vec<T>; 4]), MicroError> {
        let asm = self.assemble(coords)?;
        Ok((asm.values, asm.internal, asm.corrector_rhs))
    }

    /// Builds a state from externally computed fields, recomputing coefficients.
    pub(crate) fn state_from_parts(
        &self,
        coords: Vec<[T; 2]>,
        correctors: [Vec<T>; 4],
        mean_gradient: Tensor2<T>,
        stats: MicroStats,
    ) -> Result<MicroState<T>, MicroError> {
        let coeffs = self.coefficients(&coords, &correctors, self.settings.sensitivities)?;
        Ok(MicroState { coords, correctors, mean_gradient, coeffs, stats })
    }

    pub(crate) fn lattice_fix(&self, coords: &mut [[T; 2]], mean: &Tensor2<T>) {
        self.enforce_lattice(coords, mean);
    }
}

/// In-plane block of `g`, out-of-plane entries zeroed.
fn plane_part<T: Real>(g: &Tensor2<T>) -> Tensor2<T> {
    Tensor2::from_plane(g.plane(), T::zero())
}

struct SensitivitySums<T> {
    stress_div: [Tensor2<T>; 3],
    div: [T; 3],
    d_stress: [Tensor2<T>; 3],
    d_tangent: [Tensor4<T>; 3],
}

struct CoefficientSums<T> {
    area: T,
    stress: Tensor2<T>,
    tangent: Tensor4<T>,
    sens: Option<SensitivitySums<T>>,
}

impl<T: Real> CoefficientSums<T> {
    fn new(with_sensitivities: bool) -> Self {
        Self {
            area: T::zero(),
            stress: Tensor2::zero(),
            tangent: Tensor4::zero(),
            sens: with_sensitivities.then(|| SensitivitySums {
                stress_div: [Tensor2::zero(); 3],
                div: [T::zero(); 3],
                d_stress: [Tensor2::zero(); 3],
                d_tangent: [Tensor4::zero(); 3],
            }),
        }
    }

    fn add(&mut self, other: &Self) {
        self.area += other.area;
        self.stress += other.stress;
        self.tangent.axpy(T::one(), &other.tangent);
        if let (Some(a), Some(b)) = (self.sens.as_mut(), other.sens.as_ref()) {
            for r in 0..3 {
                a.stress_div[r] += b.stress_div[r];
                a.div[r] += b.div[r];
                a.d_stress[r] += b.d_stress[r];
                a.d_tangent[r].axpy(T::one(), &b.d_tangent[r]);
            }
        }
    }

    fn finish(self) -> CoefficientSet<T> {
        let inv = T::one() / self.area;
        let stress = self.stress * inv;
        let tangent = self.tangent.scale(inv);
        let sensitivities = self.sens.map(|s| {
            // δS = ⨍ (σ - S) div 𝒱 + ⨍ δσ ;  δA = ⨍ (...) - A ⨍ div 𝒱.
            let d_stress = std::array::from_fn(|r| (s.stress_div[r] - stress * s.div[r] + s.d_stress[r]) * inv);
            let d_tangent = std::array::from_fn(|r| {
                let mut t = s.d_tangent[r].scale(inv);
                t.axpy(-s.div[r] * inv, &tangent);
                t
            });
            Sensitivities { stress: d_stress, tangent: d_tangent }
        });
        CoefficientSet { stress, tangent, sensitivities }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::builders::uniform_cell;

    fn homogeneous() -> CellProblem<f64> {
        let mut mats = BTreeMap::new();
        mats.insert(1, NeoHookean::new(5.7e9, 1.35e9).unwrap());
        CellProblem::new(&uniform_cell(4, 4), &mats, MicroSettings::default()).unwrap()
    }

    #[test]
    fn missing_material_is_reported() {
        let mats = BTreeMap::new();
        assert!(matches!(
            CellProblem::<f64>::new(&uniform_cell(2, 2), &mats, MicroSettings::default()),
            Err(MicroError::MissingMaterial(1))
        ));
    }

    #[test]
    fn homogeneous_cell_has_zero_correctors_and_pointwise_tangent() {
        let p = homogeneous();
        let s = p.initial_state().unwrap();
        for m in 0..4 {
            assert!(s.corrector(m).iter().all(|v| v.abs() < 1e-12));
        }
        let c = s.coefficients();
        assert!(c.stress.max_abs() == 0.0);
        let a = NeoHookean::new(5.7e9, 1.35e9).unwrap().tangent_a(&DeformationState::identity());
        for &(i, j) in &MODES {
            for &(k, l) in &MODES {
                assert!((c.tangent.get(i, j, k, l) - a.get(i, j, k, l)).abs() <= 1e-10 * a.max_abs());
            }
        }
    }

    #[test]
    fn homogeneous_cell_stays_homogeneous_under_load() {
        let p = homogeneous();
        let s0 = p.initial_state().unwrap();
        let g = Tensor2::from_plane([[0.02, 0.01], [-0.004, -0.01]], 0.0);
        let s1 = p.micro_step(&s0, &g).unwrap();
        let f = (Tensor2::identity() + g).dot(s0.mean_gradient());
        let ds = DeformationState::new(f).unwrap();
        let m = NeoHookean::new(5.7e9, 1.35e9).unwrap();
        let sigma = m.cauchy_stress(&ds);
        assert!((s1.coefficients().stress - sigma).max_abs() <= 1e-9 * sigma.max_abs());
        for fe in p.element_gradients(s1.coordinates()).unwrap() {
            assert!((fe - f).max_abs() < 1e-12);
        }
    }
}
