//! Incremental macroscopic equilibrium with per-point homogenized coefficients.
//!
//! Every Newton iteration poses the weak form on the current trial
//! configuration: the residual is `f_ext - ∫ S : ∇v dx` and the tangent is
//! `∫ A ∇δu : ∇v dx`, with `S` and `A` supplied by a [`CoefficientBackend`].
//! Tractions are dead loads integrated over the reference boundary.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::backend::{BackendError, CoefficientBackend, CoefficientField};
use crate::linalg::{LinalgError, SparseLdl, SymmetricPattern};
use crate::mesh::{quadrature, shape_gradients, shape_values, Mesh};
use crate::scalar::Real;
use crate::tensor::Tensor2;

#[derive(Debug, Error)]
pub enum MacroError {
    #[error("load case references facet tag {0} which is absent from the mesh")]
    UnknownTag(u32),
    #[error("facet tag {0} carries both a prescribed displacement and a traction")]
    OverlappingTags(u32),
    #[error("no displacement constraints: the macroscopic problem is singular")]
    Unconstrained,
    #[error("element {element} inverted at point {point} (det F = {jacobian:e})")]
    Inverted { element: usize, point: usize, jacobian: f64 },
    #[error("step {step} did not converge in {iterations} iterations (residual ratio {ratio:e})")]
    NotConverged { step: usize, iterations: usize, ratio: f64, history: Vec<f64> },
    #[error("step {step} stalled at iteration {iterations}: residual stopped decreasing with no new reference states (ratio {ratio:e})")]
    Oscillation { step: usize, iterations: usize, ratio: f64, history: Vec<f64> },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("linear solve failed: {0}")]
    Linalg(#[from] LinalgError),
}

impl MacroError {
    /// Failures of the Newton loop as opposed to set-up or coefficient failures.
    pub fn is_non_convergence(&self) -> bool {
        matches!(self, Self::NotConverged { .. } | Self::Oscillation { .. } | Self::Inverted { .. })
    }
}

/// Prescribed displacement on all nodes of a tagged boundary, scaled by the
/// load factor. `None` leaves that component free.
#[derive(Clone, Debug, PartialEq)]
pub struct Dirichlet<T> {
    pub tag: u32,
    pub components: [Option<T>; 2],
}

/// Traction `t(X) = constant + gradient · X` on a tagged boundary (Pa),
/// scaled by the load factor.
#[derive(Clone, Debug, PartialEq)]
pub struct Traction<T> {
    pub tag: u32,
    pub constant: [T; 2],
    pub gradient: [[T; 2]; 2],
}

impl<T: Real> Traction<T> {
    pub fn at(&self, x: [T; 2]) -> [T; 2] {
        let mut t = self.constant;
        for (i, ti) in t.iter_mut().enumerate() {
            *ti += self.gradient[i][0] * x[0] + self.gradient[i][1] * x[1];
        }
        t
    }
}

/// Boundary conditions applied with the linear ramp `r_k = k / (steps - 1)`,
/// `k = 0..steps`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadCase<T> {
    pub dirichlet: Vec<Dirichlet<T>>,
    pub tractions: Vec<Traction<T>>,
    pub body_force: [T; 2],
    pub steps: usize,
}

impl<T: Real> LoadCase<T> {
    /// Clamped left edge and a horizontal traction growing linearly with the
    /// height on the right edge, `t = [peak · x2 / height, 0]`.
    pub fn bending(clamped: u32, loaded: u32, peak: T, height: T, steps: usize) -> Self {
        Self {
            dirichlet: vec![Dirichlet { tag: clamped, components: [Some(T::zero()), Some(T::zero())] }],
            tractions: vec![Traction {
                tag: loaded,
                constant: [T::zero(); 2],
                gradient: [[T::zero(), peak / height], [T::zero(); 2]],
            }],
            body_force: [T::zero(); 2],
            steps,
        }
    }

    pub fn load_factor(&self, step: usize) -> T {
        if self.steps <= 1 {
            T::one()
        } else {
            T::lit(step as f64) / T::lit((self.steps - 1) as f64)
        }
    }

    /// Multiplies every prescribed value and load by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        let mut out = self.clone();
        for d in &mut out.dirichlet {
            for c in d.components.iter_mut().flatten() {
                *c *= factor;
            }
        }
        for t in &mut out.tractions {
            t.constant = t.constant.map(|c| c * factor);
            t.gradient = t.gradient.map(|row| row.map(|c| c * factor));
        }
        out.body_force = out.body_force.map(|c| c * factor);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroSettings<T> {
    /// Relative residual tolerance.
    pub tolerance: T,
    pub max_iterations: usize,
    /// Consecutive non-decreasing residuals, without new reference states,
    /// that abort a step.
    pub stall_window: usize,
}

impl<T: Real> Default for MacroSettings<T> {
    fn default() -> Self {
        Self { tolerance: T::lit(1e-6), max_iterations: 25, stall_window: 4 }
    }
}

/// One reference quadrature point of the macroscopic mesh.
#[derive(Clone, Copy, Debug)]
struct QuadPoint<T> {
    grads: [[T; 2]; 4],
    weight: T,
}

/// What an observer sees after each coefficient evaluation.
pub struct IterationView<'a, T> {
    pub step: usize,
    /// 1-based within the step; equals the number of evaluations so far.
    pub iteration: usize,
    pub residual: T,
    pub reference: T,
    pub converged: bool,
    pub new_solves: usize,
    pub new_centroids: usize,
    pub deformation: &'a [Tensor2<T>],
    pub coefficients: &'a CoefficientField<T>,
    pub displacement: &'a [T],
}

impl<T: Real> IterationView<'_, T> {
    pub fn ratio(&self) -> T {
        if self.reference > T::zero() {
            self.residual / self.reference
        } else {
            self.residual
        }
    }
}

/// Hooks invoked by [`MacroProblem::solve`]; the default implementations do nothing.
pub trait MacroObserver<T: Real> {
    fn iteration(&mut self, _view: &IterationView<'_, T>) {}

    fn step_converged(&mut self, _step: usize, _state: &MacroState<T>, _coefficients: &CoefficientField<T>) {}
}

impl<T: Real> MacroObserver<T> for () {}

/// Converged macroscopic configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroState<T> {
    /// Nodal displacement, interleaved `[u_x, u_y]` per node.
    pub displacement: Vec<T>,
    /// Total deformation gradient per quadrature point.
    pub deformation: Vec<Tensor2<T>>,
    /// Index of the last converged step.
    pub step: usize,
    /// Evaluations spent in each converged step.
    pub iterations: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MacroStats {
    pub assembly_time: Duration,
    pub solve_time: Duration,
    pub coefficient_time: Duration,
    pub evaluations: usize,
}

/// Macroscopic mesh, load case and the fixed sparse structure of the free DOFs.
pub struct MacroProblem<T> {
    mesh: Mesh<T>,
    load: LoadCase<T>,
    settings: MacroSettings<T>,
    points: Vec<Vec<QuadPoint<T>>>,
    point_offsets: Vec<usize>,
    /// Free-DOF index per nodal component, `None` where prescribed.
    free: Vec<Option<usize>>,
    /// Prescribed nodal components with their unit-load value.
    prescribed: Vec<(usize, T)>,
    pattern: Arc<SymmetricPattern>,
    stats: MacroStats,
}

impl<T: Real> MacroProblem<T> {
    pub fn new(mesh: Mesh<T>, load: LoadCase<T>, settings: MacroSettings<T>) -> Result<Self, MacroError> {
        let tags: Vec<u32> = mesh.facets().iter().map(|f| f.tag).collect();
        for d in &load.dirichlet {
            if !tags.contains(&d.tag) {
                return Err(MacroError::UnknownTag(d.tag));
            }
            if load.tractions.iter().any(|t| t.tag == d.tag) {
                return Err(MacroError::OverlappingTags(d.tag));
            }
        }
        if let Some(t) = load.tractions.iter().find(|t| !tags.contains(&t.tag)) {
            return Err(MacroError::UnknownTag(t.tag));
        }

        let n_dof = 2 * mesh.node_count();
        let mut value: Vec<Option<T>> = vec![None; n_dof];
        for d in &load.dirichlet {
            for facet in mesh.facets().iter().filter(|f| f.tag == d.tag) {
                for &n in &facet.nodes {
                    for (c, comp) in d.components.iter().enumerate() {
                        if let Some(v) = comp {
                            value[2 * n + c] = Some(*v);
                        }
                    }
                }
            }
        }
        let prescribed: Vec<(usize, T)> = value.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).collect();
        if prescribed.is_empty() {
            return Err(MacroError::Unconstrained);
        }
        let mut free = vec![None; n_dof];
        let mut n_free = 0;
        for (i, slot) in free.iter_mut().enumerate() {
            if value[i].is_none() {
                *slot = Some(n_free);
                n_free += 1;
            }
        }

        let mut points = Vec::with_capacity(mesh.element_count());
        let mut point_offsets = Vec::with_capacity(mesh.element_count() + 1);
        point_offsets.push(0);
        let mut element_dofs = Vec::with_capacity(mesh.element_count());
        for (e, el) in mesh.elements().iter().enumerate() {
            let coords = mesh.element_coords(e);
            let rule = quadrature::<T>(el.kind);
            let pts: Vec<QuadPoint<T>> = rule
                .points
                .iter()
                .zip(&rule.weights)
                .map(|(xi, w)| {
                    let sg = shape_gradients(el.kind, &coords, *xi);
                    QuadPoint { grads: sg.grads, weight: *w * sg.det }
                })
                .collect();
            point_offsets.push(point_offsets[e] + pts.len());
            points.push(pts);
            element_dofs.push(el.nodes().iter().flat_map(|&n| [free[2 * n], free[2 * n + 1]]).collect());
        }
        let pattern = SymmetricPattern::new(n_free, element_dofs)?;
        Ok(Self { mesh, load, settings, points, point_offsets, free, prescribed, pattern, stats: MacroStats::default() })
    }

    pub fn mesh(&self) -> &Mesh<T> {
        &self.mesh
    }

    pub fn load(&self) -> &LoadCase<T> {
        &self.load
    }

    pub fn settings(&self) -> &MacroSettings<T> {
        &self.settings
    }

    pub fn stats(&self) -> &MacroStats {
        &self.stats
    }

    pub fn point_count(&self) -> usize {
        *self.point_offsets.last().unwrap_or(&0)
    }

    pub fn free_dofs(&self) -> usize {
        self.pattern.dim()
    }

    /// Reference coordinates of every quadrature point, element-major.
    pub fn point_positions(&self) -> Vec<[T; 2]> {
        let mut out = Vec::with_capacity(self.point_count());
        for (e, el) in self.mesh.elements().iter().enumerate() {
            let coords = self.mesh.element_coords(e);
            for xi in quadrature::<T>(el.kind).points {
                let n = shape_values(el.kind, xi);
                let mut x = [T::zero(); 2];
                for (a, na) in n.iter().take(el.kind.node_count()).enumerate() {
                    x[0] += *na * coords[a][0];
                    x[1] += *na * coords[a][1];
                }
                out.push(x);
            }
        }
        out
    }

    /// Index of the quadrature point closest to `x`; ties go to the lower index.
    pub fn nearest_point(&self, x: [T; 2]) -> usize {
        nearest(&self.point_positions(), x)
    }

    pub fn nearest_node(&self, x: [T; 2]) -> usize {
        nearest(self.mesh.nodes(), x)
    }

    pub fn initial_state(&self) -> MacroState<T> {
        MacroState {
            displacement: vec![T::zero(); 2 * self.mesh.node_count()],
            deformation: vec![Tensor2::identity(); self.point_count()],
            step: 0,
            iterations: Vec::new(),
        }
    }

    /// Deformation gradient `I + ∇_X u` at every quadrature point.
    pub fn deformation(&self, displacement: &[T]) -> Result<Vec<Tensor2<T>>, MacroError> {
        let mut out = Vec::with_capacity(self.point_count());
        for (e, el) in self.mesh.elements().iter().enumerate() {
            for (point, qp) in self.points[e].iter().enumerate() {
                let mut f = [[T::zero(); 2]; 2];
                for (a, &n) in el.nodes().iter().enumerate() {
                    for i in 0..2 {
                        for j in 0..2 {
                            f[i][j] += displacement[2 * n + i] * qp.grads[a][j];
                        }
                    }
                }
                f[0][0] += T::one();
                f[1][1] += T::one();
                let f = Tensor2::from_plane(f, T::one());
                let det = f.det();
                if !(det > T::zero()) {
                    return Err(MacroError::Inverted { element: e, point, jacobian: det.as_f64() });
                }
                out.push(f);
            }
        }
        Ok(out)
    }

    /// Consistent nodal forces of the tractions and body force at load factor `factor`.
    pub fn external_force(&self, factor: T) -> Vec<T> {
        let mut f = vec![T::zero(); 2 * self.mesh.node_count()];
        let g = T::lit(1.0 / 3f64.sqrt());
        let half = T::lit(0.5);
        for facet in self.mesh.facets() {
            for t in self.load.tractions.iter().filter(|t| t.tag == facet.tag) {
                let [p, q] = facet.nodes.map(|n| self.mesh.nodes()[n]);
                let length = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
                for s in [-g, g] {
                    let (np, nq) = (half * (T::one() - s), half * (T::one() + s));
                    let x = [np * p[0] + nq * q[0], np * p[1] + nq * q[1]];
                    let tr = t.at(x);
                    let w = half * length * factor;
                    for c in 0..2 {
                        f[2 * facet.nodes[0] + c] += np * tr[c] * w;
                        f[2 * facet.nodes[1] + c] += nq * tr[c] * w;
                    }
                }
            }
        }
        if self.load.body_force.iter().any(|b| *b != T::zero()) {
            for (e, el) in self.mesh.elements().iter().enumerate() {
                let rule = quadrature::<T>(el.kind);
                for (xi, qp) in rule.points.iter().zip(&self.points[e]) {
                    let n = shape_values(el.kind, *xi);
                    for (a, &node) in el.nodes().iter().enumerate() {
                        for c in 0..2 {
                            f[2 * node + c] += n[a] * self.load.body_force[c] * qp.weight * factor;
                        }
                    }
                }
            }
        }
        f
    }

    /// Internal force over all nodal components and the free-DOF tangent values,
    /// both on the configuration `X + displacement`.
    pub fn assemble(
        &self,
        deformation: &[Tensor2<T>],
        coefficients: &CoefficientField<T>,
        with_tangent: bool,
    ) -> (Vec<T>, Option<Vec<T>>) {
        let blocks: Vec<(Vec<T>, Vec<T>)> = (0..self.mesh.element_count())
            .into_par_iter()
            .map(|e| self.element_block(e, deformation, coefficients, with_tangent))
            .collect();
        let mut internal = vec![T::zero(); 2 * self.mesh.node_count()];
        let mut values = with_tangent.then(|| self.pattern.zero_values());
        for (e, (fe, ke)) in blocks.into_iter().enumerate() {
            for (a, &n) in self.mesh.elements()[e].nodes().iter().enumerate() {
                internal[2 * n] += fe[2 * a];
                internal[2 * n + 1] += fe[2 * a + 1];
            }
            if let Some(v) = values.as_mut() {
                self.pattern.add_element(e, &ke, v);
            }
        }
        (internal, values)
    }

    fn element_block(
        &self,
        e: usize,
        deformation: &[Tensor2<T>],
        coefficients: &CoefficientField<T>,
        with_tangent: bool,
    ) -> (Vec<T>, Vec<T>) {
        let nn = self.mesh.elements()[e].kind.node_count();
        let nd = 2 * nn;
        let mut fe = vec![T::zero(); nd];
        let mut ke = vec![T::zero(); if with_tangent { nd * nd } else { 0 }];
        for (q, qp) in self.points[e].iter().enumerate() {
            let idx = self.point_offsets[e] + q;
            let f = &deformation[idx];
            let finv = f.inverse().expect("deformation checked for positive determinant");
            let dv = qp.weight * f.det();
            // Spatial gradients: ∂N/∂x = ∂N/∂X · F⁻¹.
            let mut dn = [[T::zero(); 2]; 4];
            for a in 0..nn {
                for j in 0..2 {
                    dn[a][j] = qp.grads[a][0] * finv[(0, j)] + qp.grads[a][1] * finv[(1, j)];
                }
            }
            let s = &coefficients.stress[idx];
            for a in 0..nn {
                for i in 0..2 {
                    fe[2 * a + i] += (s[(i, 0)] * dn[a][0] + s[(i, 1)] * dn[a][1]) * dv;
                }
            }
            if !with_tangent {
                continue;
            }
            let t = &coefficients.tangent[idx];
            for a in 0..nn {
                for i in 0..2 {
                    let row = 2 * a + i;
                    for b in 0..nn {
                        for k in 0..2 {
                            let mut v = T::zero();
                            for j in 0..2 {
                                for l in 0..2 {
                                    v += t.get(i, j, k, l) * dn[a][j] * dn[b][l];
                                }
                            }
                            ke[row * nd + 2 * b + k] += v * dv;
                        }
                    }
                }
            }
        }
        (fe, ke)
    }

    /// Runs every load step from the undeformed state.
    pub fn solve(
        &mut self,
        backend: &mut dyn CoefficientBackend<T>,
        observer: &mut dyn MacroObserver<T>,
    ) -> Result<MacroState<T>, MacroError> {
        let mut state = self.initial_state();
        for step in 0..self.load.steps {
            self.solve_step(&mut state, step, backend, observer)?;
        }
        Ok(state)
    }

    /// Newton iterations for load step `step`, starting from the converged `state`.
    pub fn solve_step(
        &mut self,
        state: &mut MacroState<T>,
        step: usize,
        backend: &mut dyn CoefficientBackend<T>,
        observer: &mut dyn MacroObserver<T>,
    ) -> Result<(), MacroError> {
        let factor = self.load.load_factor(step);
        let external = self.external_force(factor);
        let mut u = state.displacement.clone();
        for &(dof, v) in &self.prescribed {
            u[dof] = v * factor;
        }
        let mut history: Vec<T> = Vec::new();
        let mut stalled = 0;
        for iteration in 1..=self.settings.max_iterations {
            let deformation = self.deformation(&u)?;
            let start = Instant::now();
            let coefficients = backend.coefficients(&deformation)?;
            self.stats.coefficient_time += start.elapsed();
            self.stats.evaluations += 1;
            let (new_solves, new_centroids) = (backend.stats().last_new_solves, backend.stats().last_new_centroids);

            let start = Instant::now();
            let (internal, values) = self.assemble(&deformation, &coefficients, true);
            self.stats.assembly_time += start.elapsed();
            let mut residual = vec![T::zero(); self.pattern.dim()];
            for (dof, slot) in self.free.iter().enumerate() {
                if let Some(i) = slot {
                    residual[*i] = external[dof] - internal[dof];
                }
            }
            let norm = euclid(&residual);
            let reference = euclid(&external).max(euclid(&internal));
            let converged = norm <= self.settings.tolerance * reference || norm <= self.noise_floor(&coefficients);
            let ratio = if reference > T::zero() { norm / reference } else { norm };

            if let Some(&previous) = history.last() {
                if norm >= previous && new_centroids == 0 {
                    stalled += 1;
                } else {
                    stalled = 0;
                }
            }
            history.push(norm);
            observer.iteration(&IterationView {
                step,
                iteration,
                residual: norm,
                reference,
                converged,
                new_solves,
                new_centroids,
                deformation: &deformation,
                coefficients: &coefficients,
                displacement: &u,
            });

            if converged {
                state.displacement = u;
                state.deformation = deformation;
                state.step = step;
                state.iterations.push(iteration);
                backend.commit();
                observer.step_converged(step, state, &coefficients);
                return Ok(());
            }
            let history_f64 = || history.iter().map(|h| h.as_f64()).collect();
            if stalled >= self.settings.stall_window {
                return Err(MacroError::Oscillation { step, iterations: iteration, ratio: ratio.as_f64(), history: history_f64() });
            }
            if iteration == self.settings.max_iterations {
                return Err(MacroError::NotConverged { step, iterations: iteration, ratio: ratio.as_f64(), history: history_f64() });
            }

            let start = Instant::now();
            let values = values.expect("tangent requested");
            let ldl = SparseLdl::factor(&self.pattern, &values)?;
            let du = ldl.solve(&residual);
            self.stats.solve_time += start.elapsed();
            for (dof, slot) in self.free.iter().enumerate() {
                if let Some(i) = slot {
                    u[dof] += du[*i];
                }
            }
        }
        unreachable!("the loop returns on its last iteration")
    }

    /// Force level at which a residual is indistinguishable from rounding in
    /// the coefficients: `1e-12 · max|A| · sqrt(area)`.
    fn noise_floor(&self, coefficients: &CoefficientField<T>) -> T {
        let moduli = coefficients.tangent.iter().map(|t| t.max_abs()).fold(T::zero(), T::max);
        T::lit(1e-12) * moduli * self.mesh.area().sqrt()
    }

    /// One linear solve with the given coefficients at the reference
    /// configuration, for load factor `factor`.
    pub fn linear_response(&self, coefficients: &CoefficientField<T>, factor: T) -> Result<Vec<T>, MacroError> {
        let identity = vec![Tensor2::identity(); self.point_count()];
        let mut u = vec![T::zero(); 2 * self.mesh.node_count()];
        for &(dof, v) in &self.prescribed {
            u[dof] = v * factor;
        }
        let zero_stress = CoefficientField { stress: vec![Tensor2::zero(); self.point_count()], tangent: coefficients.tangent.clone() };
        let (_, values) = self.assemble(&identity, &zero_stress, true);
        let external = self.external_force(factor);
        // Prescribed values enter through the coupling of free and fixed DOFs.
        let mut lifted = u.clone();
        for (dof, slot) in self.free.iter().enumerate() {
            if slot.is_some() {
                lifted[dof] = T::zero();
            }
        }
        let lift_force = self.tangent_product(&zero_stress, &lifted);
        let mut rhs = vec![T::zero(); self.pattern.dim()];
        for (dof, slot) in self.free.iter().enumerate() {
            if let Some(i) = slot {
                rhs[*i] = external[dof] - lift_force[dof];
            }
        }
        let du = SparseLdl::factor(&self.pattern, &values.expect("tangent requested"))?.solve(&rhs);
        for (dof, slot) in self.free.iter().enumerate() {
            if let Some(i) = slot {
                u[dof] = du[*i];
            }
        }
        Ok(u)
    }

    /// `K v` over all nodal components at the reference configuration.
    fn tangent_product(&self, coefficients: &CoefficientField<T>, v: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); v.len()];
        for (e, el) in self.mesh.elements().iter().enumerate() {
            let nn = el.kind.node_count();
            for (q, qp) in self.points[e].iter().enumerate() {
                let t = &coefficients.tangent[self.point_offsets[e] + q];
                let mut grad = Tensor2::zero();
                for (a, &n) in el.nodes().iter().enumerate() {
                    for i in 0..2 {
                        for j in 0..2 {
                            grad.0[i][j] += v[2 * n + i] * qp.grads[a][j];
                        }
                    }
                }
                let s = t.contract(&grad);
                for (a, &n) in el.nodes().iter().enumerate().take(nn) {
                    for i in 0..2 {
                        out[2 * n + i] += (s[(i, 0)] * qp.grads[a][0] + s[(i, 1)] * qp.grads[a][1]) * qp.weight;
                    }
                }
            }
        }
        out
    }
}

fn euclid<T: Real>(v: &[T]) -> T {
    v.iter().map(|x| *x * *x).sum::<T>().sqrt()
}

fn nearest<T: Real>(points: &[[T; 2]], x: [T; 2]) -> usize {
    let mut best = (0, T::infinity());
    for (i, p) in points.iter().enumerate() {
        let d = (p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}
