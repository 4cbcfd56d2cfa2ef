//! Clustering and sensitivity-based approximation of homogenized coefficients.
//!
//! Each macroscopic point is reduced to its symmetric stretch `ê = U - I`
//! (a point in R³) and its rotation `R`. Cell problems are solved only at
//! reference states ("centroids") whose balls of radius `ρ` cover every such
//! point. Coefficients at a point are blended from the first-order expansions
//! of every covering centroid and pushed forward by `R`.

mod kmeans;
mod polar;

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

pub use kmeans::{cover, kmeans, Clustering, MAX_LLOYD_ITERATIONS};
pub use polar::{polar_decompose, Polar};

use crate::backend::{BackendError, BackendStats, CoefficientBackend, CoefficientField};
use crate::micro::{CellProblem, MicroState};
use crate::scalar::Real;
use crate::tensor::{Tensor2, Tensor4};

#[derive(Debug, Error, PartialEq)]
pub enum CsaError {
    #[error("deformation gradient has non-positive determinant {0:e}")]
    NonPositiveJacobian(f64),
    #[error("reference stretch is singular")]
    SingularStretch,
    #[error("cell problem does not compute sensitivities")]
    MissingSensitivities,
    #[error("ball radius must be positive, got {0:e}")]
    InvalidRadius(f64),
}

impl From<CsaError> for BackendError {
    fn from(e: CsaError) -> Self {
        BackendError::Reduction(e.to_string())
    }
}

/// Distance used for ball membership.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StrainMetric {
    /// Euclidean norm of `(e11, e22, e12)`.
    #[default]
    Components,
    /// Frobenius norm of the strain tensor, counting the shear entry twice.
    Tensor,
}

impl StrainMetric {
    /// Coordinates in which the metric is Euclidean.
    pub fn embed<T: Real>(self, e: &[T; 3]) -> [T; 3] {
        match self {
            Self::Components => *e,
            Self::Tensor => [e[0], e[1], e[2] * T::lit(std::f64::consts::SQRT_2)],
        }
    }

    pub fn unembed<T: Real>(self, x: &[T; 3]) -> [T; 3] {
        match self {
            Self::Components => *x,
            Self::Tensor => [x[0], x[1], x[2] / T::lit(std::f64::consts::SQRT_2)],
        }
    }

    pub fn distance<T: Real>(self, a: &[T; 3], b: &[T; 3]) -> T {
        let shear = match self {
            Self::Components => T::one(),
            Self::Tensor => T::lit(2.0),
        };
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + shear * (a[2] - b[2]).powi(2)).sqrt()
    }
}

/// Strain coordinates and rotation of one macroscopic point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrainPoint<T> {
    pub strain: [T; 3],
    pub rotation: Tensor2<T>,
}

impl<T: Real> StrainPoint<T> {
    pub fn from_deformation(f: &Tensor2<T>) -> Result<Self, CsaError> {
        let p = polar_decompose(f)?;
        let u = p.stretch.0;
        Ok(Self { strain: [u[0][0] - T::one(), u[1][1] - T::one(), u[0][1]], rotation: p.rotation })
    }
}

/// In-plane stretch `I + e` for strain coordinates `e`.
pub fn stretch_of<T: Real>(e: &[T; 3]) -> Tensor2<T> {
    Tensor2::from_plane([[T::one() + e[0], e[2]], [e[2], T::one() + e[1]]], T::one())
}

/// `g = (ê + I)(e° + I)⁻¹ - I`, so that `(I + g)(I + e°) = I + ê`.
pub fn relative_deformation<T: Real>(strain: &[T; 3], center: &[T; 3]) -> Result<Tensor2<T>, CsaError> {
    let inv = stretch_of(center).inverse().ok_or(CsaError::SingularStretch)?;
    // Written as (ê - e°)(I + e°)⁻¹, which is exact when the two coincide.
    let diff = [strain[0] - center[0], strain[1] - center[1], strain[2] - center[2]];
    let d = Tensor2::from_plane([[diff[0], diff[2]], [diff[2], diff[1]]], T::zero());
    Ok(d.dot(&inv))
}

/// Normalized weights `(ρ - |ê - e°|)²` over the covering centroids.
pub fn blend_weights<T: Real>(distances: &[T], radius: T) -> Vec<T> {
    let raw: Vec<T> = distances.iter().map(|d| (radius - *d).max(T::zero()).powi(2)).collect();
    let total: T = raw.iter().copied().sum();
    if total > T::zero() {
        raw.iter().map(|w| *w / total).collect()
    } else {
        let n = T::lit(distances.len() as f64);
        vec![T::one() / n; distances.len()]
    }
}

/// A solved reference state at the center of one ball.
#[derive(Clone, Debug)]
pub struct Centroid<T> {
    pub id: usize,
    pub center: [T; 3],
    /// Centroid whose state was driven to this center.
    pub source: Option<usize>,
    /// Evaluation during which the centroid was created (1-based).
    pub created_at: usize,
    /// Newton iterations of this centroid's own solve.
    pub newton_iterations: usize,
    pub substeps: usize,
    pub state: MicroState<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsaSettings<T> {
    pub radius: T,
    pub metric: StrainMetric,
    pub seed: u64,
}

/// Append-only set of centroids sharing one radius.
#[derive(Clone, Debug)]
pub struct CentroidRegistry<T> {
    centroids: Vec<Centroid<T>>,
    settings: CsaSettings<T>,
    cover_calls: u64,
}

/// Covering centroids of one point and their blend weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Membership<T> {
    pub indices: Vec<usize>,
    pub weights: Vec<T>,
}

impl<T: Real> CentroidRegistry<T> {
    pub fn new(settings: CsaSettings<T>) -> Result<Self, CsaError> {
        if !(settings.radius > T::zero()) {
            return Err(CsaError::InvalidRadius(settings.radius.as_f64()));
        }
        Ok(Self { centroids: Vec::new(), settings, cover_calls: 0 })
    }

    pub fn settings(&self) -> &CsaSettings<T> {
        &self.settings
    }

    pub fn centroids(&self) -> &[Centroid<T>] {
        &self.centroids
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Indices of all balls that strictly contain `strain`.
    pub fn covering(&self, strain: &[T; 3]) -> Vec<usize> {
        let m = self.settings.metric;
        self.centroids
            .iter()
            .filter(|c| m.distance(strain, &c.center) < self.settings.radius)
            .map(|c| c.id)
            .collect()
    }

    /// Covering set with weights; `None` when no ball contains the point.
    pub fn membership(&self, strain: &[T; 3]) -> Option<Membership<T>> {
        let indices = self.covering(strain);
        if indices.is_empty() {
            return None;
        }
        let m = self.settings.metric;
        let d: Vec<T> = indices.iter().map(|&i| m.distance(strain, &self.centroids[i].center)).collect();
        Some(Membership { weights: blend_weights(&d, self.settings.radius), indices })
    }

    /// Closest centroid, lowest id on ties.
    pub fn nearest(&self, strain: &[T; 3]) -> Option<usize> {
        let m = self.settings.metric;
        let mut best: Option<(usize, T)> = None;
        for c in &self.centroids {
            let d = m.distance(strain, &c.center);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((c.id, d));
            }
        }
        best.map(|b| b.0)
    }

    /// Centers of new balls covering `strains`, sorted lexicographically.
    /// Every call draws from its own deterministic random stream.
    pub fn plan_cover(&mut self, strains: &[[T; 3]]) -> Vec<[T; 3]> {
        let m = self.settings.metric;
        let embedded: Vec<[T; 3]> = strains.iter().map(|e| m.embed(e)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.settings.seed.wrapping_add(self.cover_calls));
        self.cover_calls += 1;
        let mut centers: Vec<[T; 3]> = cover(&embedded, self.settings.radius, &mut rng).iter().map(|x| m.unembed(x)).collect();
        centers.sort_by(lexicographic);
        centers
    }

    pub fn push(&mut self, center: [T; 3], source: Option<usize>, created_at: usize, state: MicroState<T>) -> usize {
        let id = self.centroids.len();
        let before = source.map(|s| self.centroids[s].state.stats()).unwrap_or_default();
        let after = state.stats();
        self.centroids.push(Centroid {
            id,
            center,
            source,
            created_at,
            newton_iterations: after.newton_iterations - before.newton_iterations.min(after.newton_iterations),
            substeps: after.substeps - before.substeps.min(after.substeps),
            state,
        });
        id
    }

    /// Blended first-order expansion at `point`, pushed forward by its rotation.
    pub fn approximate(&self, point: &StrainPoint<T>, membership: &Membership<T>) -> Result<(Tensor2<T>, Tensor4<T>), CsaError> {
        let mut stress = Tensor2::zero();
        let mut tangent = Tensor4::zero();
        for (&i, &w) in membership.indices.iter().zip(&membership.weights) {
            let c = &self.centroids[i];
            let coeffs = c.state.coefficients();
            let sens = coeffs.sensitivities.as_ref().ok_or(CsaError::MissingSensitivities)?;
            let g = relative_deformation(&point.strain, &c.center)?;
            let amplitudes = [g.0[0][0], g.0[1][1], g.0[0][1] + g.0[1][0]];
            stress += coeffs.stress * w;
            tangent.axpy(w, &coeffs.tangent);
            for (m, a) in amplitudes.iter().enumerate() {
                stress += sens.stress[m] * (w * *a);
                tangent.axpy(w * *a, &sens.tangent[m]);
            }
        }
        Ok((stress.rotate(&point.rotation), tangent.rotate(&point.rotation)))
    }

    /// Text listing: one line per centroid with id, center, source and solve effort.
    pub fn export(&self) -> String {
        let mut out = String::from("# id e11 e22 e12 source created_at newton_iterations substeps\n");
        for c in &self.centroids {
            let source = c.source.map_or_else(|| "-".to_string(), |s| s.to_string());
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {} {}",
                c.id, c.center[0], c.center[1], c.center[2], source, c.created_at, c.newton_iterations, c.substeps
            );
        }
        out
    }
}

fn lexicographic<T: Real>(a: &[T; 3], b: &[T; 3]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.as_f64().total_cmp(&y.as_f64())).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Coefficient backend that solves cell problems only at centroids.
pub struct CsaBackend<T> {
    problem: Arc<CellProblem<T>>,
    registry: CentroidRegistry<T>,
    stats: BackendStats,
    fallbacks: usize,
}

impl<T: Real> CsaBackend<T> {
    /// The cell problem must compute sensitivities.
    pub fn new(problem: Arc<CellProblem<T>>, settings: CsaSettings<T>) -> Result<Self, CsaError> {
        if !problem.settings().sensitivities {
            return Err(CsaError::MissingSensitivities);
        }
        Ok(Self { problem, registry: CentroidRegistry::new(settings)?, stats: BackendStats::default(), fallbacks: 0 })
    }

    pub fn registry(&self) -> &CentroidRegistry<T> {
        &self.registry
    }

    pub fn problem(&self) -> &Arc<CellProblem<T>> {
        &self.problem
    }

    /// Points that fell outside every ball at approximation time and used
    /// their nearest centroid alone.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Newton iterations summed over all centroid solves.
    pub fn centroid_newton_iterations(&self) -> usize {
        self.registry.centroids.iter().map(|c| c.newton_iterations).sum()
    }

    fn seed(&mut self) -> Result<usize, BackendError> {
        let start = Instant::now();
        let state = self
            .problem
            .initial_state()
            .map_err(|source| BackendError::Centroid { center: [0.0; 3], source_id: 0, source })?;
        self.registry.push([T::zero(); 3], None, self.stats.evaluations + 1, state);
        self.stats.micro_time += start.elapsed();
        Ok(1)
    }

    /// Solves new centroids covering `strains`; returns how many were added.
    fn grow(&mut self, strains: &[[T; 3]]) -> Result<usize, BackendError> {
        let centers = self.registry.plan_cover(strains);
        let sources: Vec<usize> = centers.iter().map(|c| self.registry.nearest(c).expect("registry is seeded")).collect();
        let start = Instant::now();
        let problem = &self.problem;
        let registry = &self.registry;
        let states: Vec<MicroState<T>> = centers
            .par_iter()
            .zip(sources.par_iter())
            .map(|(center, &source)| {
                problem.step_to(&registry.centroids[source].state, &stretch_of(center)).map_err(|error| BackendError::Centroid {
                    center: center.map(|v| v.as_f64()),
                    source_id: source,
                    source: error,
                })
            })
            .collect::<Result<_, _>>()?;
        self.stats.micro_time += start.elapsed();
        let created_at = self.stats.evaluations + 1;
        for ((center, source), state) in centers.iter().zip(sources).zip(states) {
            self.registry.push(*center, Some(source), created_at, state);
        }
        Ok(centers.len())
    }

    /// Blended cell coordinates at deformation `f`, rotated about their mean.
    pub fn reconstruct(&self, f: &Tensor2<T>) -> Result<Vec<[T; 2]>, CsaError> {
        let point = StrainPoint::from_deformation(f)?;
        let membership = self.membership_or_nearest(&point.strain).0;
        let n = self.problem.reference().node_count();
        let mut coords = vec![[T::zero(); 2]; n];
        for (&i, &w) in membership.indices.iter().zip(&membership.weights) {
            let c = &self.registry.centroids[i];
            let g = relative_deformation(&point.strain, &c.center)?;
            let correctors = [0, 1, 2, 3].map(|m| c.state.corrector(m).to_vec());
            let y = self.problem.predict(c.state.coordinates(), &correctors, &g);
            for (acc, p) in coords.iter_mut().zip(y) {
                acc[0] += w * p[0];
                acc[1] += w * p[1];
            }
        }
        let inv_n = T::one() / T::lit(n as f64);
        let center = coords.iter().fold([T::zero(); 2], |m, p| [m[0] + p[0] * inv_n, m[1] + p[1] * inv_n]);
        let r = point.rotation.0;
        Ok(coords
            .into_iter()
            .map(|p| {
                let d = [p[0] - center[0], p[1] - center[1]];
                [center[0] + r[0][0] * d[0] + r[0][1] * d[1], center[1] + r[1][0] * d[0] + r[1][1] * d[1]]
            })
            .collect())
    }

    fn membership_or_nearest(&self, strain: &[T; 3]) -> (Membership<T>, bool) {
        match self.registry.membership(strain) {
            Some(m) => (m, false),
            None => {
                let nearest = self.registry.nearest(strain).expect("registry is seeded");
                (Membership { indices: vec![nearest], weights: vec![T::one()] }, true)
            }
        }
    }
}

impl<T: Real> CoefficientBackend<T> for CsaBackend<T> {
    fn coefficients(&mut self, deformation: &[Tensor2<T>]) -> Result<CoefficientField<T>, BackendError> {
        let start = Instant::now();
        let micro_before = self.stats.micro_time;
        let points: Vec<StrainPoint<T>> =
            deformation.par_iter().map(StrainPoint::from_deformation).collect::<Result<_, CsaError>>()?;
        let mut created = 0;
        if self.registry.is_empty() {
            created += self.seed()?;
        }
        let uncovered: Vec<[T; 3]> = points
            .iter()
            .filter(|p| self.registry.covering(&p.strain).is_empty())
            .map(|p| p.strain)
            .collect();
        if !uncovered.is_empty() {
            created += self.grow(&uncovered)?;
        }

        let this = &*self;
        let results: Vec<((Tensor2<T>, Tensor4<T>), bool)> = points
            .par_iter()
            .map(|p| {
                let (m, fallback) = this.membership_or_nearest(&p.strain);
                this.registry.approximate(p, &m).map(|c| (c, fallback))
            })
            .collect::<Result<_, CsaError>>()?;
        self.fallbacks += results.iter().filter(|r| r.1).count();
        let (stress, tangent) = results.into_iter().map(|r| r.0).unzip();

        self.stats.evaluations += 1;
        self.stats.micro_solves += created;
        self.stats.last_new_solves = created;
        self.stats.last_new_centroids = created;
        let micro = self.stats.micro_time - micro_before;
        self.stats.reduction_time += start.elapsed().saturating_sub(micro);
        Ok(CoefficientField { stress, tangent })
    }

    fn stats(&self) -> &BackendStats {
        &self.stats
    }

    fn name(&self) -> &'static str {
        "csa"
    }
}
