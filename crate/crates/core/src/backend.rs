//! Sources of homogenized coefficients for the macroscopic solver.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::micro::{CellProblem, CoefficientSet, MicroError, MicroState};
use crate::scalar::Real;
use crate::tensor::{Tensor2, Tensor4};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("micro solve failed at macro point {point}: {source}")]
    Micro {
        point: usize,
        #[source]
        source: MicroError,
    },
    #[error("micro solve failed for reference state at {center:?} driven from state {source_id}: {source}")]
    Centroid {
        center: [f64; 3],
        source_id: usize,
        #[source]
        source: MicroError,
    },
    #[error("{0}")]
    Reduction(String),
}

/// Stress and tangent at every macroscopic quadrature point.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField<T> {
    pub stress: Vec<Tensor2<T>>,
    pub tangent: Vec<Tensor4<T>>,
}

impl<T: Real> CoefficientField<T> {
    pub fn from_sets(sets: impl IntoIterator<Item = CoefficientSet<T>>) -> Self {
        let (stress, tangent) = sets.into_iter().map(|c| (c.stress, c.tangent)).unzip();
        Self { stress, tangent }
    }

    pub fn len(&self) -> usize {
        self.stress.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stress.is_empty()
    }
}

/// Work counters shared by all backends.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BackendStats {
    /// Calls to [`CoefficientBackend::coefficients`].
    pub evaluations: usize,
    /// Cell problems actually solved.
    pub micro_solves: usize,
    /// Cell solves performed during the most recent evaluation.
    pub last_new_solves: usize,
    /// Reference states added during the most recent evaluation; adaptive backends only.
    pub last_new_centroids: usize,
    pub micro_time: Duration,
    /// Clustering, classification and interpolation.
    pub reduction_time: Duration,
}

/// Evaluates coefficients for the total deformation gradient at each macro point.
pub trait CoefficientBackend<T: Real>: Send {
    fn coefficients(&mut self, deformation: &[Tensor2<T>]) -> Result<CoefficientField<T>, BackendError>;

    /// Called once the macroscopic step has converged.
    fn commit(&mut self) {}

    fn stats(&self) -> &BackendStats;

    fn name(&self) -> &'static str;
}

/// Full two-scale backend: one cell state per macro point, advanced by every evaluation.
pub struct Fe2Backend<T> {
    problem: Arc<CellProblem<T>>,
    states: Vec<MicroState<T>>,
    stats: BackendStats,
}

impl<T: Real> Fe2Backend<T> {
    /// Every point starts from the undeformed cell.
    pub fn new(problem: Arc<CellProblem<T>>, points: usize) -> Result<Self, BackendError> {
        let start = Instant::now();
        let initial = problem.initial_state().map_err(|source| BackendError::Micro { point: 0, source })?;
        let stats = BackendStats { micro_solves: 1, micro_time: start.elapsed(), ..Default::default() };
        Ok(Self { problem, states: vec![initial; points], stats })
    }

    pub fn states(&self) -> &[MicroState<T>] {
        &self.states
    }
}

impl<T: Real> CoefficientBackend<T> for Fe2Backend<T> {
    fn coefficients(&mut self, deformation: &[Tensor2<T>]) -> Result<CoefficientField<T>, BackendError> {
        assert_eq!(deformation.len(), self.states.len(), "one deformation gradient per point");
        let start = Instant::now();
        let problem = &self.problem;
        // A point whose gradient did not move keeps its converged state.
        let updated: Vec<Option<MicroState<T>>> = self
            .states
            .par_iter()
            .zip(deformation.par_iter())
            .enumerate()
            .map(|(point, (state, f))| {
                if state.mean_gradient() == f {
                    return Ok(None);
                }
                problem.step_to(state, f).map(Some).map_err(|source| BackendError::Micro { point, source })
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
        "fe2"
    }
}
