//! Coefficient and displacement errors of run A against reference run B.
//!
//! For every evaluation recorded by A at a probe, the reference is B's record
//! at the same `(step, iter)` when B saw the identical deformation gradient.
//! Otherwise the probe's cell is re-solved along A's recorded gradients, so
//! both sides always describe the same macroscopic deformation.
//!
//! `err_rel` of a component is `|X_A - X_ref|` over the Frobenius norm of the
//! full reference tensor; `err_cum` is its running sum over evaluations.
//! Zero over zero counts as zero.

use std::collections::BTreeMap;
use std::path::Path;

use csahomog_core::micro::MicroState;
use csahomog_core::tensor::{Tensor2, Tensor4};
use serde_json::Value;

use crate::config::RawConfig;
use crate::metrics::{probe_traces, tensor2_labels, tensor4_labels, MetricsLog, ProbeRecord, TraceKey};
use crate::setup::Setup;
use crate::HarnessError;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CompareSummary {
    /// Probe evaluations compared.
    pub records: usize,
    /// Of those, evaluations whose reference came from a re-solve.
    pub replayed: usize,
    /// Largest per-component relative error of `S` over all probes and evaluations.
    pub max_rel_stress: f64,
    pub max_rel_tangent: f64,
    /// Sum over probes and evaluations of the largest per-component relative error.
    pub cum_stress: f64,
    pub cum_tangent: f64,
    /// Largest relative probe displacement error over converged steps.
    pub max_rel_displacement: f64,
}

impl CompareSummary {
    pub fn line(&self) -> String {
        format!(
            "records={} replayed={} max_rel_S={:e} max_rel_A={:e} cum_S={:e} cum_A={:e} max_rel_u={:e}",
            self.records,
            self.replayed,
            self.max_rel_stress,
            self.max_rel_tangent,
            self.cum_stress,
            self.cum_tangent,
            self.max_rel_displacement
        )
    }
}

#[derive(Clone, Debug, Default)]
pub struct Comparison {
    pub log: MetricsLog,
    pub summary: CompareSummary,
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn read_meta(dir: &Path) -> Result<Value, HarnessError> {
    let path = dir.join("meta.json");
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Incompatible(format!("{}: {e}", path.display())))
}

/// Re-solves the cell along A's gradients at one probe.
fn replay(
    problem: &csahomog_core::micro::CellProblem<f64>,
    trace: &BTreeMap<TraceKey, ProbeRecord>,
) -> Result<BTreeMap<TraceKey, (Tensor2<f64>, Tensor4<f64>)>, HarnessError> {
    let mut state: MicroState<f64> = problem.initial_state().map_err(|e| HarnessError::MicroFailure(e.to_string()))?;
    let mut out = BTreeMap::new();
    for (key, rec) in trace {
        if *state.mean_gradient() != rec.deformation {
            state = problem
                .step_to(&state, &rec.deformation)
                .map_err(|e| HarnessError::MicroFailure(format!("replay at step {} iter {}: {e}", key.0, key.1)))?;
        }
        out.insert(*key, (state.coefficients().stress, state.coefficients().tangent.clone()));
    }
    Ok(out)
}

pub fn compare(dir_a: &Path, dir_b: &Path, probes: &[String]) -> Result<Comparison, HarnessError> {
    let (meta_a, meta_b) = (read_meta(dir_a)?, read_meta(dir_b)?);
    if meta_a["case_checksum"] != meta_b["case_checksum"] || meta_a["case_checksum"].is_null() {
        return Err(HarnessError::Incompatible(format!(
            "runs differ in meshes, materials or load (checksums {} vs {})",
            meta_a["case_checksum"], meta_b["case_checksum"]
        )));
    }
    let traces_a = probe_traces(&MetricsLog::read(&dir_a.join("metrics.csv"))?);
    let traces_b = probe_traces(&MetricsLog::read(&dir_b.join("metrics.csv"))?);
    let mut cell = None;
    let mut comparison = Comparison::default();
    let summary = &mut comparison.summary;
    let log = &mut comparison.log;

    for name in probes {
        let (Some(ta), Some(tb)) = (traces_a.get(name), traces_b.get(name)) else {
            return Err(HarnessError::Incompatible(format!("probe '{name}' is not recorded by both runs")));
        };
        let matches = |key: &TraceKey, rec: &ProbeRecord| tb.get(key).is_some_and(|r| r.deformation == rec.deformation);
        let replayed = if ta.iter().all(|(k, r)| matches(k, r)) {
            None
        } else {
            if cell.is_none() {
                let config = RawConfig::load(&dir_a.join("config.resolved"))?.resolve()?;
                cell = Some(Setup::new(&config)?.cell_problem(&config, false)?);
            }
            Some(replay(cell.as_ref().expect("built above"), ta)?)
        };

        let mut cum_s = [0.0; 9];
        let mut cum_a = [0.0; 81];
        for (key, rec) in ta {
            let (step, iter) = *key;
            let (s_ref, a_ref) = if matches(key, rec) {
                (tb[key].stress, tb[key].tangent.clone())
            } else {
                summary.replayed += 1;
                replayed.as_ref().expect("replayed when any record differs")[key].clone()
            };
            summary.records += 1;

            let norm_s = s_ref.norm();
            let mut worst_s: f64 = 0.0;
            for (n, (i, j, label)) in tensor2_labels().enumerate() {
                let e = ratio((rec.stress[(i, j)] - s_ref[(i, j)]).abs(), norm_s);
                cum_s[n] += e;
                worst_s = worst_s.max(e);
                log.push(step, iter, name, "err_rel_S", &label, e);
                log.push(step, iter, name, "err_cum_S", &label, cum_s[n]);
            }
            let norm_a = a_ref.norm();
            let mut worst_a: f64 = 0.0;
            for (n, ([i, j, k, l], label)) in tensor4_labels().enumerate() {
                let e = ratio((rec.tangent.get(i, j, k, l) - a_ref.get(i, j, k, l)).abs(), norm_a);
                cum_a[n] += e;
                worst_a = worst_a.max(e);
                log.push(step, iter, name, "err_rel_A", &label, e);
                log.push(step, iter, name, "err_cum_A", &label, cum_a[n]);
            }
            log.push(step, iter, name, "err_rel_S", "max", worst_s);
            log.push(step, iter, name, "err_rel_A", "max", worst_a);
            summary.max_rel_stress = summary.max_rel_stress.max(worst_s);
            summary.max_rel_tangent = summary.max_rel_tangent.max(worst_a);
            summary.cum_stress += worst_s;
            summary.cum_tangent += worst_a;
        }

        // Displacement at the converged end of every step both runs completed.
        let last = |t: &BTreeMap<TraceKey, ProbeRecord>| {
            let mut m: BTreeMap<usize, (usize, [f64; 2])> = BTreeMap::new();
            for (&(step, iter), r) in t {
                m.insert(step, (iter, r.displacement));
            }
            m
        };
        let (ua, ub) = (last(ta), last(tb));
        for (step, (iter, u)) in &ua {
            let Some((_, v)) = ub.get(step) else { continue };
            let diff = ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)).sqrt();
            let e = ratio(diff, (v[0] * v[0] + v[1] * v[1]).sqrt());
            log.push(*step, *iter, name, "err_rel_u", "norm", e);
            summary.max_rel_displacement = summary.max_rel_displacement.max(e);
        }
    }
    Ok(comparison)
}
