//! Long-format metric tables: `step,iter,probe,quantity,component,value`.
//!
//! Values are written in shortest round-trip exponent form, so reading a
//! table back reproduces every value bit for bit and identical runs give
//! identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use csahomog_core::tensor::{Tensor2, Tensor4};

use crate::HarnessError;

pub const HEADER: &str = "step,iter,probe,quantity,component,value";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub iter: usize,
    pub probe: String,
    pub quantity: String,
    pub component: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricRow>,
}

/// Component labels `11 … 33` of a second-order tensor, row major.
pub fn tensor2_labels() -> impl Iterator<Item = (usize, usize, String)> {
    (0..3).flat_map(|i| (0..3).map(move |j| (i, j, format!("{}{}", i + 1, j + 1))))
}

/// Component labels `1111 … 3333` of a fourth-order tensor.
pub fn tensor4_labels() -> impl Iterator<Item = ([usize; 4], String)> {
    (0..81).map(|n| {
        let idx = [n / 27, (n / 9) % 3, (n / 3) % 3, n % 3];
        (idx, idx.iter().map(|i| (i + 1).to_string()).collect())
    })
}

impl MetricsLog {
    pub fn push(&mut self, step: usize, iter: usize, probe: &str, quantity: &str, component: &str, value: f64) {
        self.rows.push(MetricRow {
            step,
            iter,
            probe: probe.to_string(),
            quantity: quantity.to_string(),
            component: component.to_string(),
            value,
        });
    }

    pub fn push_tensor2(&mut self, step: usize, iter: usize, probe: &str, quantity: &str, t: &Tensor2<f64>) {
        for (i, j, label) in tensor2_labels() {
            self.push(step, iter, probe, quantity, &label, t[(i, j)]);
        }
    }

    pub fn push_tensor4(&mut self, step: usize, iter: usize, probe: &str, quantity: &str, t: &Tensor4<f64>) {
        for ([i, j, k, l], label) in tensor4_labels() {
            self.push(step, iter, probe, quantity, &label, t.get(i, j, k, l));
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(48 * self.rows.len() + HEADER.len() + 1);
        out.push_str(HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{:e}", r.step, r.iter, r.probe, r.quantity, r.component, r.value);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            _ => return Err(format!("missing header '{HEADER}'")),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = || format!("line {}: malformed row '{line}'", i + 1);
            if f.len() != 6 {
                return Err(bad());
            }
            rows.push(MetricRow {
                step: f[0].parse().map_err(|_| bad())?,
                iter: f[1].parse().map_err(|_| bad())?,
                probe: f[2].to_string(),
                quantity: f[3].to_string(),
                component: f[4].to_string(),
                value: f[5].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { rows })
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text).map_err(|m| HarnessError::Incompatible(format!("{}: {m}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, self.to_csv()).map_err(|e| HarnessError::io(path, e))
    }
}

/// Per-probe coefficient trace rebuilt from a metrics table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeRecord {
    pub deformation: Tensor2<f64>,
    pub stress: Tensor2<f64>,
    pub tangent: Tensor4<f64>,
    pub displacement: [f64; 2],
}

/// Key `(step, iter)` in evaluation order.
pub type TraceKey = (usize, usize);

/// Groups the `F`, `S`, `A` and `u` rows of a run by probe and evaluation.
pub fn probe_traces(log: &MetricsLog) -> BTreeMap<String, BTreeMap<TraceKey, ProbeRecord>> {
    let mut out: BTreeMap<String, BTreeMap<TraceKey, ProbeRecord>> = BTreeMap::new();
    for r in &log.rows {
        let rec = out.entry(r.probe.clone()).or_default().entry((r.step, r.iter)).or_default();
        let digits: Vec<usize> = r.component.bytes().map(|b| (b - b'1') as usize).collect();
        match (r.quantity.as_str(), digits.as_slice()) {
            ("F", &[i, j]) => rec.deformation[(i, j)] = r.value,
            ("S", &[i, j]) => rec.stress[(i, j)] = r.value,
            ("A", &[i, j, k, l]) => rec.tangent.set(i, j, k, l, r.value),
            ("u", &[i]) => rec.displacement[i] = r.value,
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let mut log = MetricsLog::default();
        log.push(0, 1, "A", "S", "11", 0.1 + 0.2);
        log.push(3, 2, "D", "u", "2", -1.234_567_890_123_456_7e-9);
        log.push(3, 2, "D", "u", "1", 0.0);
        let back = MetricsLog::parse(&log.to_csv()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_csv(), log.to_csv());
    }

    #[test]
    fn traces_rebuild_tensors() {
        let mut log = MetricsLog::default();
        let f = Tensor2::from_plane([[1.01, 0.02], [-0.03, 0.98]], 1.0);
        let a = Tensor4::from_fn(|i, j, k, l| (i + 3 * j + 9 * k + 27 * l) as f64);
        log.push_tensor2(1, 2, "B", "F", &f);
        log.push_tensor4(1, 2, "B", "A", &a);
        let t = probe_traces(&MetricsLog::parse(&log.to_csv()).unwrap());
        assert_eq!(t["B"][&(1, 2)].deformation, f);
        assert_eq!(t["B"][&(1, 2)].tangent, a);
    }
}
