//! Periodic node pairing on an axis-aligned rectangular cell.

use crate::scalar::Real;

use super::{Mesh, MeshError};

/// A rectangular cell whose opposite faces are glued together.
///
/// Right-face nodes are slaved to left-face nodes and top-face nodes to
/// bottom-face nodes; all four corners collapse onto the bottom-left corner,
/// which also serves as the anchor removing rigid translations. Every slave
/// points straight at its final master, so `master_of` is idempotent.
#[derive(Clone, Debug)]
pub struct PeriodicCell<T> {
    mesh: Mesh<T>,
    master: Vec<usize>,
    anchor: usize,
    dof_index: Vec<Option<usize>>,
    n_free: usize,
    period: [T; 2],
}

/// Pairs the boundary nodes of `mesh`. `tol` is relative to the cell size.
pub fn match_periodic<T: Real>(mesh: &Mesh<T>, tol: T) -> Result<PeriodicCell<T>, MeshError> {
    let (lo, hi) = mesh.bounding_box();
    let period = [hi[0] - lo[0], hi[1] - lo[1]];
    let abs_tol = tol * period[0].max(period[1]);
    let nodes = mesh.nodes();
    let on = |n: usize, axis: usize, value: T| (nodes[n][axis] - value).abs() <= abs_tol;

    let mut master: Vec<usize> = (0..nodes.len()).collect();
    for axis in 0..2 {
        let other = 1 - axis;
        let mut low: Vec<usize> = (0..nodes.len()).filter(|&n| on(n, axis, lo[axis])).collect();
        low.sort_by(|&a, &b| nodes[a][other].partial_cmp(&nodes[b][other]).expect("finite coordinates"));
        for n in (0..nodes.len()).filter(|&n| on(n, axis, hi[axis])) {
            let y = nodes[n][other];
            let pos = low.partition_point(|&m| nodes[m][other] < y - abs_tol);
            match low.get(pos) {
                Some(&m) if (nodes[m][other] - y).abs() <= abs_tol => master[n] = m,
                _ => return Err(MeshError::Unmatched { x: nodes[n][0].as_f64(), y: nodes[n][1].as_f64() }),
            }
        }
        // Every low-face node must also have a partner.
        let high_count = (0..nodes.len()).filter(|&n| on(n, axis, hi[axis])).count();
        if high_count != low.len() {
            let orphan = low
                .iter()
                .copied()
                .find(|&m| !(0..nodes.len()).any(|n| master[n] == m && n != m))
                .unwrap_or(low[0]);
            return Err(MeshError::Unmatched { x: nodes[orphan][0].as_f64(), y: nodes[orphan][1].as_f64() });
        }
    }
    // Corners chain through two faces; two passes reach the final master.
    for _ in 0..2 {
        for n in 0..master.len() {
            master[n] = master[master[n]];
        }
    }
    let anchor = (0..nodes.len())
        .find(|&n| on(n, 0, lo[0]) && on(n, 1, lo[1]))
        .ok_or(MeshError::Unmatched { x: lo[0].as_f64(), y: lo[1].as_f64() })?;
    let anchor = master[anchor];

    let mut dof_index = vec![None; 2 * nodes.len()];
    let mut n_free = 0;
    for n in 0..nodes.len() {
        if master[n] == n && n != anchor {
            for d in 0..2 {
                dof_index[2 * n + d] = Some(n_free);
                n_free += 1;
            }
        }
    }
    for n in 0..nodes.len() {
        let m = master[n];
        for d in 0..2 {
            dof_index[2 * n + d] = dof_index[2 * m + d];
        }
    }
    Ok(PeriodicCell { mesh: mesh.clone(), master, anchor, dof_index, n_free, period })
}

impl<T: Real> PeriodicCell<T> {
    /// Reference (undeformed) configuration.
    pub fn reference(&self) -> &Mesh<T> {
        &self.mesh
    }

    pub fn master_of(&self, node: usize) -> usize {
        self.master[node]
    }

    /// Node pinned to remove rigid translations.
    pub fn anchor(&self) -> usize {
        self.anchor
    }

    /// `(slave, master)` node pairs.
    pub fn pairings(&self) -> Vec<(usize, usize)> {
        self.master.iter().enumerate().filter(|(n, m)| *n != **m).map(|(n, &m)| (n, m)).collect()
    }

    /// Reduced index of DOF `d` of `node`; `None` for the anchor.
    #[inline]
    pub fn dof_index(&self, node: usize, d: usize) -> Option<usize> {
        self.dof_index[2 * node + d]
    }

    /// Number of independent periodic DOFs.
    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn period(&self) -> [T; 2] {
        self.period
    }

    /// Interleaved nodal vector from reduced values; anchor DOFs are zero.
    pub fn expand(&self, reduced: &[T]) -> Vec<T> {
        self.dof_index.iter().map(|i| i.map_or(T::zero(), |i| reduced[i])).collect()
    }

    /// Reduced values read from the masters of an interleaved nodal vector.
    pub fn restrict(&self, full: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_free];
        for (dof, idx) in self.dof_index.iter().enumerate() {
            if let Some(i) = idx {
                if self.master[dof / 2] == dof / 2 {
                    out[*i] = full[dof];
                }
            }
        }
        out
    }

    /// Reference offset `X_node - X_master`, a whole multiple of the period.
    pub fn lattice_offset(&self, node: usize) -> [T; 2] {
        let p = self.mesh.nodes()[node];
        let m = self.mesh.nodes()[self.master[node]];
        [p[0] - m[0], p[1] - m[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::super::builders::uniform_cell;
    use super::*;

    #[test]
    fn pairs_structured_cell() {
        let mesh = uniform_cell::<f64>(4, 4);
        let cell = match_periodic(&mesh, 1e-8).unwrap();
        // 25 nodes: 9 slaves (4 right, 4 top, top-right counted once), anchor removes one more node.
        assert_eq!(cell.pairings().len(), 9);
        assert_eq!(cell.n_free(), 2 * (25 - 9 - 1));
        for n in 0..mesh.node_count() {
            assert_eq!(cell.master_of(cell.master_of(n)), cell.master_of(n));
        }
        let corners: Vec<usize> = (0..25).filter(|&n| {
            let p = mesh.nodes()[n];
            (p[0] == 0.0 || p[0] == 1.0) && (p[1] == 0.0 || p[1] == 1.0)
        }).collect();
        assert!(corners.iter().all(|&c| cell.master_of(c) == cell.anchor()));
    }

    #[test]
    fn expand_restrict_round_trip() {
        let cell = match_periodic(&uniform_cell::<f64>(3, 3), 1e-8).unwrap();
        let reduced: Vec<f64> = (0..cell.n_free()).map(|i| i as f64 * 0.5).collect();
        assert_eq!(cell.restrict(&cell.expand(&reduced)), reduced);
    }

    #[test]
    fn missing_partner_is_reported() {
        let mesh = uniform_cell::<f64>(3, 3);
        let mut nodes = mesh.nodes().to_vec();
        // Nudge one right-face node off its partner's height.
        let n = (0..nodes.len()).find(|&n| nodes[n][0] == 1.0 && nodes[n][1] > 0.2 && nodes[n][1] < 0.5).unwrap();
        nodes[n][1] += 0.05;
        let moved = mesh.with_coordinates(nodes).unwrap();
        assert!(matches!(match_periodic(&moved, 1e-8), Err(MeshError::Unmatched { .. })));
    }
}
