//! Unstructured 2D meshes of linear triangles and bilinear quadrilaterals.

pub mod builders;
mod io;
mod periodic;
mod quadrature;
mod vtk;

use thiserror::Error;

use crate::scalar::Real;
use crate::tensor::Tensor2;

pub use io::{load_mesh, parse_mesh, save_mesh, write_mesh};
pub use periodic::{match_periodic, PeriodicCell};
pub use quadrature::{quadrature, shape_gradients, shape_values, QuadratureRule, ShapeGradients};
pub use vtk::VtkWriter;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("element {element} references node {node} but the mesh has {count} nodes")]
    NodeIndex { element: usize, node: usize, count: usize },
    #[error("element {element} has non-positive Jacobian {det} at quadrature point {point}")]
    Inverted { element: usize, point: usize, det: f64 },
    #[error("displacement vector has length {got}, expected {expected}")]
    FieldLength { got: usize, expected: usize },
    #[error("boundary node at ({x}, {y}) has no periodic partner")]
    Unmatched { x: f64, y: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Tri3,
    Quad4,
}

impl ElementKind {
    pub fn node_count(self) -> usize {
        match self {
            ElementKind::Tri3 => 3,
            ElementKind::Quad4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ElementKind::Tri3 => "tri3",
            ElementKind::Quad4 => "quad4",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tri3" => Some(ElementKind::Tri3),
            "quad4" => Some(ElementKind::Quad4),
            _ => None,
        }
    }

    /// Shape gradients are constant over the element.
    pub fn is_affine(self) -> bool {
        matches!(self, ElementKind::Tri3)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Element {
    pub kind: ElementKind,
    connectivity: [usize; 4],
    pub region: u32,
}

impl Element {
    /// Builds an element; nodes are listed counter-clockwise.
    pub fn new(kind: ElementKind, nodes: &[usize], region: u32) -> Self {
        assert_eq!(nodes.len(), kind.node_count(), "node count does not match element kind");
        let mut connectivity = [0; 4];
        connectivity[..nodes.len()].copy_from_slice(nodes);
        Self { kind, connectivity, region }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.connectivity[..self.kind.node_count()]
    }
}

/// Boundary segment carrying a tag used for loads and constraints.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Facet {
    pub nodes: [usize; 2],
    pub tag: u32,
}

/// Node coordinates, connectivity and tagged boundary facets.
///
/// Every element has a positive Jacobian at all of its quadrature points.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh<T> {
    nodes: Vec<[T; 2]>,
    elements: Vec<Element>,
    facets: Vec<Facet>,
}

impl<T: Real> Mesh<T> {
    pub fn new(nodes: Vec<[T; 2]>, elements: Vec<Element>, facets: Vec<Facet>) -> Result<Self, MeshError> {
        let count = nodes.len();
        for (e, el) in elements.iter().enumerate() {
            if let Some(&node) = el.nodes().iter().find(|&&n| n >= count) {
                return Err(MeshError::NodeIndex { element: e, node, count });
            }
        }
        for (f, facet) in facets.iter().enumerate() {
            if let Some(&node) = facet.nodes.iter().find(|&&n| n >= count) {
                return Err(MeshError::NodeIndex { element: f, node, count });
            }
        }
        let mesh = Self { nodes, elements, facets };
        mesh.check_orientation()?;
        Ok(mesh)
    }

    pub fn nodes(&self) -> &[[T; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    /// Coordinates of an element's nodes; unused slots are zero.
    pub fn element_coords(&self, e: usize) -> [[T; 2]; 4] {
        let mut out = [[T::zero(); 2]; 4];
        for (slot, &n) in self.elements[e].nodes().iter().enumerate() {
            out[slot] = self.nodes[n];
        }
        out
    }

    /// Same topology with new coordinates.
    pub fn with_coordinates(&self, nodes: Vec<[T; 2]>) -> Result<Self, MeshError> {
        if nodes.len() != self.nodes.len() {
            return Err(MeshError::FieldLength { got: 2 * nodes.len(), expected: 2 * self.nodes.len() });
        }
        let mesh = Self { nodes, elements: self.elements.clone(), facets: self.facets.clone() };
        mesh.check_orientation()?;
        Ok(mesh)
    }

    /// Moves every node by the interleaved nodal displacement `u = [u0x, u0y, u1x, ...]`.
    pub fn displace(&self, u: &[T]) -> Result<Self, MeshError> {
        if u.len() != 2 * self.nodes.len() {
            return Err(MeshError::FieldLength { got: u.len(), expected: 2 * self.nodes.len() });
        }
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, p)| [p[0] + u[2 * i], p[1] + u[2 * i + 1]])
            .collect();
        self.with_coordinates(nodes)
    }

    /// Total area, integrated with each element's quadrature rule.
    pub fn area(&self) -> T {
        let mut area = T::zero();
        for (e, el) in self.elements.iter().enumerate() {
            let coords = self.element_coords(e);
            let rule = quadrature::<T>(el.kind);
            for (xi, w) in rule.points.iter().zip(&rule.weights) {
                area += *w * shape_gradients(el.kind, &coords, *xi).det;
            }
        }
        area
    }

    pub fn bounding_box(&self) -> ([T; 2], [T; 2]) {
        let mut lo = [T::infinity(); 2];
        let mut hi = [T::neg_infinity(); 2];
        for p in &self.nodes {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    /// Deformation gradient `∂y/∂X` at a reference point of element `e`,
    /// mapping this mesh onto `current` (same topology).
    pub fn deformation_gradient(&self, current: &[[T; 2]], e: usize, xi: [T; 2]) -> Tensor2<T> {
        let el = &self.elements[e];
        let sg = shape_gradients(el.kind, &self.element_coords(e), xi);
        let mut f = [[T::zero(); 2]; 2];
        for (a, &n) in el.nodes().iter().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    f[i][j] += current[n][i] * sg.grads[a][j];
                }
            }
        }
        Tensor2::from_plane(f, T::one())
    }

    fn check_orientation(&self) -> Result<(), MeshError> {
        for (e, el) in self.elements.iter().enumerate() {
            let coords = self.element_coords(e);
            let rule = quadrature::<T>(el.kind);
            for (point, xi) in rule.points.iter().enumerate() {
                let det = shape_gradients(el.kind, &coords, *xi).det;
                if !(det > T::zero()) {
                    return Err(MeshError::Inverted { element: e, point, det: det.as_f64() });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Mesh<f64> {
        Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![Element::new(ElementKind::Quad4, &[0, 1, 2, 3], 1)],
            vec![Facet { nodes: [0, 1], tag: 3 }],
        )
        .unwrap()
    }

    #[test]
    fn rejects_out_of_range_nodes() {
        let err = Mesh::<f64>::new(vec![[0.0, 0.0]], vec![Element::new(ElementKind::Tri3, &[0, 1, 2], 1)], vec![]);
        assert!(matches!(err, Err(MeshError::NodeIndex { .. })));
    }

    #[test]
    fn rejects_clockwise_elements() {
        let err = Mesh::<f64>::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![Element::new(ElementKind::Tri3, &[0, 2, 1], 1)],
            vec![],
        );
        assert!(matches!(err, Err(MeshError::Inverted { .. })));
    }

    #[test]
    fn zero_displacement_is_identity() {
        let m = square();
        assert_eq!(m.displace(&[0.0; 8]).unwrap(), m);
    }

    #[test]
    fn displacement_that_folds_an_element_is_rejected() {
        let m = square();
        let u = [0.0, 0.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0];
        assert!(matches!(m.displace(&u), Err(MeshError::Inverted { .. })));
    }

    #[test]
    fn homogeneous_map_gives_constant_gradient() {
        let m = square();
        let cur: Vec<[f64; 2]> = m.nodes().iter().map(|p| [1.1 * p[0] + 0.2 * p[1], 0.9 * p[1]]).collect();
        let f = m.deformation_gradient(&cur, 0, [0.3, -0.2]);
        assert!((f.0[0][0] - 1.1).abs() < 1e-14 && (f.0[0][1] - 0.2).abs() < 1e-14);
        assert!((f.0[1][1] - 0.9).abs() < 1e-14 && f.0[1][0].abs() < 1e-14);
    }

    #[test]
    fn area_of_unit_square() {
        assert!((square().area() - 1.0).abs() < 1e-14);
    }
}
