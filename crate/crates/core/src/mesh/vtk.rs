//! Legacy ASCII VTK unstructured-grid output.

use std::fmt::Write as _;
use std::path::Path;

use crate::scalar::Real;
use crate::tensor::Tensor2;

use super::{ElementKind, Mesh};

/// Accumulates point and cell fields, then renders one `.vtk` file.
pub struct VtkWriter<'a, T> {
    mesh: &'a Mesh<T>,
    title: String,
    point_data: String,
    cell_data: String,
}

impl<'a, T: Real> VtkWriter<'a, T> {
    pub fn new(mesh: &'a Mesh<T>, title: &str) -> Self {
        Self { mesh, title: title.replace('\n', " "), point_data: String::new(), cell_data: String::new() }
    }

    pub fn point_vectors(mut self, name: &str, values: &[[T; 2]]) -> Self {
        assert_eq!(values.len(), self.mesh.node_count());
        let _ = writeln!(self.point_data, "VECTORS {name} double");
        for v in values {
            let _ = writeln!(self.point_data, "{} {} 0", v[0], v[1]);
        }
        self
    }

    pub fn point_scalars(mut self, name: &str, values: &[T]) -> Self {
        assert_eq!(values.len(), self.mesh.node_count());
        let _ = writeln!(self.point_data, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in values {
            let _ = writeln!(self.point_data, "{v}");
        }
        self
    }

    pub fn cell_scalars(mut self, name: &str, values: &[T]) -> Self {
        assert_eq!(values.len(), self.mesh.element_count());
        let _ = writeln!(self.cell_data, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in values {
            let _ = writeln!(self.cell_data, "{v}");
        }
        self
    }

    pub fn cell_tensors(mut self, name: &str, values: &[Tensor2<T>]) -> Self {
        assert_eq!(values.len(), self.mesh.element_count());
        let _ = writeln!(self.cell_data, "TENSORS {name} double");
        for t in values {
            for row in &t.0 {
                let _ = writeln!(self.cell_data, "{} {} {}", row[0], row[1], row[2]);
            }
        }
        self
    }

    pub fn render(&self) -> String {
        let mesh = self.mesh;
        let mut s = String::new();
        let _ = writeln!(s, "# vtk DataFile Version 3.0\n{}\nASCII\nDATASET UNSTRUCTURED_GRID", self.title);
        let _ = writeln!(s, "POINTS {} double", mesh.node_count());
        for p in mesh.nodes() {
            let _ = writeln!(s, "{} {} 0", p[0], p[1]);
        }
        let size: usize = mesh.elements().iter().map(|e| e.nodes().len() + 1).sum();
        let _ = writeln!(s, "CELLS {} {size}", mesh.element_count());
        for e in mesh.elements() {
            let _ = write!(s, "{}", e.nodes().len());
            for n in e.nodes() {
                let _ = write!(s, " {n}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "CELL_TYPES {}", mesh.element_count());
        for e in mesh.elements() {
            let code = match e.kind {
                ElementKind::Tri3 => 5,
                ElementKind::Quad4 => 9,
            };
            let _ = writeln!(s, "{code}");
        }
        if !self.point_data.is_empty() {
            let _ = writeln!(s, "POINT_DATA {}", mesh.node_count());
            s.push_str(&self.point_data);
        }
        if !self.cell_data.is_empty() {
            let _ = writeln!(s, "CELL_DATA {}", mesh.element_count());
            s.push_str(&self.cell_data);
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.render())
    }
}

#[cfg(test)]
mod tests {
    use super::super::builders::uniform_cell;
    use super::*;

    #[test]
    fn renders_sections_with_consistent_counts() {
        let mesh = uniform_cell::<f64>(2, 2);
        let u = vec![[0.0, 1.0]; mesh.node_count()];
        let t = vec![Tensor2::identity(); mesh.element_count()];
        let out = VtkWriter::new(&mesh, "test").point_vectors("u", &u).cell_tensors("S", &t).render();
        assert!(out.contains("POINTS 9 double"));
        assert!(out.contains("CELLS 8 32"));
        assert!(out.contains("POINT_DATA 9\nVECTORS u double"));
        assert!(out.contains("CELL_DATA 8\nTENSORS S double"));
    }
}
