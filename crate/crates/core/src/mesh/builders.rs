//! Structured meshes for examples, tests and benchmarks.
//!
//! Production runs read meshes from files; these builders only cover the
//! simple shapes the bundled configurations and tests need.

use std::collections::HashMap;

use crate::scalar::Real;

use super::{Element, ElementKind, Facet, Mesh};

/// Region tag of the matrix phase in generated cells.
pub const MATRIX_REGION: u32 = 1;
/// Region tag of the inclusion phase in generated cells.
pub const INCLUSION_REGION: u32 = 2;

/// Facet tag of the clamped edge of [`lshape`] and the left edge of [`rectangle`].
pub const LEFT_EDGE: u32 = 1;
/// Facet tag of the loaded edge of [`lshape`] and the right edge of [`rectangle`].
pub const RIGHT_EDGE: u32 = 2;
pub const BOTTOM_EDGE: u32 = 3;
pub const TOP_EDGE: u32 = 4;

struct NodeSet<T> {
    nodes: Vec<[T; 2]>,
    lookup: HashMap<(i64, i64), usize>,
}

impl<T: Real> NodeSet<T> {
    fn new() -> Self {
        Self { nodes: Vec::new(), lookup: HashMap::new() }
    }

    fn insert(&mut self, p: [f64; 2]) -> usize {
        let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else if (v - 1.0).abs() < 1e-12 { 1.0 } else { v };
        let p = [snap(p[0]), snap(p[1])];
        let key = ((p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64);
        let next = self.nodes.len();
        *self.lookup.entry(key).or_insert_with(|| {
            self.nodes.push([T::lit(p[0]), T::lit(p[1])]);
            next
        })
    }
}

fn push_triangle(nodes: &[[f64; 2]], elements: &mut Vec<Element>, tri: [usize; 3], region: u32) {
    let [a, b, c] = tri.map(|n| nodes[n]);
    let area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let tri = if area > 0.0 { tri } else { [tri[0], tri[2], tri[1]] };
    elements.push(Element::new(ElementKind::Tri3, &tri, region));
}

/// Splits quad `[p00, p10, p11, p01]` along the main diagonal or the other one.
fn split_quad(nodes: &[[f64; 2]], elements: &mut Vec<Element>, q: [usize; 4], main: bool, region: u32) {
    let [p00, p10, p11, p01] = q;
    if main {
        push_triangle(nodes, elements, [p00, p10, p11], region);
        push_triangle(nodes, elements, [p00, p11, p01], region);
    } else {
        push_triangle(nodes, elements, [p00, p10, p01], region);
        push_triangle(nodes, elements, [p10, p11, p01], region);
    }
}

/// Unit square split into `nx × ny` cells of two triangles each, single region.
/// Diagonals alternate by quadrant so the mesh is symmetric under both mid-line mirrors.
pub fn uniform_cell<T: Real>(nx: usize, ny: usize) -> Mesh<T> {
    let mut set = NodeSet::<T>::new();
    let mut raw = Vec::new();
    let mut ids = vec![vec![0; ny + 1]; nx + 1];
    for (i, col) in ids.iter_mut().enumerate() {
        for (j, id) in col.iter_mut().enumerate() {
            let p = [i as f64 / nx as f64, j as f64 / ny as f64];
            *id = set.insert(p);
            if *id == raw.len() {
                raw.push(p);
            }
        }
    }
    let mut elements = Vec::new();
    for i in 0..nx {
        for j in 0..ny {
            let main = (2 * i < nx) == (2 * j < ny);
            let q = [ids[i][j], ids[i + 1][j], ids[i + 1][j + 1], ids[i][j + 1]];
            split_quad(&raw, &mut elements, q, main, MATRIX_REGION);
        }
    }
    Mesh::new(set.nodes, elements, Vec::new()).expect("structured cell is valid")
}

/// Geometry of a square periodic cell with one centred circular inclusion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InclusionCell {
    /// Divisions along each cell side; even.
    pub side_divisions: usize,
    /// Element layers between the inner core block and the inclusion boundary.
    pub inclusion_layers: usize,
    /// Element layers between the inclusion boundary and the cell boundary.
    pub matrix_layers: usize,
    /// Inclusion radius, as a fraction of the cell side.
    pub radius: f64,
}

impl InclusionCell {
    /// About 550 nodes.
    pub fn coarse() -> Self {
        Self { side_divisions: 12, inclusion_layers: 3, matrix_layers: 5, radius: 0.3 }
    }

    /// About 2200 nodes and 4200 triangles.
    pub fn fine() -> Self {
        Self { side_divisions: 24, inclusion_layers: 6, matrix_layers: 10, radius: 0.3 }
    }

    /// About 150 nodes, for quick end-to-end runs.
    pub fn tiny() -> Self {
        Self { side_divisions: 6, inclusion_layers: 2, matrix_layers: 3, radius: 0.3 }
    }

    /// Conforming O-grid triangulation of the unit square: a core block inside
    /// the inclusion, surrounded by four sectors that reach the cell sides.
    /// Mirror symmetric about both mid-lines; opposite sides carry matching nodes.
    pub fn build<T: Real>(&self) -> Mesh<T> {
        let n = self.side_divisions;
        assert!(n >= 2 && n % 2 == 0, "side divisions must be even");
        let layers = self.inclusion_layers + self.matrix_layers;
        let c = 0.5;
        let r = self.radius;
        assert!(r > 0.0 && r < 0.5, "inclusion must fit inside the cell");
        let a = 0.5 * r;

        let mut set = NodeSet::<T>::new();
        let mut raw: Vec<[f64; 2]> = Vec::new();
        let mut add = |set: &mut NodeSet<T>, p: [f64; 2]| {
            let id = set.insert(p);
            if id == raw.len() {
                raw.push(p);
            }
            id
        };

        let mut core = vec![vec![0; n + 1]; n + 1];
        for (i, col) in core.iter_mut().enumerate() {
            for (k, id) in col.iter_mut().enumerate() {
                let p = [c - a + 2.0 * a * i as f64 / n as f64, c - a + 2.0 * a * k as f64 / n as f64];
                *id = add(&mut set, p);
            }
        }

        // Sector 0 faces +x; the others are quarter turns about the centre.
        let rotate = |p: [f64; 2], quarter: usize| {
            let (mut dx, mut dy) = (p[0] - c, p[1] - c);
            for _ in 0..quarter {
                (dx, dy) = (-dy, dx);
            }
            [c + dx, c + dy]
        };
        let mut sectors = Vec::with_capacity(4);
        for quarter in 0..4 {
            let mut grid = vec![vec![0; layers + 1]; n + 1];
            for (i, col) in grid.iter_mut().enumerate() {
                let s = i as f64 / n as f64;
                let inner = [c + a, c - a + 2.0 * a * s];
                let theta = (s - 0.5).atan2(0.5);
                let circle = [c + r * theta.cos(), c + r * theta.sin()];
                let outer = [1.0, s];
                for (j, id) in col.iter_mut().enumerate() {
                    let p = if j <= self.inclusion_layers {
                        let t = j as f64 / self.inclusion_layers as f64;
                        [inner[0] + t * (circle[0] - inner[0]), inner[1] + t * (circle[1] - inner[1])]
                    } else if j == layers {
                        outer
                    } else {
                        let t = (j - self.inclusion_layers) as f64 / self.matrix_layers as f64;
                        [circle[0] + t * (outer[0] - circle[0]), circle[1] + t * (outer[1] - circle[1])]
                    };
                    *id = add(&mut set, rotate(p, quarter));
                }
            }
            sectors.push(grid);
        }

        let mut elements = Vec::new();
        for i in 0..n {
            for k in 0..n {
                let main = (2 * i < n) == (2 * k < n);
                let q = [core[i][k], core[i + 1][k], core[i + 1][k + 1], core[i][k + 1]];
                split_quad(&raw, &mut elements, q, main, INCLUSION_REGION);
            }
        }
        for grid in &sectors {
            for i in 0..n {
                for j in 0..layers {
                    let region = if j < self.inclusion_layers { INCLUSION_REGION } else { MATRIX_REGION };
                    let q = [grid[i][j], grid[i][j + 1], grid[i + 1][j + 1], grid[i + 1][j]];
                    split_quad(&raw, &mut elements, q, 2 * i < n, region);
                }
            }
        }
        Mesh::new(set.nodes, elements, Vec::new()).expect("generated cell is valid")
    }
}

/// Axis-aligned rectangle of bilinear quads with edges tagged
/// [`LEFT_EDGE`], [`RIGHT_EDGE`], [`BOTTOM_EDGE`] and [`TOP_EDGE`].
pub fn rectangle<T: Real>(width: f64, height: f64, nx: usize, ny: usize) -> Mesh<T> {
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut nodes = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([T::lit(width * i as f64 / nx as f64), T::lit(height * j as f64 / ny as f64)]);
        }
    }
    let mut elements = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            elements.push(Element::new(
                ElementKind::Quad4,
                &[id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)],
                MATRIX_REGION,
            ));
        }
    }
    let mut facets = Vec::new();
    for j in 0..ny {
        facets.push(Facet { nodes: [id(0, j + 1), id(0, j)], tag: LEFT_EDGE });
        facets.push(Facet { nodes: [id(nx, j), id(nx, j + 1)], tag: RIGHT_EDGE });
    }
    for i in 0..nx {
        facets.push(Facet { nodes: [id(i, 0), id(i + 1, 0)], tag: BOTTOM_EDGE });
        facets.push(Facet { nodes: [id(i + 1, ny), id(i, ny)], tag: TOP_EDGE });
    }
    Mesh::new(nodes, elements, facets).expect("structured rectangle is valid")
}

/// L-shaped domain `[0, 0.3]×[0.1, 0.2] ∪ [0.3, 0.6]×[0, 0.2]` meshed with
/// square quads of side `0.05 / refinement`. The edge `x = 0` carries
/// [`LEFT_EDGE`] and the edge `x = 0.6` carries [`RIGHT_EDGE`].
pub fn lshape<T: Real>(refinement: usize) -> Mesh<T> {
    let per = 20 * refinement;
    let nx = 12 * refinement;
    let ny = 4 * refinement;
    let inside = |i: usize, j: usize| i >= 6 * refinement || j >= 2 * refinement;
    let mut index = vec![vec![None; ny + 1]; nx + 1];
    let mut nodes = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            // A node exists when it touches at least one cell of the domain.
            let touches = [(0, 0), (1, 0), (0, 1), (1, 1)].iter().any(|&(di, dj)| {
                i >= di && j >= dj && i - di < nx && j - dj < ny && inside(i - di, j - dj)
            });
            if touches {
                index[i][j] = Some(nodes.len());
                nodes.push([T::lit(i as f64 / per as f64), T::lit(j as f64 / per as f64)]);
            }
        }
    }
    let id = |i: usize, j: usize| index[i][j].expect("node inside domain");
    let mut elements = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if inside(i, j) {
                elements.push(Element::new(
                    ElementKind::Quad4,
                    &[id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1)],
                    MATRIX_REGION,
                ));
            }
        }
    }
    let mut facets = Vec::new();
    for j in 0..ny {
        if inside(0, j) {
            facets.push(Facet { nodes: [id(0, j + 1), id(0, j)], tag: LEFT_EDGE });
        }
        facets.push(Facet { nodes: [id(nx, j), id(nx, j + 1)], tag: RIGHT_EDGE });
    }
    Mesh::new(nodes, elements, facets).expect("L-shape is valid")
}

#[cfg(test)]
mod tests {
    use super::super::match_periodic;
    use super::*;

    #[test]
    fn lshape_has_36_quads_and_144_points() {
        let m = lshape::<f64>(1);
        assert_eq!(m.element_count(), 36);
        assert_eq!(4 * m.element_count(), 144);
        assert!((m.area() - 0.09).abs() < 1e-14);
        assert_eq!(m.facets().iter().filter(|f| f.tag == LEFT_EDGE).count(), 2);
        assert_eq!(m.facets().iter().filter(|f| f.tag == RIGHT_EDGE).count(), 4);
    }

    #[test]
    fn inclusion_cell_is_periodic_and_fills_the_square() {
        for geom in [InclusionCell::tiny(), InclusionCell::coarse()] {
            let m = geom.build::<f64>();
            assert!((m.area() - 1.0).abs() < 1e-12);
            match_periodic(&m, 1e-8).unwrap();
            let inclusion: f64 = m
                .elements()
                .iter()
                .enumerate()
                .filter(|(_, e)| e.region == INCLUSION_REGION)
                .map(|(i, _)| {
                    let p = m.element_coords(i);
                    0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
                })
                .sum();
            let circle = std::f64::consts::PI * geom.radius * geom.radius;
            assert!((inclusion - circle).abs() < 0.05 * circle, "{inclusion} vs {circle}");
        }
    }

    #[test]
    fn fine_cell_size() {
        let m = InclusionCell::fine().build::<f64>();
        assert_eq!(m.node_count(), 25 * 25 + 4 * 24 * 16);
        assert_eq!(m.element_count(), 2 * 24 * 24 + 4 * 2 * 24 * 16);
    }

    #[test]
    fn uniform_cell_mirror_symmetric() {
        let m = uniform_cell::<f64>(4, 4);
        let mut mirrored: Vec<(i64, i64, i64)> = Vec::new();
        let mut original: Vec<(i64, i64, i64)> = Vec::new();
        let key = |x: f64| (x * 1e6).round() as i64;
        for (e, _) in m.elements().iter().enumerate() {
            let p = m.element_coords(e);
            let cx = (p[0][0] + p[1][0] + p[2][0]) / 3.0;
            let cy = (p[0][1] + p[1][1] + p[2][1]) / 3.0;
            original.push((key(cx), key(cy), 0));
            mirrored.push((key(1.0 - cx), key(cy), 0));
        }
        original.sort();
        mirrored.sort();
        assert_eq!(original, mirrored);
    }
}
