use crate::scalar::Real;

use super::ElementKind;

/// Reference-element points and weights. Weights sum to the reference area.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule<T> {
    pub points: Vec<[T; 2]>,
    pub weights: Vec<T>,
}

impl<T: Real> QuadratureRule<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Three-point rule on the unit triangle, 2×2 Gauss on `[-1, 1]²`.
pub fn quadrature<T: Real>(kind: ElementKind) -> QuadratureRule<T> {
    match kind {
        ElementKind::Tri3 => {
            let a = T::lit(1.0 / 6.0);
            let b = T::lit(2.0 / 3.0);
            QuadratureRule { points: vec![[a, a], [b, a], [a, b]], weights: vec![a; 3] }
        }
        ElementKind::Quad4 => {
            let g = T::lit(1.0 / 3.0f64.sqrt());
            QuadratureRule {
                points: vec![[-g, -g], [g, -g], [g, g], [-g, g]],
                weights: vec![T::one(); 4],
            }
        }
    }
}

/// Nodal shape-function values; unused slots are zero.
pub fn shape_values<T: Real>(kind: ElementKind, xi: [T; 2]) -> [T; 4] {
    let one = T::one();
    match kind {
        ElementKind::Tri3 => [one - xi[0] - xi[1], xi[0], xi[1], T::zero()],
        ElementKind::Quad4 => {
            let q = T::lit(0.25);
            [
                q * (one - xi[0]) * (one - xi[1]),
                q * (one + xi[0]) * (one - xi[1]),
                q * (one + xi[0]) * (one + xi[1]),
                q * (one - xi[0]) * (one + xi[1]),
            ]
        }
    }
}

fn reference_derivatives<T: Real>(kind: ElementKind, xi: [T; 2]) -> [[T; 2]; 4] {
    let one = T::one();
    let z = T::zero();
    match kind {
        ElementKind::Tri3 => [[-one, -one], [one, z], [z, one], [z, z]],
        ElementKind::Quad4 => {
            let q = T::lit(0.25);
            [
                [-q * (one - xi[1]), -q * (one - xi[0])],
                [q * (one - xi[1]), -q * (one + xi[0])],
                [q * (one + xi[1]), q * (one + xi[0])],
                [-q * (one + xi[1]), q * (one - xi[0])],
            ]
        }
    }
}

/// Physical shape gradients and the Jacobian determinant at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeGradients<T> {
    pub grads: [[T; 2]; 4],
    pub det: T,
}

/// Gradients with respect to the coordinates `coords`; `det` may be
/// non-positive for inverted elements, in which case `grads` is meaningless.
pub fn shape_gradients<T: Real>(kind: ElementKind, coords: &[[T; 2]; 4], xi: [T; 2]) -> ShapeGradients<T> {
    let dref = reference_derivatives(kind, xi);
    let n = kind.node_count();
    let mut jac = [[T::zero(); 2]; 2];
    for a in 0..n {
        for i in 0..2 {
            for j in 0..2 {
                jac[i][j] += coords[a][i] * dref[a][j];
            }
        }
    }
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let mut grads = [[T::zero(); 2]; 4];
    if det != T::zero() {
        let inv = [[jac[1][1] / det, -jac[0][1] / det], [-jac[1][0] / det, jac[0][0] / det]];
        for a in 0..n {
            for j in 0..2 {
                grads[a][j] = dref[a][0] * inv[0][j] + dref[a][1] * inv[1][j];
            }
        }
    }
    ShapeGradients { grads, det }
}
