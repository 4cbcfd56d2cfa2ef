//! Polar decomposition of in-plane deformation gradients.

use crate::scalar::Real;
use crate::tensor::Tensor2;

use super::CsaError;

/// Rotation and right stretch of `F = R U`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Polar<T> {
    pub rotation: Tensor2<T>,
    pub stretch: Tensor2<T>,
}

/// Splits the in-plane block of `f` into `R U` with `U = sqrt(FᵀF)`.
///
/// For a 2×2 symmetric positive definite `C` the square root has the closed
/// form `(C + sqrt(det C) I) / sqrt(tr C + 2 sqrt(det C))`, which equals the
/// spectral square root. The out-of-plane entries of both factors are one.
pub fn polar_decompose<T: Real>(f: &Tensor2<T>) -> Result<Polar<T>, CsaError> {
    let [[a, b], [c, d]] = f.plane();
    let det = a * d - b * c;
    if !(det > T::zero()) {
        return Err(CsaError::NonPositiveJacobian(det.as_f64()));
    }
    let c11 = a * a + c * c;
    let c22 = b * b + d * d;
    let c12 = a * b + c * d;
    // sqrt(det C) = det F for det F > 0.
    let s = det;
    let norm = (c11 + c22 + s + s).sqrt();
    let u = [[(c11 + s) / norm, c12 / norm], [c12 / norm, (c22 + s) / norm]];
    let u_det = u[0][0] * u[1][1] - u[0][1] * u[1][0];
    let u_inv = [[u[1][1] / u_det, -u[0][1] / u_det], [-u[1][0] / u_det, u[0][0] / u_det]];
    let r = [
        [a * u_inv[0][0] + b * u_inv[1][0], a * u_inv[0][1] + b * u_inv[1][1]],
        [c * u_inv[0][0] + d * u_inv[1][0], c * u_inv[0][1] + d * u_inv[1][1]],
    ];
    Ok(Polar { rotation: Tensor2::from_plane(r, T::one()), stretch: Tensor2::from_plane(u, T::one()) })
}
