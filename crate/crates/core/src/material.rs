//! Compressible neo-Hookean material: stresses, spatial tangents and their
//! directional derivatives along a velocity-gradient perturbation.
//!
//! All kernels act on a [`DeformationState`] whose Jacobian is known to be
//! positive. A perturbation with velocity gradient `G` moves the deformation
//! gradient along `F(t) = (I + t G) F`; the `d_*` kernels return the exact
//! derivative at `t = 0`.

use thiserror::Error;

use crate::scalar::Real;
use crate::tensor::{kron, Tensor2, Tensor4};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("non-positive Jacobian {0}")]
    NonPositiveJacobian(f64),
    #[error("material constant {name} must be positive and finite, got {value}")]
    InvalidConstant { name: &'static str, value: f64 },
}

/// Bulk and shear moduli of one material phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeoHookean<T> {
    bulk: T,
    shear: T,
}

impl<T: Real> NeoHookean<T> {
    pub fn new(bulk: T, shear: T) -> Result<Self, MaterialError> {
        for (name, value) in [("bulk", bulk), ("shear", shear)] {
            if !(value > T::zero() && value.is_finite()) {
                return Err(MaterialError::InvalidConstant { name, value: value.as_f64() });
            }
        }
        Ok(Self { bulk, shear })
    }

    pub fn bulk(&self) -> T {
        self.bulk
    }

    pub fn shear(&self) -> T {
        self.shear
    }

    /// Cauchy stress `K(J-1) I + μ J^{-5/3} (b - tr b / 3 I)`.
    pub fn cauchy_stress(&self, s: &DeformationState<T>) -> Tensor2<T> {
        let c = self.shear * s.j.powf(T::lit(-5.0 / 3.0));
        let third = s.tr_b / T::lit(3.0);
        let mut out = s.b * c;
        let vol = self.bulk * (s.j - T::one());
        for i in 0..3 {
            out.0[i][i] += vol - c * third;
        }
        out
    }

    /// Kirchhoff stress `J σ`.
    pub fn kirchhoff_stress(&self, s: &DeformationState<T>) -> Tensor2<T> {
        let c = self.shear * s.j.powf(T::lit(-2.0 / 3.0));
        let third = s.tr_b / T::lit(3.0);
        let mut out = s.b * c;
        let vol = self.bulk * s.j * (s.j - T::one());
        for i in 0..3 {
            out.0[i][i] += vol - c * third;
        }
        out
    }

    /// Spatial elasticity tensor of the Truesdell rate of Cauchy stress,
    /// evaluated from its closed form.
    pub fn tangent_d(&self, s: &DeformationState<T>) -> Tensor4<T> {
        let k = self.bulk;
        let j = s.j;
        let c = self.shear * j.powf(T::lit(-5.0 / 3.0));
        let tr_b = s.tr_b;
        let b = &s.b.0;
        let two_ninths = T::lit(2.0 / 9.0);
        let two_thirds = T::lit(2.0 / 3.0);
        let third = T::lit(1.0 / 3.0);
        let two = T::lit(2.0);
        Tensor4::from_fn(|i, jj, kk, l| {
            let dd = kron::<T>(i, jj) * kron(kk, l);
            let sym = kron::<T>(i, kk) * kron(l, jj) + kron::<T>(i, l) * kron(jj, kk);
            k * (two * j - T::one()) * dd - k * (j - T::one()) * sym
                + c * (two_ninths * tr_b * dd
                    - two_thirds * (b[i][jj] * kron(kk, l) + kron::<T>(i, jj) * b[kk][l])
                    + third * tr_b * sym)
        })
    }

    /// Consistent spatial tangent `A_ijkl = D_ijkl + σ_jl δ_ik`, so that the
    /// linearised weak form reads `∫ A_ijkl ∂_l u_k ∂_j v_i`.
    pub fn tangent_a(&self, s: &DeformationState<T>) -> Tensor4<T> {
        let sigma = self.cauchy_stress(s);
        let mut a = self.tangent_d(s);
        add_geometric(&mut a, &sigma);
        a
    }

    /// Stress and consistent tangent together, sharing intermediate work.
    pub fn stress_and_tangent(&self, s: &DeformationState<T>) -> (Tensor2<T>, Tensor4<T>) {
        let sigma = self.cauchy_stress(s);
        let mut a = self.tangent_d(s);
        add_geometric(&mut a, &sigma);
        (sigma, a)
    }

    /// Jaumann-rate modulus of Kirchhoff stress.
    pub fn jaumann_moduli(&self, s: &DeformationState<T>) -> Tensor4<T> {
        let vol = self.bulk * (T::lit(2.0) * s.j - T::one()) * s.j;
        let mut out = bracket(&s.b).scale(self.shear * s.j.powf(T::lit(-2.0 / 3.0)));
        add_dd(&mut out, vol);
        out
    }

    /// Truesdell-rate modulus of Kirchhoff stress; equals `J · tangent_d`.
    pub fn truesdell_moduli(&self, s: &DeformationState<T>) -> Tensor4<T> {
        self.jaumann_moduli(s) - sym4(&self.kirchhoff_stress(s))
    }

    /// Derivative of the Kirchhoff stress along `G`.
    pub fn d_kirchhoff_stress(&self, s: &DeformationState<T>, g: &Tensor2<T>) -> Tensor2<T> {
        let tr_g = g.trace();
        let c = self.shear * s.j.powf(T::lit(-2.0 / 3.0));
        let db = g.dot(&s.b) + s.b.dot(&g.transpose());
        let dev = |m: &Tensor2<T>| {
            let mut d = *m;
            let t = m.trace() / T::lit(3.0);
            for i in 0..3 {
                d.0[i][i] -= t;
            }
            d
        };
        let mut out = dev(&s.b) * (-T::lit(2.0 / 3.0) * c * tr_g) + dev(&db) * c;
        let vol = self.bulk * (T::lit(2.0) * s.j - T::one()) * s.j * tr_g;
        for i in 0..3 {
            out.0[i][i] += vol;
        }
        out
    }

    /// Derivative of the Cauchy stress along `G`.
    pub fn d_cauchy_stress(&self, s: &DeformationState<T>, g: &Tensor2<T>) -> Tensor2<T> {
        let tau = self.kirchhoff_stress(s);
        let dtau = self.d_kirchhoff_stress(s, g);
        (dtau - tau * g.trace()) * (T::one() / s.j)
    }

    /// Derivative of the Jaumann modulus along `G`.
    pub fn d_jaumann_moduli(&self, s: &DeformationState<T>, g: &Tensor2<T>) -> Tensor4<T> {
        let tr_g = g.trace();
        let c = self.shear * s.j.powf(T::lit(-2.0 / 3.0));
        let db = g.dot(&s.b) + s.b.dot(&g.transpose());
        let mut out = bracket(&s.b).scale(-T::lit(2.0 / 3.0) * c * tr_g);
        out.axpy(c, &bracket(&db));
        add_dd(&mut out, self.bulk * (T::lit(4.0) * s.j - T::one()) * s.j * tr_g);
        out
    }

    /// Derivative of the Truesdell modulus along `G`.
    pub fn d_truesdell_moduli(&self, s: &DeformationState<T>, g: &Tensor2<T>) -> Tensor4<T> {
        self.d_jaumann_moduli(s, g) - sym4(&self.d_kirchhoff_stress(s, g))
    }

    /// Derivative of the consistent tangent [`Self::tangent_a`] along `G`.
    pub fn d_tangent_a(&self, s: &DeformationState<T>, g: &Tensor2<T>) -> Tensor4<T> {
        let tr_g = g.trace();
        let inv_j = T::one() / s.j;
        let mut out = self.d_truesdell_moduli(s, g);
        out.axpy(-tr_g, &self.truesdell_moduli(s));
        let mut out = out.scale(inv_j);
        add_geometric(&mut out, &self.d_cauchy_stress(s, g));
        out
    }
}

/// Deformation gradient with its cached Jacobian and left Cauchy-Green tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeformationState<T> {
    f: Tensor2<T>,
    j: T,
    b: Tensor2<T>,
    tr_b: T,
}

impl<T: Real> DeformationState<T> {
    pub fn new(f: Tensor2<T>) -> Result<Self, MaterialError> {
        let j = f.det();
        if !(j > T::zero() && j.is_finite()) {
            return Err(MaterialError::NonPositiveJacobian(j.as_f64()));
        }
        let b = f.dot(&f.transpose());
        Ok(Self { f, j, tr_b: b.trace(), b })
    }

    pub fn identity() -> Self {
        Self::new(Tensor2::identity()).expect("identity is admissible")
    }

    /// State reached by `(I + t G) F`.
    pub fn perturbed(&self, g: &Tensor2<T>, t: T) -> Result<Self, MaterialError> {
        Self::new((Tensor2::identity() + *g * t).dot(&self.f))
    }

    pub fn deformation_gradient(&self) -> &Tensor2<T> {
        &self.f
    }

    pub fn jacobian(&self) -> T {
        self.j
    }

    pub fn left_cauchy_green(&self) -> &Tensor2<T> {
        &self.b
    }
}

/// `D_ijkl += σ_jl δ_ik`.
fn add_geometric<T: Real>(a: &mut Tensor4<T>, sigma: &Tensor2<T>) {
    for i in 0..3 {
        for j in 0..3 {
            for l in 0..3 {
                a.add_at(i, j, i, l, sigma.0[j][l]);
            }
        }
    }
}

fn add_dd<T: Real>(a: &mut Tensor4<T>, s: T) {
    for i in 0..3 {
        for k in 0..3 {
            a.add_at(i, i, k, k, s);
        }
    }
}

/// `½ (δ_ik X_lj + X_il δ_jk + δ_il X_kj + X_ik δ_jl)`.
pub(crate) fn sym4<T: Real>(x: &Tensor2<T>) -> Tensor4<T> {
    let half = T::lit(0.5);
    let x = &x.0;
    Tensor4::from_fn(|i, j, k, l| {
        half * (kron::<T>(i, k) * x[l][j]
            + x[i][l] * kron(j, k)
            + kron::<T>(i, l) * x[k][j]
            + x[i][k] * kron(j, l))
    })
}

/// Linear map `b ↦ 2/9 tr b δδ − 2/3 (b⊗δ + δ⊗b) + sym4(b)` shared by the
/// isochoric Jaumann modulus and its derivative.
fn bracket<T: Real>(b: &Tensor2<T>) -> Tensor4<T> {
    let tr = b.trace();
    let two_ninths = T::lit(2.0 / 9.0) * tr;
    let two_thirds = T::lit(2.0 / 3.0);
    let mut out = sym4(b);
    for i in 0..3 {
        for k in 0..3 {
            out.add_at(i, i, k, k, two_ninths);
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out.add_at(i, j, k, k, -two_thirds * b.0[i][j]);
                out.add_at(k, k, i, j, -two_thirds * b.0[i][j]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat() -> NeoHookean<f64> {
        NeoHookean::new(5.7e9, 1.35e9).unwrap()
    }

    #[test]
    fn rejects_bad_constants() {
        assert!(NeoHookean::new(-1.0, 1.0).is_err());
        assert!(NeoHookean::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn rejects_inverted_state() {
        let f = Tensor2::from_plane([[1.0, 0.0], [0.0, -0.5]], 1.0);
        assert!(matches!(DeformationState::new(f), Err(MaterialError::NonPositiveJacobian(_))));
    }

    #[test]
    fn undeformed_tangent_is_lame() {
        let m = mat();
        let d = m.tangent_d(&DeformationState::identity());
        let lambda = m.bulk() - 2.0 * m.shear() / 3.0;
        let iso = Tensor4::isotropic(lambda, m.shear());
        assert!((d - iso).max_abs() <= 1e-12 * iso.max_abs());
    }

    #[test]
    fn kirchhoff_is_j_times_cauchy() {
        let m = mat();
        let s = DeformationState::new(Tensor2::from_plane([[1.1, 0.2], [-0.05, 0.93]], 1.0)).unwrap();
        let diff = m.kirchhoff_stress(&s) - m.cauchy_stress(&s) * s.jacobian();
        assert!(diff.max_abs() < 1e-6);
    }
}
