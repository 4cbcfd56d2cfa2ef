//! Dense second- and fourth-order tensors in three dimensions.
//!
//! Plane-strain problems embed their in-plane 2×2 blocks into these 3×3
//! containers with the out-of-plane stretch fixed at one, which keeps the
//! constitutive kernels dimension agnostic.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use crate::scalar::Real;

/// A 3×3 tensor stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tensor2<T>(pub [[T; 3]; 3]);

/// Symmetric 3×3 tensors (stresses, strains) share the dense container.
pub type SymTensor2<T> = Tensor2<T>;

impl<T: Real> Default for Tensor2<T> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<T: Real> Tensor2<T> {
    pub fn zero() -> Self {
        Tensor2([[T::zero(); 3]; 3])
    }

    pub fn identity() -> Self {
        let mut t = Self::zero();
        for i in 0..3 {
            t.0[i][i] = T::one();
        }
        t
    }

    /// Embeds an in-plane block; the (3,3) entry is `out_of_plane`.
    pub fn from_plane(m: [[T; 2]; 2], out_of_plane: T) -> Self {
        let z = T::zero();
        Tensor2([
            [m[0][0], m[0][1], z],
            [m[1][0], m[1][1], z],
            [z, z, out_of_plane],
        ])
    }

    /// Upper-left 2×2 block.
    pub fn plane(&self) -> [[T; 2]; 2] {
        [[self.0[0][0], self.0[0][1]], [self.0[1][0], self.0[1][1]]]
    }

    /// Outer product `a ⊗ b`.
    pub fn outer(a: [T; 3], b: [T; 3]) -> Self {
        let mut t = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                t.0[i][j] = a[i] * b[j];
            }
        }
        t
    }

    /// Unit dyad `e_i ⊗ e_j`.
    pub fn unit(i: usize, j: usize) -> Self {
        let mut t = Self::zero();
        t.0[i][j] = T::one();
        t
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                t.0[i][j] = self.0[j][i];
            }
        }
        t
    }

    pub fn trace(&self) -> T {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn det(&self) -> T {
        let a = &self.0;
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    /// Inverse via the adjugate; `None` when the determinant vanishes.
    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == T::zero() || !d.is_finite() {
            return None;
        }
        let a = &self.0;
        let mut c = Self::zero();
        c.0[0][0] = a[1][1] * a[2][2] - a[1][2] * a[2][1];
        c.0[0][1] = a[0][2] * a[2][1] - a[0][1] * a[2][2];
        c.0[0][2] = a[0][1] * a[1][2] - a[0][2] * a[1][1];
        c.0[1][0] = a[1][2] * a[2][0] - a[1][0] * a[2][2];
        c.0[1][1] = a[0][0] * a[2][2] - a[0][2] * a[2][0];
        c.0[1][2] = a[0][2] * a[1][0] - a[0][0] * a[1][2];
        c.0[2][0] = a[1][0] * a[2][1] - a[1][1] * a[2][0];
        c.0[2][1] = a[0][1] * a[2][0] - a[0][0] * a[2][1];
        c.0[2][2] = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        Some(c * (T::one() / d))
    }

    /// Matrix product `self · rhs`.
    pub fn dot(&self, rhs: &Self) -> Self {
        let mut t = Self::zero();
        for i in 0..3 {
            for k in 0..3 {
                let a = self.0[i][k];
                if a == T::zero() {
                    continue;
                }
                for j in 0..3 {
                    t.0[i][j] += a * rhs.0[k][j];
                }
            }
        }
        t
    }

    pub fn apply(&self, v: [T; 3]) -> [T; 3] {
        let mut out = [T::zero(); 3];
        for i in 0..3 {
            out[i] = self.0[i][0] * v[0] + self.0[i][1] * v[1] + self.0[i][2] * v[2];
        }
        out
    }

    /// Full contraction `self : rhs = Σ a_ij b_ij`.
    pub fn ddot(&self, rhs: &Self) -> T {
        let mut s = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                s += self.0[i][j] * rhs.0[i][j];
            }
        }
        s
    }

    pub fn norm(&self) -> T {
        self.ddot(self).sqrt()
    }

    pub fn sym(&self) -> Self {
        let half = T::lit(0.5);
        (*self + self.transpose()) * half
    }

    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        for row in &self.0 {
            for &v in row {
                m = m.max(v.abs());
            }
        }
        m
    }

    /// Rotation `R · self · Rᵀ`.
    pub fn rotate(&self, r: &Self) -> Self {
        r.dot(self).dot(&r.transpose())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let mut t = *self;
        for row in t.0.iter_mut() {
            for v in row.iter_mut() {
                *v = f(*v);
            }
        }
        t
    }

    /// Converts between scalar types through `f64`.
    pub fn cast<U: Real>(&self) -> Tensor2<U> {
        let mut t = Tensor2::<U>::zero();
        for i in 0..3 {
            for j in 0..3 {
                t.0[i][j] = U::lit(self.0[i][j].as_f64());
            }
        }
        t
    }
}

impl<T> Index<(usize, usize)> for Tensor2<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.0[i][j]
    }
}

impl<T> IndexMut<(usize, usize)> for Tensor2<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.0[i][j]
    }
}

impl<T: Real> Add for Tensor2<T> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl<T: Real> AddAssign for Tensor2<T> {
    fn add_assign(&mut self, rhs: Self) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += rhs.0[i][j];
            }
        }
    }
}

impl<T: Real> Sub for Tensor2<T> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self -= rhs;
        self
    }
}

impl<T: Real> SubAssign for Tensor2<T> {
    fn sub_assign(&mut self, rhs: Self) {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] -= rhs.0[i][j];
            }
        }
    }
}

impl<T: Real> Mul<T> for Tensor2<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.map(|v| v * s)
    }
}

impl<T: Real> Neg for Tensor2<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.map(|v| -v)
    }
}

/// A dense 3×3×3×3 tensor, index order `(i, j, k, l)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tensor4<T>(pub [T; 81]);

#[inline(always)]
const fn idx4(i: usize, j: usize, k: usize, l: usize) -> usize {
    ((i * 3 + j) * 3 + k) * 3 + l
}

impl<T: Real> Default for Tensor4<T> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<T: Real> Tensor4<T> {
    pub fn zero() -> Self {
        Tensor4([T::zero(); 81])
    }

    pub fn from_fn(f: impl Fn(usize, usize, usize, usize) -> T) -> Self {
        let mut t = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        t.0[idx4(i, j, k, l)] = f(i, j, k, l);
                    }
                }
            }
        }
        t
    }

    /// Isotropic tensor `λ δij δkl + μ (δik δjl + δil δjk)`.
    pub fn isotropic(lambda: T, mu: T) -> Self {
        let d = |a: usize, b: usize| if a == b { T::one() } else { T::zero() };
        Self::from_fn(|i, j, k, l| lambda * d(i, j) * d(k, l) + mu * (d(i, k) * d(j, l) + d(i, l) * d(j, k)))
    }

    #[inline(always)]
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> T {
        self.0[idx4(i, j, k, l)]
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, k: usize, l: usize, v: T) {
        self.0[idx4(i, j, k, l)] = v;
    }

    #[inline(always)]
    pub fn add_at(&mut self, i: usize, j: usize, k: usize, l: usize, v: T) {
        self.0[idx4(i, j, k, l)] += v;
    }

    /// Right contraction `(A : X)_ij = A_ijkl X_kl`.
    pub fn contract(&self, x: &Tensor2<T>) -> Tensor2<T> {
        let mut out = Tensor2::zero();
        for i in 0..3 {
            for j in 0..3 {
                let base = idx4(i, j, 0, 0);
                let mut s = T::zero();
                for k in 0..3 {
                    for l in 0..3 {
                        s += self.0[base + k * 3 + l] * x.0[k][l];
                    }
                }
                out.0[i][j] = s;
            }
        }
        out
    }

    /// Bilinear form `Y_ij A_ijkl X_kl`.
    pub fn bilinear(&self, y: &Tensor2<T>, x: &Tensor2<T>) -> T {
        self.contract(x).ddot(y)
    }

    /// Push-forward `R_ip R_jq R_kr R_ls A_pqrs`.
    pub fn rotate(&self, r: &Tensor2<T>) -> Self {
        // Contract one index at a time: four passes of 81·3 products each.
        let mut a = *self;
        for slot in 0..4 {
            let mut b = Self::zero();
            for i in 0..3 {
                for j in 0..3 {
                    for k in 0..3 {
                        for l in 0..3 {
                            let mut s = T::zero();
                            for p in 0..3 {
                                let (rr, src) = match slot {
                                    0 => (r.0[i][p], a.get(p, j, k, l)),
                                    1 => (r.0[j][p], a.get(i, p, k, l)),
                                    2 => (r.0[k][p], a.get(i, j, p, l)),
                                    _ => (r.0[l][p], a.get(i, j, k, p)),
                                };
                                s += rr * src;
                            }
                            b.set(i, j, k, l, s);
                        }
                    }
                }
            }
            a = b;
        }
        a
    }

    pub fn max_abs(&self) -> T {
        self.0.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Largest `|A_ijkl - A_klij|`.
    pub fn major_asymmetry(&self) -> T {
        let mut m = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        m = m.max((self.get(i, j, k, l) - self.get(k, l, i, j)).abs());
                    }
                }
            }
        }
        m
    }

    pub fn scale(&self, s: T) -> Self {
        let mut t = *self;
        for v in t.0.iter_mut() {
            *v *= s;
        }
        t
    }

    /// `self += s · other`.
    pub fn axpy(&mut self, s: T, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += s * *b;
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        let mut t = Tensor4::<U>::zero();
        for (a, b) in t.0.iter_mut().zip(self.0.iter()) {
            *a = U::lit(b.as_f64());
        }
        t
    }
}

impl<T: Real> Add for Tensor4<T> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self.axpy(T::one(), &rhs);
        self
    }
}

impl<T: Real> Sub for Tensor4<T> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self.axpy(-T::one(), &rhs);
        self
    }
}

/// Kronecker delta.
#[inline(always)]
pub fn kron<T: Real>(i: usize, j: usize) -> T {
    if i == j {
        T::one()
    } else {
        T::zero()
    }
}
