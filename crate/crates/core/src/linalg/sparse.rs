//! Symmetric sparse matrices assembled from element blocks.
//!
//! A [`SymmetricPattern`] fixes the fill-reducing permutation, the
//! upper-triangular CSC layout of the permuted matrix, the symbolic LDLᵀ
//! analysis and the element scatter maps once. Each reassembly then only
//! touches a flat value array, and each factorisation reuses the symbolic data.

use std::sync::Arc;

use ldl::Marker;

use crate::scalar::Real;

use super::LinalgError;

const SKIP: usize = usize::MAX;

#[derive(Debug)]
pub struct SymmetricPattern {
    n: usize,
    /// `perm[new] = old`.
    perm: Vec<usize>,
    /// `perm_inv[old] = new`.
    perm_inv: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    element_dofs: Vec<Vec<Option<usize>>>,
    scatter: Vec<Vec<usize>>,
    etree: Vec<Option<usize>>,
    l_nz: Vec<usize>,
    nnz_l: usize,
}

impl SymmetricPattern {
    /// `element_dofs[e][a]` is the global unknown of local DOF `a`, or `None`
    /// when that DOF is eliminated.
    pub fn new(n: usize, element_dofs: Vec<Vec<Option<usize>>>) -> Result<Arc<Self>, LinalgError> {
        // Full adjacency (both triangles, diagonal included) for the ordering.
        let mut adj: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for dofs in &element_dofs {
            for a in dofs.iter().flatten() {
                if *a >= n {
                    return Err(LinalgError::Dimension { expected: n, got: *a + 1 });
                }
                for b in dofs.iter().flatten() {
                    adj[*a].push(*b);
                }
            }
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        let (perm, perm_inv) = if n == 0 {
            (Vec::new(), Vec::new())
        } else {
            let mut a_p = Vec::with_capacity(n + 1);
            let mut a_i = Vec::new();
            a_p.push(0usize);
            for list in &adj {
                a_i.extend_from_slice(list);
                a_p.push(a_i.len());
            }
            let (p, pinv, _) = amd::order(n, &a_p, &a_i, &amd::Control::default())
                .map_err(|s| LinalgError::Ordering(format!("{s:?}")))?;
            (p, pinv)
        };

        // Upper triangle of the permuted matrix, column by column.
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (old_i, list) in adj.iter().enumerate() {
            let i = perm_inv[old_i];
            for &old_j in list {
                let j = perm_inv[old_j];
                if i <= j {
                    cols[j].push(i);
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in cols.iter_mut() {
            col.sort_unstable();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }

        let mut pattern = SymmetricPattern {
            n,
            perm,
            perm_inv,
            col_ptr,
            row_idx,
            element_dofs: Vec::new(),
            scatter: Vec::new(),
            etree: vec![None; n],
            l_nz: vec![0; n],
            nnz_l: 0,
        };
        pattern.scatter = element_dofs
            .iter()
            .map(|dofs| {
                let nd = dofs.len();
                let mut map = vec![SKIP; nd * nd];
                for (a, da) in dofs.iter().enumerate() {
                    for (b, db) in dofs.iter().enumerate() {
                        if let (Some(da), Some(db)) = (da, db) {
                            let (i, j) = (pattern.perm_inv[*da], pattern.perm_inv[*db]);
                            if i <= j {
                                map[a * nd + b] = pattern.position(i, j);
                            }
                        }
                    }
                }
                map
            })
            .collect();
        pattern.element_dofs = element_dofs;

        if n > 0 {
            let mut work = vec![0usize; n];
            pattern.nnz_l = ldl::etree(
                n,
                &pattern.col_ptr,
                &pattern.row_idx,
                &mut work,
                &mut pattern.l_nz,
                &mut pattern.etree,
            )
            .map_err(|_| LinalgError::Ordering("elimination tree".into()))?;
        }
        Ok(Arc::new(pattern))
    }

    /// Position of permuted entry `(i, j)`, `i <= j`, in the value array.
    fn position(&self, i: usize, j: usize) -> usize {
        let col = &self.row_idx[self.col_ptr[j]..self.col_ptr[j + 1]];
        self.col_ptr[j] + col.binary_search(&i).expect("entry in pattern")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries (upper triangle).
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn element_dofs(&self, e: usize) -> &[Option<usize>] {
        &self.element_dofs[e]
    }

    pub fn element_count(&self) -> usize {
        self.element_dofs.len()
    }

    pub fn zero_values<T: Real>(&self) -> Vec<T> {
        vec![T::zero(); self.nnz()]
    }

    /// Adds the row-major element matrix `ke` of element `e`. The element
    /// matrix must be symmetric; only one triangle is read.
    pub fn add_element<T: Real>(&self, e: usize, ke: &[T], values: &mut [T]) {
        for (k, &pos) in self.scatter[e].iter().enumerate() {
            if pos != SKIP {
                values[pos] += ke[k];
            }
        }
    }

    /// Adds an element vector to a global vector in original ordering.
    pub fn add_element_vector<T: Real>(&self, e: usize, fe: &[T], global: &mut [T]) {
        for (a, dof) in self.element_dofs[e].iter().enumerate() {
            if let Some(d) = dof {
                global[*d] += fe[a];
            }
        }
    }

    /// `y = K x` in original ordering.
    pub fn matvec<T: Real>(&self, values: &[T], x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        for j in 0..self.n {
            let oj = self.perm[j];
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let oi = self.perm[self.row_idx[p]];
                let v = values[p];
                y[oi] += v * x[oj];
                if oi != oj {
                    y[oj] += v * x[oi];
                }
            }
        }
        y
    }

    /// Dense copy in original ordering, row-major.
    pub fn to_dense<T: Real>(&self, values: &[T]) -> Vec<T> {
        let n = self.n;
        let mut out = vec![T::zero(); n * n];
        for j in 0..n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let (oi, oj) = (self.perm[self.row_idx[p]], self.perm[j]);
                out[oi * n + oj] = values[p];
                out[oj * n + oi] = values[p];
            }
        }
        out
    }
}

/// Numeric LDLᵀ factors of a matrix with a given [`SymmetricPattern`].
#[derive(Debug, Clone)]
pub struct SparseLdl<T> {
    pattern: Arc<SymmetricPattern>,
    l_p: Vec<usize>,
    l_i: Vec<usize>,
    l_x: Vec<T>,
    d_inv: Vec<T>,
    positive_pivots: usize,
}

impl<T: Real> SparseLdl<T> {
    pub fn factor(pattern: &Arc<SymmetricPattern>, values: &[T]) -> Result<Self, LinalgError> {
        let n = pattern.n;
        if values.len() != pattern.nnz() {
            return Err(LinalgError::Dimension { expected: pattern.nnz(), got: values.len() });
        }
        let mut l_p = vec![0usize; n + 1];
        let mut l_i = vec![0usize; pattern.nnz_l];
        let mut l_x = vec![T::zero(); pattern.nnz_l];
        let mut d = vec![T::zero(); n];
        let mut d_inv = vec![T::zero(); n];
        let mut positive_pivots = 0;
        if n > 0 {
            let mut bwork = vec![Marker::Unused; n];
            let mut iwork = vec![0usize; 3 * n];
            let mut fwork = vec![T::zero(); n];
            positive_pivots = ldl::factor(
                n,
                &pattern.col_ptr,
                &pattern.row_idx,
                values,
                &mut l_p,
                &mut l_i,
                &mut l_x,
                &mut d,
                &mut d_inv,
                &pattern.l_nz,
                &pattern.etree,
                &mut bwork,
                &mut iwork,
                &mut fwork,
            )
            .map_err(|_| {
                let col = d.iter().position(|v| *v == T::zero()).unwrap_or(0);
                LinalgError::ZeroPivot(pattern.perm[col])
            })?;
        }
        Ok(Self { pattern: Arc::clone(pattern), l_p, l_i, l_x, d_inv, positive_pivots })
    }

    /// Solves `K x = rhs` in original ordering.
    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let n = self.pattern.n;
        let mut x: Vec<T> = (0..n).map(|i| rhs[self.pattern.perm[i]]).collect();
        if n > 0 {
            ldl::solve(n, &self.l_p, &self.l_i, &self.l_x, &self.d_inv, &mut x);
        }
        let mut out = vec![T::zero(); n];
        for (i, v) in x.into_iter().enumerate() {
            out[self.pattern.perm[i]] = v;
        }
        out
    }

    /// Count of positive pivots; equals the dimension for positive definite matrices.
    pub fn positive_pivots(&self) -> usize {
        self.positive_pivots
    }

    pub fn dim(&self) -> usize {
        self.pattern.n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1D chain of two-node "elements" with stiffness [[2,-1],[-1,2]] plus a ground spring.
    fn chain(n: usize) -> (Arc<SymmetricPattern>, Vec<f64>) {
        let dofs: Vec<Vec<Option<usize>>> = (0..n - 1).map(|i| vec![Some(i), Some(i + 1)]).collect();
        let p = SymmetricPattern::new(n, dofs).unwrap();
        let mut v = p.zero_values();
        for e in 0..n - 1 {
            p.add_element(e, &[2.0, -1.0, -1.0, 2.0], &mut v);
        }
        (p, v)
    }

    #[test]
    fn solve_matches_dense() {
        let (p, v) = chain(30);
        let x_true: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = p.matvec(&v, &x_true);
        let f = SparseLdl::factor(&p, &v).unwrap();
        let x = f.solve(&b);
        for (a, b) in x.iter().zip(&x_true) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(f.positive_pivots(), 30);
    }

    #[test]
    fn dense_copy_is_symmetric() {
        let (p, v) = chain(5);
        let d = p.to_dense(&v);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(d[i * 5 + j], d[j * 5 + i]);
            }
        }
        assert_eq!(d[0], 2.0);
        assert_eq!(d[2 * 5 + 2], 4.0);
    }

    #[test]
    fn eliminated_dofs_are_skipped() {
        let p = SymmetricPattern::new(1, vec![vec![Some(0), None]]).unwrap();
        let mut v = p.zero_values();
        p.add_element(0, &[3.0, 1.0, 1.0, 5.0], &mut v);
        assert_eq!(v, vec![3.0]);
    }

    #[test]
    fn singular_matrix_reports_pivot() {
        let p = SymmetricPattern::new(2, vec![vec![Some(0), Some(1)]]).unwrap();
        let mut v = p.zero_values();
        p.add_element(0, &[1.0, 1.0, 1.0, 1.0], &mut v);
        assert!(matches!(SparseLdl::factor(&p, &v), Err(LinalgError::ZeroPivot(_))));
    }
}
