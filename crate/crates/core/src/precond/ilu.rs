//! Zero-fill incomplete LU factorisation.

use crate::error::{Error, Result};
use crate::krylov::{CsrMatrix, Preconditioner};

/// `L U ≈ A` on the sparsity pattern of `A`, with unit-diagonal `L` stored
/// below the diagonal and `U` on and above it.
#[derive(Clone, Debug)]
pub struct Ilu0 {
    lu: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    pub fn build(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidInput("ILU(0) needs a square matrix".into()));
        }
        let n = a.nrows();
        let mut lu = a.clone();
        let mut diag_pos = Vec::with_capacity(n);
        for i in 0..n {
            diag_pos.push(lu.position(i, i).ok_or(Error::ZeroPivot { row: i })?);
        }
        let row_ptr = lu.row_ptr().to_vec();
        let col_idx = lu.col_idx().to_vec();
        let vals = lu.values_mut();
        // Column -> position map of the current row.
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in row_ptr[i]..row_ptr[i + 1] {
                pos[col_idx[k]] = k;
            }
            for k in row_ptr[i]..diag_pos[i] {
                let j = col_idx[k];
                let pivot = vals[diag_pos[j]];
                if pivot == 0.0 {
                    return Err(Error::ZeroPivot { row: j });
                }
                let lij = vals[k] / pivot;
                vals[k] = lij;
                for kk in diag_pos[j] + 1..row_ptr[j + 1] {
                    let p = pos[col_idx[kk]];
                    if p != usize::MAX {
                        vals[p] -= lij * vals[kk];
                    }
                }
            }
            if vals[diag_pos[i]] == 0.0 {
                return Err(Error::ZeroPivot { row: i });
            }
            for k in row_ptr[i]..row_ptr[i + 1] {
                pos[col_idx[k]] = usize::MAX;
            }
        }
        Ok(Ilu0 { lu, diag_pos })
    }

    /// Forward and backward substitution.
    pub fn solve(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        let (rp, ci, v) = (self.lu.row_ptr(), self.lu.col_idx(), self.lu.values());
        for i in 0..n {
            let mut s = r[i];
            for k in rp[i]..self.diag_pos[i] {
                s -= v[k] * z[ci[k]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.diag_pos[i] + 1..rp[i + 1] {
                s -= v[k] * z[ci[k]];
            }
            z[i] = s / v[self.diag_pos[i]];
        }
    }
}

impl Preconditioner for Ilu0 {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.solve(r, z);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::dense_solve;

    #[test]
    fn triangular_input_is_solved_exactly() {
        let a = CsrMatrix::from_dense(&[vec![2.0, 1.0, 0.0], vec![0.0, 3.0, -1.0], vec![0.0, 0.0, 4.0]], 0.0);
        let ilu = Ilu0::build(&a).unwrap();
        let b = [1.0, 2.0, 3.0];
        let mut z = [0.0; 3];
        ilu.solve(&b, &mut z);
        let exact = dense_solve(&a.to_dense(), &b).unwrap();
        for (x, y) in z.iter().zip(&exact) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn tridiagonal_has_no_fill() {
        let n = 30;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t);
        let ilu = Ilu0::build(&a).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut z = vec![0.0; n];
        ilu.solve(&b, &mut z);
        let exact = dense_solve(&a.to_dense(), &b).unwrap();
        for (x, y) in z.iter().zip(&exact) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn structural_zero_diagonal_is_reported() {
        // [[A, B], [Bᵀ, 0]] without stabilisation.
        let a = CsrMatrix::from_dense(&[vec![2.0, 0.0, 1.0], vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0]], 0.0);
        match Ilu0::build(&a) {
            Err(Error::ZeroPivot { row }) => assert_eq!(row, 2),
            other => panic!("expected zero pivot, got {other:?}"),
        }
    }
}
