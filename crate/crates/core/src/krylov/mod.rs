//! Sparse kernels and restarted Krylov solvers.

mod block;
mod dense;
mod gmres;
mod sparse;

pub use block::{BlockSystem, Scaling, DEFAULT_EPS_DIAG};
pub use dense::{dense_inverse, dense_solve};
pub use gmres::{fgmres, gmres, KrylovStats, SolverConfig};
pub use sparse::CsrMatrix;

use rayon::prelude::*;

/// Rows above which CSR products are split across threads. Each row is still
/// summed sequentially, so results do not depend on the thread count.
const PARALLEL_ROWS: usize = 20_000;

/// A square linear map `y = A x`, possibly matrix-free.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Approximate inverse action `z ≈ A⁻¹ r`.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn nrows(&self) -> usize {
        CsrMatrix::nrows(self)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        if CsrMatrix::nrows(self) < PARALLEL_ROWS {
            self.spmv(x, y);
            return;
        }
        let (rp, ci, vals) = (self.row_ptr(), self.col_idx(), self.values());
        y.par_iter_mut().enumerate().for_each(|(r, yr)| {
            let mut s = 0.0;
            for k in rp[r]..rp[r + 1] {
                s += vals[k] * x[ci[k]];
            }
            *yr = s;
        });
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn nrows(&self) -> usize {
        (**self).nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply(x, y)
    }
}

impl<T: Preconditioner + ?Sized> Preconditioner for &T {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        (**self).apply(r, z)
    }
}

impl<T: Preconditioner + ?Sized> Preconditioner for Box<T> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        (**self).apply(r, z)
    }
}

/// Operator defined by a closure.
pub struct FnOperator<F> {
    n: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnOperator<F> {
    pub fn new(n: usize, f: F) -> Self {
        FnOperator { n, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for FnOperator<F> {
    fn nrows(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

/// Preconditioner defined by a closure.
pub struct FnPrecond<F>(pub F);

impl<F: Fn(&[f64], &mut [f64])> Preconditioner for FnPrecond<F> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        (self.0)(r, z)
    }
}

/// `z = r`
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPrecond;

impl Preconditioner for IdentityPrecond {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `b - A x`
pub fn residual(op: &dyn LinearOperator, b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; b.len()];
    op.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    r
}
