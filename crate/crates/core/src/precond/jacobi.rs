use crate::error::{Error, Result};
use crate::krylov::{CsrMatrix, Preconditioner};

/// `z = diag(A)⁻¹ r`
#[derive(Clone, Debug)]
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn build(a: &CsrMatrix) -> Result<Self> {
        let d = a.diagonal();
        if let Some(row) = d.iter().position(|&v| v == 0.0) {
            return Err(Error::ZeroDiagonal { row });
        }
        Ok(Jacobi { inv_diag: d.iter().map(|v| 1.0 / v).collect() })
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}
