use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn to_matrix(a: &[Vec<f64>]) -> DMatrix<f64> {
    let n = a.len();
    let m = a.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| a[i][j])
}

/// Solves a dense square system with partial-pivoting LU.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.iter().any(|r| r.len() != b.len()) {
        return Err(Error::InvalidInput("dense_solve expects a square system".into()));
    }
    let lu = to_matrix(a).lu();
    lu.solve(&DVector::from_column_slice(b))
        .map(|x| x.as_slice().to_vec())
        .ok_or_else(|| Error::LinearSolver("singular dense matrix".into()))
}

pub fn dense_inverse(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let inv = to_matrix(a)
        .try_inverse()
        .ok_or_else(|| Error::LinearSolver("singular dense matrix".into()))?;
    Ok((0..inv.nrows()).map(|i| inv.row(i).iter().copied().collect()).collect())
}
