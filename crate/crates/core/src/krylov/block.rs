//! The 2×2 velocity/pressure block system and its symmetric diagonal scaling.

use super::{CsrMatrix, LinearOperator};

pub const DEFAULT_EPS_DIAG: f64 = 1e-15;

/// `[[A, B], [C, D]] [x_v; x_p] = [r_v; r_p]`
#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub c: CsrMatrix,
    pub d: CsrMatrix,
    pub r_v: Vec<f64>,
    pub r_p: Vec<f64>,
    /// Global index `3 node + component` of each velocity unknown, when known.
    pub v_dofs: Option<Vec<usize>>,
}

impl BlockSystem {
    pub fn new(a: CsrMatrix, b: CsrMatrix, c: CsrMatrix, d: CsrMatrix, r_v: Vec<f64>, r_p: Vec<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        assert_eq!(d.nrows(), d.ncols());
        assert_eq!((b.nrows(), b.ncols()), (a.nrows(), d.nrows()));
        assert_eq!((c.nrows(), c.ncols()), (d.nrows(), a.nrows()));
        assert_eq!(r_v.len(), a.nrows());
        assert_eq!(r_p.len(), d.nrows());
        BlockSystem { a, b, c, d, r_v, r_p, v_dofs: None }
    }

    pub fn with_velocity_dofs(mut self, dofs: Vec<usize>) -> Self {
        assert_eq!(dofs.len(), self.nv());
        self.v_dofs = Some(dofs);
        self
    }

    pub fn nv(&self) -> usize {
        self.a.nrows()
    }

    pub fn np(&self) -> usize {
        self.d.nrows()
    }

    pub fn size(&self) -> usize {
        self.nv() + self.np()
    }

    /// `[r_v; r_p]`
    pub fn rhs(&self) -> Vec<f64> {
        let mut r = self.r_v.clone();
        r.extend_from_slice(&self.r_p);
        r
    }

    pub fn to_monolithic(&self) -> CsrMatrix {
        CsrMatrix::from_blocks(&self.a, &self.b, &self.c, &self.d)
    }

    /// Symmetric scaling `W K W` with `W_ii = |K_ii|^(-1/2)`, or 1 where
    /// `|K_ii| < eps_diag`. Returns the scaled system and `W`.
    pub fn diag_scale(&self, eps_diag: f64) -> (BlockSystem, Scaling) {
        let w = |d: f64| if d.abs() < eps_diag { 1.0 } else { 1.0 / d.abs().sqrt() };
        let wv: Vec<f64> = self.a.diagonal().into_iter().map(w).collect();
        let wp: Vec<f64> = self.d.diagonal().into_iter().map(w).collect();
        let scaled = BlockSystem {
            a: self.a.scale_rows_cols(&wv, &wv),
            b: self.b.scale_rows_cols(&wv, &wp),
            c: self.c.scale_rows_cols(&wp, &wv),
            d: self.d.scale_rows_cols(&wp, &wp),
            r_v: self.r_v.iter().zip(&wv).map(|(r, w)| r * w).collect(),
            r_p: self.r_p.iter().zip(&wp).map(|(r, w)| r * w).collect(),
            v_dofs: self.v_dofs.clone(),
        };
        (scaled, Scaling { w_v: wv, w_p: wp })
    }
}

impl LinearOperator for BlockSystem {
    fn nrows(&self) -> usize {
        self.size()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nv = self.nv();
        let (xv, xp) = x.split_at(nv);
        let (yv, yp) = y.split_at_mut(nv);
        self.a.apply(xv, yv);
        self.b.spmv_add(1.0, xp, yv);
        self.c.apply(xv, yp);
        self.d.spmv_add(1.0, xp, yp);
    }
}

/// Diagonal scaling factors of the velocity and pressure unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaling {
    pub w_v: Vec<f64>,
    pub w_p: Vec<f64>,
}

impl Scaling {
    pub fn w(&self) -> Vec<f64> {
        let mut w = self.w_v.clone();
        w.extend_from_slice(&self.w_p);
        w
    }

    /// Maps a solution of the scaled system back: `x = W x*`.
    pub fn unscale(&self, x_scaled: &mut [f64]) {
        for (xi, wi) in x_scaled.iter_mut().zip(self.w_v.iter().chain(&self.w_p)) {
            *xi *= wi;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::dense_solve;
    use rand::{Rng, SeedableRng};

    fn split(m: &[Vec<f64>], nv: usize) -> BlockSystem {
        let n = m.len();
        let pick = |r0: usize, r1: usize, c0: usize, c1: usize| {
            let rows: Vec<Vec<f64>> = (r0..r1).map(|i| m[i][c0..c1].to_vec()).collect();
            CsrMatrix::from_dense(&rows, 0.0)
        };
        BlockSystem::new(
            pick(0, nv, 0, nv),
            pick(0, nv, nv, n),
            pick(nv, n, 0, nv),
            pick(nv, n, nv, n),
            (0..nv).map(|i| i as f64 - 1.5).collect(),
            (nv..n).map(|i| (i as f64).sin()).collect(),
        )
    }

    #[test]
    fn diagonal_system_scales_to_identity() {
        let s = BlockSystem::new(
            CsrMatrix::from_diagonal(&[4.0]),
            CsrMatrix::zeros(1, 1),
            CsrMatrix::zeros(1, 1),
            CsrMatrix::from_diagonal(&[9.0]),
            vec![1.0],
            vec![1.0],
        );
        let (t, w) = s.diag_scale(DEFAULT_EPS_DIAG);
        assert_eq!(t.to_monolithic().to_dense(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(w.w(), vec![0.5, 1.0 / 3.0]);
    }

    #[test]
    fn tiny_diagonal_gets_unit_weight() {
        let s = BlockSystem::new(
            CsrMatrix::from_diagonal(&[1e-16]),
            CsrMatrix::from_dense(&[vec![1.0]], 0.0),
            CsrMatrix::from_dense(&[vec![1.0]], 0.0),
            CsrMatrix::zeros(1, 1),
            vec![1.0],
            vec![1.0],
        );
        let (_, w) = s.diag_scale(DEFAULT_EPS_DIAG);
        assert_eq!(w.w(), vec![1.0, 1.0]);
    }

    #[test]
    fn scaled_solve_unscales_to_direct_solution() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(17);
        let mut m = vec![vec![0.0; 10]; 10];
        for (i, row) in m.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            row[i] += 10.0f64.powi(i as i32 % 4);
        }
        let s = split(&m, 6);
        let x = dense_solve(&m, &s.rhs()).unwrap();
        let (t, w) = s.diag_scale(DEFAULT_EPS_DIAG);
        let mut xs = dense_solve(&t.to_monolithic().to_dense(), &t.rhs()).unwrap();
        w.unscale(&mut xs);
        for (a, b) in xs.iter().zip(&x) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}
