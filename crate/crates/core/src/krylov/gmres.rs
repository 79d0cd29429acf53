//! Restarted GMRES and flexible GMRES with right preconditioning.

use serde::{Deserialize, Serialize};

use super::{axpy, dot, norm2, residual, LinearOperator, Preconditioner};

/// Threshold on `max_i |v_i · w| / |w|` after the first Gram–Schmidt sweep
/// that triggers a second sweep.
const REORTH_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Krylov subspace size between restarts.
    pub restart: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { restart: 50, max_iters: 200, rel_tol: 1e-8, abs_tol: 1e-50 }
    }
}

impl SolverConfig {
    pub fn new(restart: usize, max_iters: usize, rel_tol: f64, abs_tol: f64) -> Self {
        SolverConfig { restart, max_iters, rel_tol, abs_tol }
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KrylovStats {
    /// Arnoldi steps taken, summed over restart cycles.
    pub iterations: usize,
    pub converged: bool,
    /// Residual norm at entry followed by the least-squares estimate after
    /// every iteration.
    pub residual_history: Vec<f64>,
    /// True residual norm of the returned iterate.
    pub final_residual: f64,
    /// Subdiagonal Hessenberg entries, one per iteration.
    pub arnoldi_norms: Vec<f64>,
}

/// Right-preconditioned restarted GMRES. `x` holds the initial guess on entry
/// and the best iterate on return.
pub fn gmres(
    op: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    pc: &dyn Preconditioner,
    cfg: &SolverConfig,
) -> KrylovStats {
    solve(op, b, x, pc, cfg, false)
}

/// Flexible GMRES: the preconditioner may change between iterations because
/// the preconditioned directions are stored explicitly.
pub fn fgmres(
    op: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    pc: &dyn Preconditioner,
    cfg: &SolverConfig,
) -> KrylovStats {
    solve(op, b, x, pc, cfg, true)
}

fn solve(
    op: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    pc: &dyn Preconditioner,
    cfg: &SolverConfig,
    flexible: bool,
) -> KrylovStats {
    let n = b.len();
    assert_eq!(op.nrows(), n, "operator and right-hand side sizes differ");
    assert_eq!(x.len(), n, "initial guess has the wrong size");
    let m = cfg.restart.max(1);

    let mut stats = KrylovStats::default();
    let mut r = residual(op, b, x);
    let mut beta = norm2(&r);
    let target = (cfg.rel_tol * beta).max(cfg.abs_tol);
    stats.residual_history.push(beta);
    stats.final_residual = beta;
    if beta <= target || !beta.is_finite() || cfg.max_iters == 0 {
        stats.converged = beta <= target;
        return stats;
    }

    let mut v: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(if flexible { m } else { 0 });
    let mut h = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut zj = vec![0.0; n];
    let mut w = vec![0.0; n];

    loop {
        v.clear();
        z.clear();
        v.push(r.iter().map(|ri| ri / beta).collect());
        g.iter_mut().for_each(|gi| *gi = 0.0);
        g[0] = beta;
        let mut k = 0;
        let mut breakdown = false;

        for j in 0..m {
            pc.apply(&v[j], &mut zj);
            op.apply(&zj, &mut w);
            if flexible {
                z.push(zj.clone());
            }

            for i in 0..=j {
                let hij = dot(&w, &v[i]);
                axpy(-hij, &v[i], &mut w);
                h[i][j] = hij;
            }
            let mut wnorm = norm2(&w);
            let worst = (0..=j).map(|i| dot(&w, &v[i]).abs()).fold(0.0, f64::max);
            if wnorm > 0.0 && worst > REORTH_TOL * wnorm {
                for i in 0..=j {
                    let c = dot(&w, &v[i]);
                    axpy(-c, &v[i], &mut w);
                    h[i][j] += c;
                }
                wnorm = norm2(&w);
            }
            h[j + 1][j] = wnorm;
            stats.arnoldi_norms.push(wnorm);

            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let denom = h[j][j].hypot(h[j + 1][j]);
            if denom == 0.0 {
                // The new direction is in the null space of the preconditioned
                // operator; nothing more can be gained in this cycle.
                breakdown = true;
                break;
            }
            cs[j] = h[j][j] / denom;
            sn[j] = h[j + 1][j] / denom;
            h[j][j] = denom;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];

            k = j + 1;
            stats.iterations += 1;
            let est = g[j + 1].abs();
            stats.residual_history.push(est);
            if wnorm <= f64::EPSILON * beta {
                breakdown = true;
            }
            if est <= target || breakdown || stats.iterations >= cfg.max_iters || !est.is_finite() {
                break;
            }
            v.push(w.iter().map(|wi| wi / wnorm).collect());
        }

        if k > 0 {
            let mut y = vec![0.0; k];
            for i in (0..k).rev() {
                let mut s = g[i];
                for l in i + 1..k {
                    s -= h[i][l] * y[l];
                }
                y[i] = s / h[i][i];
            }
            if flexible {
                for (yi, zi) in y.iter().zip(&z) {
                    axpy(*yi, zi, x);
                }
            } else {
                let mut comb = vec![0.0; n];
                for (yi, vi) in y.iter().zip(&v) {
                    axpy(*yi, vi, &mut comb);
                }
                pc.apply(&comb, &mut zj);
                axpy(1.0, &zj, x);
            }
        }

        r = residual(op, b, x);
        beta = norm2(&r);
        stats.final_residual = beta;
        if beta <= target {
            stats.converged = true;
            return stats;
        }
        if stats.iterations >= cfg.max_iters || !beta.is_finite() || (breakdown && k == 0) {
            return stats;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krylov::{dense_solve, CsrMatrix, FnPrecond, IdentityPrecond};
    use rand::{Rng, SeedableRng};

    fn random_dominant(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = rng.gen_range(-1.0..1.0) / n as f64;
            }
            a[i][i] += 2.0;
        }
        a
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let a = CsrMatrix::identity(10);
        let b: Vec<f64> = (0..10).map(|i| i as f64 + 1.0).collect();
        let mut x = vec![0.0; 10];
        let st = gmres(&a, &b, &mut x, &IdentityPrecond, &SolverConfig::default());
        assert!(st.converged);
        assert_eq!(st.iterations, 1);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_spd_matches_direct() {
        let d: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let a = CsrMatrix::from_diagonal(&d);
        let b = vec![1.0; 10];
        let mut x = vec![0.0; 10];
        let cfg = SolverConfig::default().with_rel_tol(1e-10);
        let st = gmres(&a, &b, &mut x, &IdentityPrecond, &cfg);
        assert!(st.converged && st.iterations <= 10);
        let exact = dense_solve(&a.to_dense(), &b).unwrap();
        let err: f64 = x.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-10 * crate::krylov::norm2(&exact) * 10.0);
    }

    #[test]
    fn history_non_increasing_within_cycle_and_basis_orthonormal() {
        let ad = random_dominant(50, 3);
        let a = CsrMatrix::from_dense(&ad, 0.0);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).cos()).collect();
        let mut x = vec![0.0; 50];
        let cfg = SolverConfig::new(60, 100, 1e-12, 0.0);
        let st = gmres(&a, &b, &mut x, &IdentityPrecond, &cfg);
        assert!(st.converged);
        for w in st.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn exact_preconditioner_one_fgmres_iteration() {
        let ad = random_dominant(20, 5);
        let inv = crate::krylov::dense_inverse(&ad).unwrap();
        let a = CsrMatrix::from_dense(&ad, 0.0);
        let pinv = CsrMatrix::from_dense(&inv, 0.0);
        let pc = FnPrecond(|r: &[f64], z: &mut [f64]| pinv.spmv(r, z));
        let b = vec![1.0; 20];
        let mut x = vec![0.0; 20];
        let st = fgmres(&a, &b, &mut x, &pc, &SolverConfig::default());
        assert!(st.converged);
        assert_eq!(st.iterations, 1);
    }

    #[test]
    fn fixed_preconditioner_fgmres_matches_gmres() {
        let ad = random_dominant(30, 9);
        let a = CsrMatrix::from_dense(&ad, 0.0);
        let diag = a.diagonal();
        let pc = FnPrecond(|r: &[f64], z: &mut [f64]| {
            for i in 0..r.len() {
                z[i] = r[i] / diag[i];
            }
        });
        let b: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin() + 0.1).collect();
        let cfg = SolverConfig::new(10, 100, 1e-10, 0.0);
        let mut x1 = vec![0.0; 30];
        let mut x2 = vec![0.0; 30];
        let s1 = gmres(&a, &b, &mut x1, &pc, &cfg);
        let s2 = fgmres(&a, &b, &mut x2, &pc, &cfg);
        assert_eq!(s1.iterations, s2.iterations);
        for (h1, h2) in s1.arnoldi_norms.iter().zip(&s2.arnoldi_norms) {
            assert!((h1 - h2).abs() <= 1e-13 * h1.abs().max(1.0));
        }
        for (a, b) in x1.iter().zip(&x2) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rhs_returns_immediately() {
        let a = CsrMatrix::identity(4);
        let mut x = vec![0.0; 4];
        let st = gmres(&a, &[0.0; 4], &mut x, &IdentityPrecond, &SolverConfig::default());
        assert!(st.converged);
        assert_eq!(st.iterations, 0);
    }

    #[test]
    fn reports_nonconvergence_with_best_iterate() {
        let ad = random_dominant(40, 11);
        let a = CsrMatrix::from_dense(&ad, 0.0);
        let b = vec![1.0; 40];
        let mut x = vec![0.0; 40];
        let cfg = SolverConfig::new(2, 3, 1e-14, 0.0);
        let st = gmres(&a, &b, &mut x, &IdentityPrecond, &cfg);
        assert!(!st.converged);
        assert_eq!(st.iterations, 3);
        assert!(st.final_residual < st.residual_history[0]);
    }
}
