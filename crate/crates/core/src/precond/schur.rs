//! Schur-complement based block solvers for `[[A, B], [C, D]]`.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::krylov::{gmres, BlockSystem, CsrMatrix, KrylovStats, LinearOperator, SolverConfig};

use super::amg::{AmgHierarchy, AmgOptions, NodeLayout};
use super::BlockSolverConfig;

/// `Ŝ = D - C diag(A)⁻¹ B`
pub fn build_shat(a: &CsrMatrix, b: &CsrMatrix, c: &CsrMatrix, d: &CsrMatrix) -> Result<CsrMatrix> {
    let diag = a.diagonal();
    if let Some(row) = diag.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroDiagonal { row });
    }
    let inv: Vec<f64> = diag.iter().map(|v| 1.0 / v).collect();
    let ones = vec![1.0; b.ncols()];
    let hb = b.scale_rows_cols(&inv, &ones);
    Ok(d.add(1.0, &c.matmul(&hb), -1.0))
}

/// Running totals of sub-solver work inside one outer solve.
#[derive(Debug, Default)]
pub struct SubsolveCounters {
    a_solves: Cell<usize>,
    a_iters: Cell<usize>,
    s_solves: Cell<usize>,
    s_iters: Cell<usize>,
    inner_solves: Cell<usize>,
    inner_iters: Cell<usize>,
    unconverged: Cell<usize>,
}

/// Plain snapshot of [`SubsolveCounters`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SubsolveStats {
    pub a_solves: usize,
    pub a_iters: usize,
    pub s_solves: usize,
    pub s_iters: usize,
    pub inner_solves: usize,
    pub inner_iters: usize,
    /// Sub-solves that stopped at their iteration cap.
    pub unconverged: usize,
}

fn avg(total: usize, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        total as f64 / count as f64
    }
}

impl SubsolveStats {
    pub fn mean_a(&self) -> f64 {
        avg(self.a_iters, self.a_solves)
    }
    pub fn mean_s(&self) -> f64 {
        avg(self.s_iters, self.s_solves)
    }
    pub fn mean_inner(&self) -> f64 {
        avg(self.inner_iters, self.inner_solves)
    }
}

fn bump(c: &Cell<usize>, by: usize) {
    c.set(c.get() + by);
}

impl SubsolveCounters {
    pub fn snapshot(&self) -> SubsolveStats {
        SubsolveStats {
            a_solves: self.a_solves.get(),
            a_iters: self.a_iters.get(),
            s_solves: self.s_solves.get(),
            s_iters: self.s_iters.get(),
            inner_solves: self.inner_solves.get(),
            inner_iters: self.inner_iters.get(),
            unconverged: self.unconverged.get(),
        }
    }

    fn record(&self, st: &KrylovStats, solves: &Cell<usize>, iters: &Cell<usize>) {
        bump(solves, 1);
        bump(iters, st.iterations);
        if !st.converged {
            bump(&self.unconverged, 1);
        }
    }
}

/// Everything the block preconditioners share: `diag(A)⁻¹`, `Ŝ` and AMG
/// hierarchies for `A` and `Ŝ`.
pub struct SchurSetup<'a> {
    pub sys: &'a BlockSystem,
    inv_diag_a: Vec<f64>,
    amg_a: AmgHierarchy,
    shat: CsrMatrix,
    amg_s: AmgHierarchy,
}

impl<'a> SchurSetup<'a> {
    pub fn new(sys: &'a BlockSystem, cfg: &BlockSolverConfig) -> Result<Self> {
        Self::with_candidate(sys, cfg, None)
    }

    /// `candidate_a` is the near-null-space candidate handed to the velocity
    /// AMG, per velocity unknown.
    pub fn with_candidate(sys: &'a BlockSystem, cfg: &BlockSolverConfig, candidate_a: Option<&[f64]>) -> Result<Self> {
        let shat = build_shat(&sys.a, &sys.b, &sys.c, &sys.d)?;
        let inv_diag_a = sys.a.diagonal().iter().map(|v| 1.0 / v).collect();
        let amg_a = match &sys.v_dofs {
            Some(dofs) => {
                let layout = NodeLayout::from_dofs(dofs, cfg.amg_a.block_size.max(1));
                AmgHierarchy::build_with_layout(&sys.a, &cfg.amg_a, candidate_a, &layout)?
            }
            None => AmgHierarchy::build_with_candidate(&sys.a, &cfg.amg_a, candidate_a)?,
        };
        let amg_s = AmgHierarchy::build(&shat, &AmgOptions { block_size: 1, ..cfg.amg_s })?;
        Ok(SchurSetup { sys, inv_diag_a, amg_a, shat, amg_s })
    }

    pub fn shat(&self) -> &CsrMatrix {
        &self.shat
    }

    fn solve_a(&self, r: &[f64], cfg: &SolverConfig) -> (Vec<f64>, KrylovStats) {
        let mut x = vec![0.0; r.len()];
        let st = gmres(&self.sys.a, r, &mut x, &self.amg_a, cfg);
        (x, st)
    }

    fn solve_shat(&self, r: &[f64], cfg: &SolverConfig) -> (Vec<f64>, KrylovStats) {
        let mut x = vec![0.0; r.len()];
        let st = gmres(&self.shat, r, &mut x, &self.amg_s, cfg);
        (x, st)
    }
}

/// Matrix-free `S x = D x - C A⁻¹ (B x)` with an inner Krylov solve for
/// `A⁻¹`.
pub struct SchurOperator<'s, 'a> {
    setup: &'s SchurSetup<'a>,
    inner: SolverConfig,
    counters: &'s SubsolveCounters,
}

impl<'s, 'a> SchurOperator<'s, 'a> {
    pub fn new(setup: &'s SchurSetup<'a>, inner: SolverConfig, counters: &'s SubsolveCounters) -> Self {
        SchurOperator { setup, inner, counters }
    }
}

impl LinearOperator for SchurOperator<'_, '_> {
    fn nrows(&self) -> usize {
        self.setup.sys.np()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let sys = self.setup.sys;
        let bx = sys.b.mul_vec(x);
        let (ainv_bx, st) = self.setup.solve_a(&bx, &self.inner);
        self.counters.record(&st, &self.counters.inner_solves, &self.counters.inner_iters);
        sys.d.spmv(x, y);
        sys.c.spmv_add(-1.0, &ainv_bx, y);
    }
}

/// Segregated solve by Schur complement reduction:
/// 1. `A x̂_v = r_v`
/// 2. `r_p ← r_p - C x̂_v`
/// 3. `S x_p = r_p`, preconditioned by AMG on `Ŝ`; with `inner.rel_tol ≥ 1`
///    the inner solve is skipped and `Ŝ x_p = r_p` is solved instead
/// 4. `r_v ← r_v - B x_p`
/// 5. `A x_v = r_v`
pub fn scr_solve(
    setup: &SchurSetup<'_>,
    r_v: &[f64],
    r_p: &[f64],
    cfg: &BlockSolverConfig,
    counters: &SubsolveCounters,
) -> (Vec<f64>, Vec<f64>) {
    let sys = setup.sys;
    let (xhat, st) = setup.solve_a(r_v, &cfg.a);
    counters.record(&st, &counters.a_solves, &counters.a_iters);

    let mut rp = r_p.to_vec();
    sys.c.spmv_add(-1.0, &xhat, &mut rp);

    let (xp, st) = if cfg.inner.rel_tol >= 1.0 {
        setup.solve_shat(&rp, &cfg.s)
    } else {
        let op = SchurOperator::new(setup, cfg.inner, counters);
        let mut xp = vec![0.0; rp.len()];
        let st = gmres(&op, &rp, &mut xp, &setup.amg_s, &cfg.s);
        (xp, st)
    };
    counters.record(&st, &counters.s_solves, &counters.s_iters);

    let mut rv = r_v.to_vec();
    sys.b.spmv_add(-1.0, &xp, &mut rv);
    let (xv, st) = setup.solve_a(&rv, &cfg.a);
    counters.record(&st, &counters.a_solves, &counters.a_iters);
    (xv, xp)
}

/// SCR at relaxed tolerances used as a right preconditioner.
pub struct NestedPrecond<'s, 'a> {
    setup: &'s SchurSetup<'a>,
    cfg: BlockSolverConfig,
    counters: &'s SubsolveCounters,
}

impl<'s, 'a> NestedPrecond<'s, 'a> {
    pub fn new(setup: &'s SchurSetup<'a>, cfg: BlockSolverConfig, counters: &'s SubsolveCounters) -> Self {
        NestedPrecond { setup, cfg, counters }
    }
}

impl crate::krylov::Preconditioner for NestedPrecond<'_, '_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let nv = self.setup.sys.nv();
        let (xv, xp) = scr_solve(self.setup, &r[..nv], &r[nv..], &self.cfg, self.counters);
        z[..nv].copy_from_slice(&xv);
        z[nv..].copy_from_slice(&xp);
    }
}

/// SIMPLE: the SCR skeleton with `Ŝ` in place of `S` and the back
/// substitution `x_v = x̂_v - diag(A)⁻¹ B x_p`.
pub struct SimplePrecond<'s, 'a> {
    setup: &'s SchurSetup<'a>,
    cfg: BlockSolverConfig,
    counters: &'s SubsolveCounters,
}

impl<'s, 'a> SimplePrecond<'s, 'a> {
    pub fn new(setup: &'s SchurSetup<'a>, cfg: BlockSolverConfig, counters: &'s SubsolveCounters) -> Self {
        SimplePrecond { setup, cfg, counters }
    }
}

impl crate::krylov::Preconditioner for SimplePrecond<'_, '_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let setup = self.setup;
        let sys = setup.sys;
        let nv = sys.nv();
        let (xhat, st) = setup.solve_a(&r[..nv], &self.cfg.a);
        self.counters.record(&st, &self.counters.a_solves, &self.counters.a_iters);
        let mut rp = r[nv..].to_vec();
        sys.c.spmv_add(-1.0, &xhat, &mut rp);
        let (xp, st) = setup.solve_shat(&rp, &self.cfg.s);
        self.counters.record(&st, &self.counters.s_solves, &self.counters.s_iters);
        let bxp = sys.b.mul_vec(&xp);
        for i in 0..nv {
            z[i] = xhat[i] - setup.inv_diag_a[i] * bxp[i];
        }
        z[nv..].copy_from_slice(&xp);
    }
}
