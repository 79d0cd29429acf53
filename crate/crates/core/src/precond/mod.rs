//! Preconditioners and block solvers for the velocity/pressure system.

mod amg;
mod ilu;
mod jacobi;
mod schur;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use amg::{AmgHierarchy, AmgOptions, NodeLayout};
pub use ilu::Ilu0;
pub use jacobi::Jacobi;
pub use schur::{
    build_shat, scr_solve, NestedPrecond, SchurOperator, SchurSetup, SimplePrecond, SubsolveCounters, SubsolveStats,
};

use crate::error::{Error, Result};
use crate::krylov::{dense_solve, fgmres, gmres, norm2, BlockSystem, SolverConfig, DEFAULT_EPS_DIAG};

/// Largest system the dense direct solver accepts.
const MAX_DENSE: usize = 6000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearSolverKind {
    /// FGMRES preconditioned by relaxed-tolerance SCR.
    Nested,
    /// FGMRES preconditioned by SIMPLE.
    Simple,
    /// One pass of SCR used as the solver itself.
    Scr,
    /// GMRES on the monolithic matrix with ILU(0).
    Ilu0Gmres,
    /// Dense LU; small systems only.
    Direct,
}

impl LinearSolverKind {
    pub fn name(self) -> &'static str {
        match self {
            LinearSolverKind::Nested => "nested",
            LinearSolverKind::Simple => "simple",
            LinearSolverKind::Scr => "scr",
            LinearSolverKind::Ilu0Gmres => "ilu0-gmres",
            LinearSolverKind::Direct => "direct",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nested" => Ok(LinearSolverKind::Nested),
            "simple" => Ok(LinearSolverKind::Simple),
            "scr" => Ok(LinearSolverKind::Scr),
            "ilu0-gmres" | "ilu0" => Ok(LinearSolverKind::Ilu0Gmres),
            "direct" => Ok(LinearSolverKind::Direct),
            _ => Err(Error::Config(format!("unknown linear solver `{s}`"))),
        }
    }
}

/// Solver settings for every level of the block solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockSolverConfig {
    /// Outer FGMRES.
    pub outer: SolverConfig,
    /// Intermediate solves with `A`.
    pub a: SolverConfig,
    /// Intermediate solve with `S` (or `Ŝ`).
    pub s: SolverConfig,
    /// Inner solves with `A` inside the Schur operator.
    pub inner: SolverConfig,
    /// GMRES settings of the ILU(0) baseline.
    pub baseline: SolverConfig,
    pub amg_a: AmgOptions,
    pub amg_s: AmgOptions,
    pub eps_diag: f64,
}

impl Default for BlockSolverConfig {
    fn default() -> Self {
        BlockSolverConfig {
            outer: SolverConfig::new(50, 200, 1e-8, 1e-50),
            a: SolverConfig::new(50, 500, 1e-6, 1e-50),
            s: SolverConfig::new(50, 200, 1e-6, 1e-50),
            inner: SolverConfig::new(50, 500, 1e-6, 1e-50),
            baseline: SolverConfig::new(50, 10_000, 1e-8, 1e-50),
            amg_a: AmgOptions::default().with_block_size(3),
            amg_s: AmgOptions::default(),
            eps_diag: DEFAULT_EPS_DIAG,
        }
    }
}

impl BlockSolverConfig {
    /// All three sub-solver relative tolerances set to `tol`.
    pub fn uniform(tol: f64) -> Self {
        Self::default().with_sub_tolerances(tol, tol, tol)
    }

    /// `δ_A = δ_S = tol` with the inner solver relaxed to `100 tol`.
    pub fn efficient(tol: f64) -> Self {
        Self::default().with_sub_tolerances(tol, tol, 100.0 * tol)
    }

    pub fn with_sub_tolerances(mut self, a: f64, s: f64, inner: f64) -> Self {
        self.a.rel_tol = a;
        self.s.rel_tol = s;
        self.inner.rel_tol = inner;
        self
    }

    pub fn with_restart(mut self, m: usize) -> Self {
        for c in [&mut self.outer, &mut self.a, &mut self.s, &mut self.inner, &mut self.baseline] {
            c.restart = m;
        }
        self
    }
}

/// Statistics of one linear solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearSolveStats {
    /// Outer Krylov iterations `n`.
    pub outer_iterations: usize,
    pub converged: bool,
    /// Outer residual history of the scaled system.
    pub residual_history: Vec<f64>,
    pub sub: SubsolveStats,
    pub setup_seconds: f64,
    pub solve_seconds: f64,
}

/// Solves the block system after symmetric diagonal scaling and returns
/// `[x_v; x_p]` in the original unknowns.
pub fn solve_block_system(
    sys: &BlockSystem,
    kind: LinearSolverKind,
    cfg: &BlockSolverConfig,
) -> Result<(Vec<f64>, LinearSolveStats)> {
    let t0 = Instant::now();
    let (scaled, w) = sys.diag_scale(cfg.eps_diag);
    let rhs = scaled.rhs();
    let mut x = vec![0.0; rhs.len()];
    let mut stats = LinearSolveStats::default();
    let counters = SubsolveCounters::default();

    match kind {
        LinearSolverKind::Nested | LinearSolverKind::Simple | LinearSolverKind::Scr => {
            let candidate: Vec<f64> = w.w_v.iter().map(|v| 1.0 / v).collect();
            let setup = SchurSetup::with_candidate(&scaled, cfg, Some(&candidate))?;
            stats.setup_seconds = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            match kind {
                LinearSolverKind::Nested => {
                    let pc = NestedPrecond::new(&setup, *cfg, &counters);
                    let ks = fgmres(&scaled, &rhs, &mut x, &pc, &cfg.outer);
                    stats.outer_iterations = ks.iterations;
                    stats.converged = ks.converged;
                    stats.residual_history = ks.residual_history;
                }
                LinearSolverKind::Simple => {
                    let pc = SimplePrecond::new(&setup, *cfg, &counters);
                    let ks = fgmres(&scaled, &rhs, &mut x, &pc, &cfg.outer);
                    stats.outer_iterations = ks.iterations;
                    stats.converged = ks.converged;
                    stats.residual_history = ks.residual_history;
                }
                _ => {
                    let nv = scaled.nv();
                    let (xv, xp) = scr_solve(&setup, &scaled.r_v, &scaled.r_p, cfg, &counters);
                    x[..nv].copy_from_slice(&xv);
                    x[nv..].copy_from_slice(&xp);
                    let r = crate::krylov::residual(&scaled, &rhs, &x);
                    stats.residual_history = vec![norm2(&rhs), norm2(&r)];
                    stats.converged = counters.snapshot().unconverged == 0;
                }
            }
            stats.solve_seconds = t1.elapsed().as_secs_f64();
        }
        LinearSolverKind::Ilu0Gmres => {
            let k = scaled.to_monolithic();
            let ilu = Ilu0::build(&k)?;
            stats.setup_seconds = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let ks = gmres(&k, &rhs, &mut x, &ilu, &cfg.baseline);
            stats.outer_iterations = ks.iterations;
            stats.converged = ks.converged;
            stats.residual_history = ks.residual_history;
            stats.solve_seconds = t1.elapsed().as_secs_f64();
        }
        LinearSolverKind::Direct => {
            if rhs.len() > MAX_DENSE {
                return Err(Error::LinearSolver(format!(
                    "dense direct solve limited to {MAX_DENSE} unknowns, got {}",
                    rhs.len()
                )));
            }
            stats.setup_seconds = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            x = dense_solve(&scaled.to_monolithic().to_dense(), &rhs)?;
            stats.converged = true;
            stats.solve_seconds = t1.elapsed().as_secs_f64();
        }
    }
    stats.sub = counters.snapshot();
    w.unscale(&mut x);
    Ok((x, stats))
}
