//! Smoothed-aggregation algebraic multigrid.
//!
//! Unknowns are grouped into nodes, by default `block_size` consecutive rows
//! per node. A node may own fewer than `block_size` unknowns when some of
//! its components are constrained away. Node strength is the Frobenius norm of the coupling block; aggregates are grown
//! greedily from seeds whose strong neighbourhood is still free. The tentative
//! prolongator injects a near-null-space candidate per component and is
//! smoothed with one damped-Jacobi step.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::krylov::{CsrMatrix, Preconditioner};

/// Coarsest levels up to this size are factorised densely even when
/// coarsening stalls above `coarse_size`.
const MAX_DENSE_COARSE: usize = 1500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmgOptions {
    /// Unknowns per node; 3 for the velocity block, 1 for scalar problems.
    pub block_size: usize,
    /// Node `j` is a strong neighbour of `i` when
    /// `‖A_ij‖ > θ sqrt(‖A_ii‖ ‖A_jj‖)`.
    pub strength_threshold: f64,
    pub max_levels: usize,
    /// Levels at or below this size are solved directly.
    pub coarse_size: usize,
    /// Symmetric Gauss–Seidel sweeps before and after the coarse correction.
    pub sweeps: usize,
    pub smooth_prolongator: bool,
}

impl Default for AmgOptions {
    fn default() -> Self {
        AmgOptions {
            block_size: 1,
            strength_threshold: 0.08,
            max_levels: 12,
            coarse_size: 300,
            sweeps: 1,
            smooth_prolongator: true,
        }
    }
}

impl AmgOptions {
    pub fn with_block_size(mut self, bs: usize) -> Self {
        self.block_size = bs;
        self
    }
}

/// Node and component of every unknown.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeLayout {
    pub node: Vec<usize>,
    pub comp: Vec<usize>,
    pub n_nodes: usize,
}

impl NodeLayout {
    /// `bs` consecutive unknowns per node.
    pub fn blocked(n: usize, bs: usize) -> Result<Self> {
        if n % bs != 0 {
            return Err(Error::InvalidInput(format!("matrix size {n} is not a multiple of block size {bs}")));
        }
        Ok(NodeLayout { node: (0..n).map(|i| i / bs).collect(), comp: (0..n).map(|i| i % bs).collect(), n_nodes: n / bs })
    }

    /// Layout of a subset of a blocked numbering: unknown `i` is global
    /// unknown `dofs[i]`. Nodes are renumbered consecutively.
    pub fn from_dofs(dofs: &[usize], bs: usize) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut node = Vec::with_capacity(dofs.len());
        for &g in dofs {
            let next = map.len();
            node.push(*map.entry(g / bs).or_insert(next));
        }
        NodeLayout { node, comp: dofs.iter().map(|g| g % bs).collect(), n_nodes: map.len() }
    }

    pub fn len(&self) -> usize {
        self.node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node.is_empty()
    }
}

struct Level {
    a: CsrMatrix,
    diag: Vec<f64>,
    /// Prolongation to this level from the next coarser one.
    p: CsrMatrix,
    r: CsrMatrix,
}

enum Coarsest {
    Direct { lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn> },
    Jacobi { a: CsrMatrix, diag: Vec<f64> },
}

pub struct AmgHierarchy {
    levels: Vec<Level>,
    coarsest: Coarsest,
    sweeps: usize,
}

impl AmgHierarchy {
    /// Builds the hierarchy with unit near-null-space candidates.
    pub fn build(a: &CsrMatrix, opts: &AmgOptions) -> Result<Self> {
        Self::build_with_candidate(a, opts, None)
    }

    /// `candidate` gives the per-unknown values of the near-null-space
    /// vectors (one per component of a node); it defaults to ones.
    pub fn build_with_candidate(a: &CsrMatrix, opts: &AmgOptions, candidate: Option<&[f64]>) -> Result<Self> {
        let bs = opts.block_size.max(1);
        let layout = NodeLayout::blocked(a.nrows(), bs)?;
        Self::build_with_layout(a, opts, candidate, &layout)
    }

    /// Like [`Self::build_with_candidate`] with an explicit node layout of
    /// the fine level.
    pub fn build_with_layout(
        a: &CsrMatrix,
        opts: &AmgOptions,
        candidate: Option<&[f64]>,
        layout: &NodeLayout,
    ) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::InvalidInput("AMG needs a square matrix".into()));
        }
        if layout.len() != a.nrows() {
            return Err(Error::InvalidInput(format!("layout has {} unknowns, matrix {}", layout.len(), a.nrows())));
        }
        let bs = opts.block_size.max(1);
        if layout.comp.iter().any(|&c| c >= bs) {
            return Err(Error::InvalidInput(format!("layout component exceeds block size {bs}")));
        }
        let mut levels = Vec::new();
        let mut current = a.clone();
        let mut cand: Vec<f64> = candidate.map_or_else(|| vec![1.0; a.nrows()], |c| c.to_vec());
        let mut layout = layout.clone();

        while current.nrows() > opts.coarse_size && levels.len() + 1 < opts.max_levels {
            let aggregates = aggregate(&current, &layout, opts.strength_threshold);
            let n_agg = aggregates.iter().copied().filter(|&g| g != usize::MAX).max().map_or(0, |g| g + 1);
            let (ptent, coarse_cand, coarse_layout) = tentative_prolongator(&aggregates, n_agg, bs, &layout, &cand);
            let nc = ptent.ncols();
            if nc == 0 || nc >= current.nrows() {
                break;
            }
            let diag = current.diagonal();
            let p = if opts.smooth_prolongator { smooth_prolongator(&current, &diag, &ptent) } else { ptent };
            let r = p.transpose();
            let coarse = r.matmul(&current.matmul(&p));
            levels.push(Level { a: current, diag, p, r });
            current = coarse;
            cand = coarse_cand;
            layout = coarse_layout;
        }

        if levels.is_empty() && current.nrows() > opts.coarse_size {
            warn!("AMG aggregation made no progress on a {}-row matrix; falling back to Jacobi", current.nrows());
            let diag = checked_diagonal(&current)?;
            return Ok(AmgHierarchy { levels, coarsest: Coarsest::Jacobi { a: current, diag }, sweeps: opts.sweeps });
        }
        let coarsest = if current.nrows() <= opts.coarse_size.max(MAX_DENSE_COARSE) {
            let dense = current.to_dense();
            let n = current.nrows();
            let m = DMatrix::from_fn(n, n, |i, j| dense[i][j]);
            let lu = m.lu();
            if lu.is_invertible() || n == 0 {
                Coarsest::Direct { lu }
            } else {
                warn!("singular coarsest AMG level; using Jacobi there");
                Coarsest::Jacobi { diag: checked_diagonal(&current)?, a: current }
            }
        } else {
            Coarsest::Jacobi { diag: checked_diagonal(&current)?, a: current }
        };
        Ok(AmgHierarchy { levels, coarsest, sweeps: opts.sweeps })
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len() + 1
    }

    /// Row counts from finest to coarsest.
    pub fn level_sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.levels.iter().map(|l| l.a.nrows()).collect();
        s.push(match &self.coarsest {
            Coarsest::Direct { lu } => lu.l().nrows(),
            Coarsest::Jacobi { a, .. } => a.nrows(),
        });
        s
    }

    /// Operator complexity `Σ nnz(A_l) / nnz(A_0)`.
    pub fn operator_complexity(&self) -> f64 {
        let fine = self.levels.first().map(|l| l.a.nnz()).unwrap_or(1).max(1) as f64;
        let mut total: usize = self.levels.iter().map(|l| l.a.nnz()).sum();
        if let Coarsest::Jacobi { a, .. } = &self.coarsest {
            total += a.nnz();
        } else if let Coarsest::Direct { lu } = &self.coarsest {
            total += lu.l().nrows().pow(2);
        }
        total as f64 / fine
    }

    /// One V-cycle from a zero initial guess.
    pub fn vcycle(&self, b: &[f64], x: &mut [f64]) {
        self.cycle(0, b, x);
    }

    fn cycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        if l == self.levels.len() {
            match &self.coarsest {
                Coarsest::Direct { lu } => {
                    let sol = lu.solve(&nalgebra::DVector::from_column_slice(b)).expect("coarse LU checked at build time");
                    x.copy_from_slice(sol.as_slice());
                }
                Coarsest::Jacobi { diag, .. } => {
                    for i in 0..b.len() {
                        x[i] = b[i] / diag[i];
                    }
                }
            }
            return;
        }
        let lev = &self.levels[l];
        x.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..self.sweeps {
            symmetric_gauss_seidel(&lev.a, &lev.diag, b, x);
        }
        let mut res = vec![0.0; b.len()];
        lev.a.spmv(x, &mut res);
        for (ri, bi) in res.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let bc = lev.r.mul_vec(&res);
        let mut xc = vec![0.0; bc.len()];
        self.cycle(l + 1, &bc, &mut xc);
        lev.p.spmv_add(1.0, &xc, x);
        for _ in 0..self.sweeps {
            symmetric_gauss_seidel(&lev.a, &lev.diag, b, x);
        }
    }
}

impl Preconditioner for AmgHierarchy {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.vcycle(r, z);
    }
}

fn checked_diagonal(a: &CsrMatrix) -> Result<Vec<f64>> {
    let d = a.diagonal();
    if let Some(row) = d.iter().position(|&v| v == 0.0) {
        return Err(Error::ZeroDiagonal { row });
    }
    Ok(d)
}

fn symmetric_gauss_seidel(a: &CsrMatrix, diag: &[f64], b: &[f64], x: &mut [f64]) {
    let n = b.len();
    let relax = |i: usize, x: &mut [f64]| {
        if diag[i] == 0.0 {
            return;
        }
        let (cols, vals) = a.row(i);
        let mut s = b[i];
        for (&c, &v) in cols.iter().zip(vals) {
            if c != i {
                s -= v * x[c];
            }
        }
        x[i] = s / diag[i];
    };
    for i in 0..n {
        relax(i, x);
    }
    for i in (0..n).rev() {
        relax(i, x);
    }
}

/// Returns the aggregate of each node, numbered from zero. Isolated nodes
/// (no strong neighbours and a zero diagonal block) get `usize::MAX`.
fn aggregate(a: &CsrMatrix, layout: &NodeLayout, theta: f64) -> Vec<usize> {
    let nn = layout.n_nodes;
    // Node-level Frobenius norms of the coupling blocks.
    let mut raw: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nn];
    for r in 0..a.nrows() {
        let (cols, vals) = a.row(r);
        let acc = &mut raw[layout.node[r]];
        for (&c, &v) in cols.iter().zip(vals) {
            acc.push((layout.node[c], v * v));
        }
    }
    let node_rows: Vec<Vec<(usize, f64)>> = raw
        .into_iter()
        .map(|mut acc| {
            acc.sort_unstable_by_key(|e| e.0);
            let mut row: Vec<(usize, f64)> = Vec::new();
            for (j, v) in acc {
                match row.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => row.push((j, v)),
                }
            }
            row
        })
        .collect();
    let self_norm: Vec<f64> = node_rows
        .iter()
        .enumerate()
        .map(|(i, row)| row.iter().find(|e| e.0 == i).map_or(0.0, |e| e.1.sqrt()))
        .collect();
    let strong: Vec<Vec<usize>> = node_rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .filter(|&&(j, v)| j != i && v.sqrt() > theta * (self_norm[i] * self_norm[j]).sqrt())
                .map(|e| e.0)
                .collect()
        })
        .collect();

    const FREE: usize = usize::MAX;
    let mut agg = vec![FREE; nn];
    let mut n_agg = 0;
    // Seeds whose whole strong neighbourhood is free.
    for i in 0..nn {
        if agg[i] != FREE || strong[i].is_empty() || strong[i].iter().any(|&j| agg[j] != FREE) {
            continue;
        }
        agg[i] = n_agg;
        for &j in &strong[i] {
            agg[j] = n_agg;
        }
        n_agg += 1;
    }
    // Attach leftovers to a neighbouring aggregate from the first pass.
    let first_pass = agg.clone();
    for i in 0..nn {
        if agg[i] == FREE {
            if let Some(&j) = strong[i].iter().find(|&&j| first_pass[j] != FREE) {
                agg[i] = first_pass[j];
            }
        }
    }
    // Whatever is left forms new aggregates with its free strong neighbours.
    for i in 0..nn {
        if agg[i] != FREE {
            continue;
        }
        agg[i] = n_agg;
        for &j in &strong[i] {
            if agg[j] == FREE {
                agg[j] = n_agg;
            }
        }
        n_agg += 1;
    }
    agg
}

/// Piecewise-constant prolongator with normalised candidate columns, plus the
/// coarse candidate and layout. Each aggregate gets one column per component
/// present among its unknowns.
fn tentative_prolongator(
    agg: &[usize],
    n_agg: usize,
    bs: usize,
    layout: &NodeLayout,
    cand: &[f64],
) -> (CsrMatrix, Vec<f64>, NodeLayout) {
    let mut norms = vec![0.0; n_agg * bs];
    for i in 0..cand.len() {
        let g = agg[layout.node[i]];
        if g != usize::MAX {
            norms[g * bs + layout.comp[i]] += cand[i].powi(2);
        }
    }
    let mut col = vec![usize::MAX; n_agg * bs];
    let mut coarse = NodeLayout { node: Vec::new(), comp: Vec::new(), n_nodes: n_agg };
    let mut coarse_cand = Vec::new();
    for (k, n) in norms.iter_mut().enumerate() {
        *n = n.sqrt();
        if *n > 0.0 {
            col[k] = coarse_cand.len();
            coarse_cand.push(*n);
            coarse.node.push(k / bs);
            coarse.comp.push(k % bs);
        }
    }
    let mut t = Vec::with_capacity(cand.len());
    for i in 0..cand.len() {
        let g = agg[layout.node[i]];
        if g == usize::MAX {
            continue;
        }
        let k = g * bs + layout.comp[i];
        if col[k] != usize::MAX {
            t.push((i, col[k], cand[i] / norms[k]));
        }
    }
    (CsrMatrix::from_triplets(cand.len(), coarse_cand.len(), &t), coarse_cand, coarse)
}

/// `P = (I - ω D⁻¹ A) P_tent` with `ω = (4/3) / ρ(D⁻¹ A)`.
fn smooth_prolongator(a: &CsrMatrix, diag: &[f64], ptent: &CsrMatrix) -> CsrMatrix {
    let inv: Vec<f64> = diag.iter().map(|&d| if d != 0.0 { 1.0 / d } else { 0.0 }).collect();
    let rho = spectral_radius_estimate(a, &inv);
    if !(rho > 0.0) || !rho.is_finite() {
        return ptent.clone();
    }
    let omega = 4.0 / 3.0 / rho;
    let ones = vec![1.0; a.ncols()];
    let dinv_a = a.scale_rows_cols(&inv, &ones);
    ptent.add(1.0, &dinv_a.matmul(ptent), -omega)
}

/// Power iteration on `D⁻¹ A`.
fn spectral_radius_estimate(a: &CsrMatrix, inv_diag: &[f64]) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 97) as f64 / 97.0).collect();
    let mut y = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..20 {
        let nx = crate::krylov::norm2(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        a.spmv(&x, &mut y);
        for (yi, di) in y.iter_mut().zip(inv_diag) {
            *yi *= di;
        }
        lambda = crate::krylov::norm2(&y);
        std::mem::swap(&mut x, &mut y);
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_exact() {
        for n in [10, 1000] {
            let a = CsrMatrix::identity(n);
            let h = AmgHierarchy::build(&a, &AmgOptions::default()).unwrap();
            let r: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let mut z = vec![0.0; n];
            h.vcycle(&r, &mut z);
            assert_eq!(z, r);
        }
    }

    #[test]
    fn levels_strictly_shrink() {
        let n = 400;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &t);
        let h = AmgHierarchy::build(&a, &AmgOptions { coarse_size: 10, ..Default::default() }).unwrap();
        let sizes = h.level_sizes();
        assert!(sizes.len() > 2);
        assert!(sizes.windows(2).all(|w| w[1] < w[0]));
    }
}
