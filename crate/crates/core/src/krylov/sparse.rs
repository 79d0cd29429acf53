//! Compressed sparse row storage.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// CSR matrix with sorted, duplicate-free column indices in every row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from raw arrays, checking the structural invariants.
    pub fn new(nrows: usize, ncols: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if row_ptr.len() != nrows + 1 || col_idx.len() != values.len() || row_ptr[nrows] != col_idx.len() {
            return Err(Error::InvalidInput("inconsistent CSR array lengths".into()));
        }
        for r in 0..nrows {
            if row_ptr[r] > row_ptr[r + 1] {
                return Err(Error::InvalidInput(format!("row pointer decreases at row {r}")));
            }
            let cols = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.last().is_some_and(|&c| c >= ncols) {
                return Err(Error::InvalidInput(format!("row {r} has unsorted or out-of-range columns")));
            }
        }
        Ok(CsrMatrix { nrows, ncols, row_ptr, col_idx, values })
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        CsrMatrix { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        CsrMatrix { nrows: n, ncols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: d.to_vec() }
    }

    /// Sums duplicate entries; explicit zeros from the triplets are kept so
    /// that a pattern can be fixed ahead of value assembly.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of range");
            counts[r + 1] += 1;
        }
        for r in 0..nrows {
            counts[r + 1] += counts[r];
        }
        let mut next = counts.clone();
        let mut entries = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            entries[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for r in 0..nrows {
            let row = &mut entries[counts[r]..counts[r + 1]];
            row.sort_unstable_by_key(|e| e.0);
            for &(c, v) in row.iter() {
                if col_idx.len() > row_ptr[r] && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { nrows, ncols, row_ptr, col_idx, values }
    }

    /// Keeps entries with `|a_ij| > tol`.
    pub fn from_dense(rows: &[Vec<f64>], tol: f64) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut t = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v.abs() > tol {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &t)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.ncols]; self.nrows];
        for (r, row) in out.iter_mut().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row[self.col_idx[k]] += self.values[k];
            }
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    /// Position of `(r, c)` in the value array, if stored.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let start = self.row_ptr[r];
        self.col_idx[start..self.row_ptr[r + 1]].binary_search(&c).ok().map(|k| start + k)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.position(r, c).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yr = s;
        }
    }

    /// `y += alpha A x`
    pub fn spmv_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yr += alpha * s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.spmv(x, &mut y);
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                col_idx[next[c]] = r;
                values[next[c]] = self.values[k];
                next[c] += 1;
            }
        }
        CsrMatrix { nrows: self.ncols, ncols: self.nrows, row_ptr: counts, col_idx, values }
    }

    /// Sparse product `self · other` (row-wise Gustavson).
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows, "dimension mismatch in sparse product");
        let n = other.ncols;
        let mut marker = vec![usize::MAX; n];
        let mut acc = vec![0.0; n];
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut cols: Vec<usize> = Vec::new();
        row_ptr.push(0);
        for r in 0..self.nrows {
            cols.clear();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let a = self.values[k];
                let m = self.col_idx[k];
                for kk in other.row_ptr[m]..other.row_ptr[m + 1] {
                    let c = other.col_idx[kk];
                    if marker[c] != r {
                        marker[c] = r;
                        acc[c] = 0.0;
                        cols.push(c);
                    }
                    acc[c] += a * other.values[kk];
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                col_idx.push(c);
                values.push(acc[c]);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { nrows: self.nrows, ncols: n, row_ptr, col_idx, values }
    }

    /// `alpha A + beta B` on the union pattern.
    pub fn add(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::with_capacity(self.nnz().max(other.nnz()));
        let mut values = Vec::with_capacity(self.nnz().max(other.nnz()));
        row_ptr.push(0);
        for r in 0..self.nrows {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut i, mut j) = (0, 0);
            while i < ca.len() || j < cb.len() {
                if j == cb.len() || (i < ca.len() && ca[i] < cb[j]) {
                    col_idx.push(ca[i]);
                    values.push(alpha * va[i]);
                    i += 1;
                } else if i == ca.len() || cb[j] < ca[i] {
                    col_idx.push(cb[j]);
                    values.push(beta * vb[j]);
                    j += 1;
                } else {
                    col_idx.push(ca[i]);
                    values.push(alpha * va[i] + beta * vb[j]);
                    i += 1;
                    j += 1;
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }

    /// `diag(left) · A · diag(right)`
    pub fn scale_rows_cols(&self, left: &[f64], right: &[f64]) -> CsrMatrix {
        let mut out = self.clone();
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.values[k] *= left[r] * right[self.col_idx[k]];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> CsrMatrix {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Drops stored entries with `|a_ij| <= tol`, keeping the diagonal.
    pub fn prune(&self, tol: f64) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                if r == c || self.values[k].abs() > tol {
                    t.push((r, c, self.values[k]));
                }
            }
        }
        CsrMatrix::from_triplets(self.nrows, self.ncols, &t)
    }

    /// Keeps only the rows and columns flagged in `keep_rows`/`keep_cols`,
    /// renumbering them contiguously.
    pub fn submatrix(&self, keep_rows: &[bool], keep_cols: &[bool]) -> CsrMatrix {
        let mut col_map = vec![usize::MAX; self.ncols];
        let mut nc = 0;
        for (c, &k) in keep_cols.iter().enumerate() {
            if k {
                col_map[c] = nc;
                nc += 1;
            }
        }
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.nrows {
            if !keep_rows[r] {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = col_map[self.col_idx[k]];
                if c != usize::MAX {
                    col_idx.push(c);
                    values.push(self.values[k]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { nrows: row_ptr.len() - 1, ncols: nc, row_ptr, col_idx, values }
    }

    /// Assembles `[[A, B], [C, D]]` into one matrix.
    pub fn from_blocks(a: &CsrMatrix, b: &CsrMatrix, c: &CsrMatrix, d: &CsrMatrix) -> CsrMatrix {
        assert_eq!(a.nrows, b.nrows);
        assert_eq!(c.nrows, d.nrows);
        assert_eq!(a.ncols, c.ncols);
        assert_eq!(b.ncols, d.ncols);
        let nv = a.ncols;
        let n = a.nrows + c.nrows;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(a.nnz() + b.nnz() + c.nnz() + d.nnz());
        let mut values = Vec::with_capacity(col_idx.capacity());
        row_ptr.push(0);
        for (left, right) in [(a, b), (c, d)] {
            for r in 0..left.nrows {
                let (cl, vl) = left.row(r);
                col_idx.extend_from_slice(cl);
                values.extend_from_slice(vl);
                let (cr, vr) = right.row(r);
                col_idx.extend(cr.iter().map(|&c| c + nv));
                values.extend_from_slice(vr);
                row_ptr.push(col_idx.len());
            }
        }
        CsrMatrix { nrows: n, ncols: nv + b.ncols, row_ptr, col_idx, values }
    }

    /// Writes the matrix in Matrix Market coordinate format.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                writeln!(w, "{} {} {:.17e}", r + 1, self.col_idx[k] + 1, self.values[k])?;
            }
        }
        Ok(())
    }

    /// Reads a real, general or symmetric, Matrix Market coordinate file.
    pub fn read_matrix_market<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::InvalidInput("empty Matrix Market input".into()))??;
        let lower = header.to_ascii_lowercase();
        if !lower.starts_with("%%matrixmarket matrix coordinate") {
            return Err(Error::InvalidInput(format!("unsupported Matrix Market header: {header}")));
        }
        let symmetric = lower.contains("symmetric");
        let mut dims: Option<(usize, usize, usize)> = None;
        let mut t = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse_err = || Error::InvalidInput(format!("malformed Matrix Market line: {line}"));
            match dims {
                None => {
                    if parts.len() != 3 {
                        return Err(parse_err());
                    }
                    let p: Vec<usize> = parts.iter().map(|s| s.parse().map_err(|_| parse_err())).collect::<Result<_>>()?;
                    dims = Some((p[0], p[1], p[2]));
                }
                Some((nr, nc, _)) => {
                    if parts.len() < 3 {
                        return Err(parse_err());
                    }
                    let i: usize = parts[0].parse().map_err(|_| parse_err())?;
                    let j: usize = parts[1].parse().map_err(|_| parse_err())?;
                    let v: f64 = parts[2].parse().map_err(|_| parse_err())?;
                    if i == 0 || j == 0 || i > nr || j > nc {
                        return Err(parse_err());
                    }
                    t.push((i - 1, j - 1, v));
                    if symmetric && i != j {
                        t.push((j - 1, i - 1, v));
                    }
                }
            }
        }
        let (nr, nc, _) = dims.ok_or_else(|| Error::InvalidInput("missing Matrix Market size line".into()))?;
        Ok(CsrMatrix::from_triplets(nr, nc, &t))
    }
}
