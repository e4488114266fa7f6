//! Sequential sparse and dense kernels.
//!
//! Everything the distributed algorithms compute locally goes through this
//! module: CSR construction from edge lists, the self-loop symmetric
//! normalization used by GCN layers, sparse-times-dense and dense-times-dense
//! products, transposition, and the per-block nonzero-column scan that
//! decides which dense rows a sparsity-aware exchange has to move.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix of `f64`.
///
/// Canonical form: row pointers non-decreasing, column indices strictly
/// increasing within a row, one value per stored entry.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from raw CSR arrays, checking every structural invariant.
    pub fn try_new(
        n_rows: usize,
        n_cols: usize,
        row_ptr: Vec<usize>,
        col_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::Config(format!("malformed CSR: {msg}")));
        if row_ptr.len() != n_rows + 1 {
            return bad(format!(
                "row_ptr has length {} for {} rows",
                row_ptr.len(),
                n_rows
            ));
        }
        if row_ptr[0] != 0 || row_ptr[n_rows] != col_idx.len() {
            return bad("row_ptr must start at 0 and end at nnz".into());
        }
        if col_idx.len() != values.len() {
            return bad(format!(
                "{} column indices but {} values",
                col_idx.len(),
                values.len()
            ));
        }
        for r in 0..n_rows {
            if row_ptr[r] > row_ptr[r + 1] {
                return bad(format!("row_ptr decreases at row {r}"));
            }
            let cols = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("columns of row {r} not strictly increasing"));
            }
            if let Some(&c) = cols.last() {
                if c >= n_cols {
                    return bad(format!("column {c} in row {r} exceeds width {n_cols}"));
                }
            }
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from unsorted triplets. Duplicates are summed and
    /// entries that sum to exactly zero are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut t: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        debug_assert!(t.iter().all(|&(r, c, _)| r < n_rows && c < n_cols));
        t.sort_by_key(|a| (a.0, a.1));

        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values = Vec::with_capacity(t.len());
        let mut iter = t.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if (r2, c2) != (r, c) {
                    break;
                }
                v += v2;
                iter.next();
            }
            if v != 0.0 {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                values.push(v);
            }
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Dense row-major copy as a [`DenseMat`].
    pub fn from_dense(d: &DenseMat) -> Self {
        let triplets = (0..d.n_rows()).flat_map(|r| {
            (0..d.n_cols()).filter_map(move |c| {
                let v = d.get(r, c);
                (v != 0.0).then_some((r, c, v))
            })
        });
        Self::from_triplets(d.n_rows(), d.n_cols(), triplets)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
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

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// Stored value at `(r, c)`, or 0.0 when structurally absent.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Iterator over `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn to_dense(&self) -> DenseMat {
        let mut d = DenseMat::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.iter() {
            d.set(r, c, v);
        }
        d
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    /// True when the matrix equals its transpose, values included.
    pub fn is_symmetric(&self) -> bool {
        self.is_square() && transpose_csr(self) == *self
    }

    /// Sub-block with local row and column indices.
    pub fn block(&self, rows: Range<usize>, cols: Range<usize>) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in rows.clone() {
            let (rc, rv) = self.row(r);
            let lo = rc.partition_point(|&c| c < cols.start);
            let hi = rc.partition_point(|&c| c < cols.end);
            col_idx.extend(rc[lo..hi].iter().map(|&c| c - cols.start));
            values.extend_from_slice(&rv[lo..hi]);
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            n_rows: rows.len(),
            n_cols: cols.len(),
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Structural copy with every column mapped through `perm` and every row
    /// moved to `perm[row]`, i.e. `P A Pᵀ` for the permutation old → new.
    pub fn permute_symmetric(&self, perm: &[usize]) -> CsrMatrix {
        debug_assert!(self.is_square() && perm.len() == self.n_rows);
        let triplets = self.iter().map(|(r, c, v)| (perm[r], perm[c], v));
        // No entry can cancel: the mapping is a bijection on positions.
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, triplets)
    }
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMat {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl DenseMat {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    pub fn from_vec(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::DimensionMismatch {
                op: "DenseMat::from_vec",
                lhs: (n_rows, n_cols),
                rhs: (data.len(), 1),
            });
        }
        Ok(Self {
            n_rows,
            n_cols,
            data,
        })
    }

    pub fn from_fn(n_rows: usize, n_cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in 0..n_rows {
            for c in 0..n_cols {
                data.push(f(r, c));
            }
        }
        Self {
            n_rows,
            n_cols,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n_cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.n_cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }

    /// Copy of the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> DenseMat {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        DenseMat {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            data,
        }
    }

    pub fn row_range(&self, rows: Range<usize>) -> DenseMat {
        DenseMat {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            data: self.data[rows.start * self.n_cols..rows.end * self.n_cols].to_vec(),
        }
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn vstack(parts: &[DenseMat], n_cols: usize) -> Result<DenseMat> {
        let mut data = Vec::new();
        let mut n_rows = 0;
        for p in parts {
            if p.n_cols != n_cols {
                return Err(Error::DimensionMismatch {
                    op: "vstack",
                    lhs: (p.n_rows, p.n_cols),
                    rhs: (p.n_rows, n_cols),
                });
            }
            n_rows += p.n_rows;
            data.extend_from_slice(&p.data);
        }
        Ok(DenseMat {
            n_rows,
            n_cols,
            data,
        })
    }

    pub fn transpose(&self) -> DenseMat {
        DenseMat::from_fn(self.n_cols, self.n_rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMat {
        DenseMat {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Largest absolute entrywise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &DenseMat) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Contiguous block ranges over `[0, n)`; block `i` spans
/// `offsets[i]..offsets[i + 1]`. Blocks may differ in size and may be empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn from_offsets(offsets: Vec<usize>) -> Result<Self> {
        if offsets.len() < 2 || offsets[0] != 0 {
            return Err(Error::InvalidPartition(
                "block offsets must start at 0 and describe at least one block".into(),
            ));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidPartition("block offsets decrease".into()));
        }
        Ok(Self { offsets })
    }

    /// Block sizes differing by at most one; the first `n mod k` blocks are larger.
    pub fn even(n: usize, k: usize) -> Self {
        assert!(k >= 1);
        let (base, extra) = (n / k, n % k);
        let mut offsets = Vec::with_capacity(k + 1);
        offsets.push(0);
        for i in 0..k {
            let size = base + usize::from(i < extra);
            offsets.push(offsets[i] + size);
        }
        Self { offsets }
    }

    pub fn from_sizes(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        for (i, s) in sizes.iter().enumerate() {
            offsets.push(offsets[i] + s);
        }
        Self { offsets }
    }

    pub fn k(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn width(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Block containing global index `x`.
    pub fn block_of(&self, x: usize) -> usize {
        debug_assert!(x < self.n());
        // Last offset <= x among the first k offsets; skips empty blocks.
        self.offsets[..self.k()].partition_point(|&o| o <= x) - 1
    }
}

/// Local column indices of block `(i, j)` that hold at least one stored entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NnzColsIndex {
    pub owner_block: (usize, usize),
    pub indices: Vec<usize>,
}

impl NnzColsIndex {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Builds an `n × n` matrix from weighted edges, summing duplicates.
///
/// With `symmetrize`, every edge `(u, v, w)` also contributes `(v, u, w)`;
/// self-loops are added once.
pub fn csr_from_edges(edges: &[(usize, usize, f64)], n: usize, symmetrize: bool) -> Result<CsrMatrix> {
    if let Some((index, &(u, v, _))) = edges.iter().enumerate().find(|(_, e)| e.0 >= n || e.1 >= n) {
        return Err(Error::EdgeOutOfRange { index, u, v, n });
    }
    let forward = edges.iter().copied();
    let mirrored = edges
        .iter()
        .filter(|&&(u, v, _)| symmetrize && u != v)
        .map(|&(u, v, w)| (v, u, w));
    Ok(CsrMatrix::from_triplets(n, n, forward.chain(mirrored)))
}

/// Self-loop symmetric normalization `D^{-1/2} (A + I) D^{-1/2}` where `D` holds
/// the row sums of `A + I`.
///
/// Rows whose degree is not positive get a zero scale and their entries are
/// dropped.
pub fn gcn_normalize(a: &CsrMatrix) -> Result<CsrMatrix> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            op: "gcn_normalize",
            lhs: a.shape(),
            rhs: (a.n_cols, a.n_rows),
        });
    }
    let n = a.n_rows;
    let with_loops = CsrMatrix::from_triplets(n, n, a.iter().chain((0..n).map(|i| (i, i, 1.0))));
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|r| {
            let d: f64 = with_loops.row(r).1.iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let scaled = with_loops
        .iter()
        .map(|(r, c, v)| (r, c, inv_sqrt[r] * v * inv_sqrt[c]));
    Ok(CsrMatrix::from_triplets(n, n, scaled))
}

/// Accumulates `a · h` into `out`, row by row with columns ascending.
pub fn spmm_accumulate(a: &CsrMatrix, h: &DenseMat, out: &mut DenseMat) -> Result<()> {
    if a.n_cols != h.n_rows || out.n_rows != a.n_rows || out.n_cols != h.n_cols {
        return Err(Error::DimensionMismatch {
            op: "spmm",
            lhs: a.shape(),
            rhs: h.shape(),
        });
    }
    let f = h.n_cols;
    for r in 0..a.n_rows {
        let (cols, vals) = a.row(r);
        let z = &mut out.data[r * f..(r + 1) * f];
        for (&c, &v) in cols.iter().zip(vals) {
            let hr = &h.data[c * f..(c + 1) * f];
            for (zk, hk) in z.iter_mut().zip(hr) {
                *zk += v * hk;
            }
        }
    }
    Ok(())
}

/// Sparse-times-dense product `a · h`.
pub fn local_spmm(a: &CsrMatrix, h: &DenseMat) -> Result<DenseMat> {
    let mut out = DenseMat::zeros(a.n_rows, h.n_cols);
    spmm_accumulate(a, h, &mut out)?;
    Ok(out)
}

/// Dense product `a · b`.
pub fn gemm(a: &DenseMat, b: &DenseMat) -> Result<DenseMat> {
    if a.n_cols != b.n_rows {
        return Err(Error::DimensionMismatch {
            op: "gemm",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = DenseMat::zeros(a.n_rows, b.n_cols);
    for r in 0..a.n_rows {
        let o = &mut out.data[r * b.n_cols..(r + 1) * b.n_cols];
        for k in 0..a.n_cols {
            let v = a.get(r, k);
            if v == 0.0 {
                continue;
            }
            for (oc, bc) in o.iter_mut().zip(b.row(k)) {
                *oc += v * bc;
            }
        }
    }
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn gemm_tn(a: &DenseMat, b: &DenseMat) -> Result<DenseMat> {
    if a.n_rows != b.n_rows {
        return Err(Error::DimensionMismatch {
            op: "gemm_tn",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut out = DenseMat::zeros(a.n_cols, b.n_cols);
    for r in 0..a.n_rows {
        let br = b.row(r);
        for (k, &v) in a.row(r).iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (oc, bc) in out.row_mut(k).iter_mut().zip(br) {
                *oc += v * bc;
            }
        }
    }
    Ok(out)
}

/// Columns of block `(i, j)` of `a` (blocked by `layout` on both axes) that
/// contain at least one stored entry, as local column indices.
///
/// This is a structural scan: a stored 0.0 still marks its column.
pub fn nnz_cols(a: &CsrMatrix, block: (usize, usize), layout: &BlockLayout) -> NnzColsIndex {
    let (i, j) = block;
    let cols = layout.range(j);
    let mut seen = vec![false; cols.len()];
    for r in layout.range(i) {
        let (rc, _) = a.row(r);
        let lo = rc.partition_point(|&c| c < cols.start);
        let hi = rc.partition_point(|&c| c < cols.end);
        for &c in &rc[lo..hi] {
            seen[c - cols.start] = true;
        }
    }
    NnzColsIndex {
        owner_block: block,
        indices: seen
            .iter()
            .enumerate()
            .filter_map(|(h, &s)| s.then_some(h))
            .collect(),
    }
}

/// Exact transpose in canonical CSR form.
pub fn transpose_csr(a: &CsrMatrix) -> CsrMatrix {
    let mut counts = vec![0usize; a.n_cols + 1];
    for &c in &a.col_idx {
        counts[c + 1] += 1;
    }
    for c in 0..a.n_cols {
        counts[c + 1] += counts[c];
    }
    let row_ptr = counts.clone();
    let mut next = counts;
    let mut col_idx = vec![0; a.nnz()];
    let mut values = vec![0.0; a.nnz()];
    // Rows are visited in ascending order, so each transposed row comes out sorted.
    for (r, c, v) in a.iter() {
        let slot = next[c];
        col_idx[slot] = r;
        values[slot] = v;
        next[c] += 1;
    }
    CsrMatrix {
        n_rows: a.n_cols,
        n_cols: a.n_rows,
        row_ptr,
        col_idx,
        values,
    }
}
