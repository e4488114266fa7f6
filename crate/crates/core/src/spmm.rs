//! Distributed multiplication `Z = M · H` of a block-row distributed sparse
//! operator `M` with a tall-skinny dense matrix, in four variants.
//!
//! `M` is already symmetrically permuted so that block rows are contiguous.
//! For forward propagation `M = Aᵀ`, for backpropagation `M = A`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{run_program, Comm, CommLedger, ProcessGrid};
use crate::sparse::{nnz_cols, spmm_accumulate, BlockLayout, CsrMatrix, DenseMat, NnzColsIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpmmVariant {
    #[serde(rename = "1d-oblivious")]
    Oblivious1d,
    #[serde(rename = "1d-sparse")]
    Sparse1d,
    #[serde(rename = "15d-oblivious")]
    Oblivious15d,
    #[serde(rename = "15d-sparse")]
    Sparse15d,
}

impl SpmmVariant {
    pub const ALL: [SpmmVariant; 4] = [
        SpmmVariant::Oblivious1d,
        SpmmVariant::Sparse1d,
        SpmmVariant::Oblivious15d,
        SpmmVariant::Sparse15d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpmmVariant::Oblivious1d => "1d-oblivious",
            SpmmVariant::Sparse1d => "1d-sparse",
            SpmmVariant::Oblivious15d => "15d-oblivious",
            SpmmVariant::Sparse15d => "15d-sparse",
        }
    }

    pub fn is_sparse(self) -> bool {
        matches!(self, SpmmVariant::Sparse1d | SpmmVariant::Sparse15d)
    }

    pub fn is_15d(self) -> bool {
        matches!(self, SpmmVariant::Oblivious15d | SpmmVariant::Sparse15d)
    }

    /// Checks that `grid` can run this variant, naming the violated constraint.
    pub fn validate(self, grid: &ProcessGrid) -> Result<()> {
        if self.is_15d() {
            grid.stages()?;
        } else if grid.c() != 1 {
            return Err(Error::Grid(format!(
                "{} requires c = 1 (got c={})",
                self.name(),
                grid.c()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SpmmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpmmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SpmmVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (expected 1d-oblivious, 1d-sparse, 15d-oblivious or 15d-sparse)"
                ))
            })
    }
}

/// Block-row distribution of one sparse operator over a process grid.
///
/// Every process of process row `i` holds the same blocks `M_{iq}`.
#[derive(Debug, Clone)]
pub struct DistMatrices {
    grid: ProcessGrid,
    layout: BlockLayout,
    /// `blocks[i][q]`: block `(i, q)` with local row and column indices.
    blocks: Vec<Vec<CsrMatrix>>,
    /// `nnz_cache[i][q]`: `NnzCols(i, q)`.
    nnz_cache: Vec<Vec<NnzColsIndex>>,
}

impl DistMatrices {
    pub fn new(op: &CsrMatrix, layout: BlockLayout, grid: ProcessGrid) -> Result<Self> {
        if !op.is_square() || op.n_rows() != layout.n() {
            return Err(Error::DimensionMismatch {
                op: "DistMatrices::new",
                lhs: op.shape(),
                rhs: (layout.n(), layout.n()),
            });
        }
        if layout.k() != grid.rows() {
            return Err(Error::Grid(format!(
                "block rows ({}) must equal process rows p/c ({})",
                layout.k(),
                grid.rows()
            )));
        }
        let k = layout.k();
        let blocks = (0..k)
            .map(|i| (0..k).map(|q| op.block(layout.range(i), layout.range(q))).collect())
            .collect();
        let nnz_cache = (0..k)
            .map(|i| (0..k).map(|q| nnz_cols(op, (i, q), &layout)).collect())
            .collect();
        Ok(Self {
            grid,
            layout,
            blocks,
            nnz_cache,
        })
    }

    pub fn grid(&self) -> &ProcessGrid {
        &self.grid
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn block(&self, i: usize, q: usize) -> &CsrMatrix {
        &self.blocks[i][q]
    }

    pub fn nnz_cols(&self, i: usize, q: usize) -> &NnzColsIndex {
        &self.nnz_cache[i][q]
    }

    /// Largest `|NnzCols(i, q)|` over off-diagonal block pairs.
    pub fn cut(&self) -> usize {
        let k = self.layout.k();
        (0..k)
            .flat_map(|i| (0..k).filter(move |&q| q != i).map(move |q| (i, q)))
            .map(|(i, q)| self.nnz_cache[i][q].len())
            .max()
            .unwrap_or(0)
    }

    /// Exchanges the cached index lists once, receiver to sender, as the
    /// sparsity-aware variants require before their first multiply. Each
    /// sender checks the received list against its own cache. Returns the
    /// ledger of this exchange, which holds index traffic only.
    pub fn exchange_indices(&self, variant: SpmmVariant) -> Result<CommLedger> {
        variant.validate(&self.grid)?;
        if !variant.is_sparse() {
            return Ok(CommLedger::new(self.grid.p()));
        }
        let (_, ledger) = run_program(&self.grid, |comm| self.index_program(comm, variant))?;
        Ok(ledger)
    }

    fn index_program(&self, comm: &mut Comm<'_>, variant: SpmmVariant) -> Result<()> {
        let (i, j) = self.grid.coords(comm.rank());
        let as_u64 = |ix: &NnzColsIndex| ix.indices.iter().map(|&x| x as u64).collect::<Vec<u64>>();
        let check = |got: Vec<u64>, expect: &NnzColsIndex| -> Result<()> {
            if got != as_u64(expect) {
                return Err(Error::Config(format!(
                    "index list for block {:?} disagrees with the sender's cache",
                    expect.owner_block
                )));
            }
            Ok(())
        };
        if variant.is_15d() {
            let s = self.grid.stages()?;
            let rows = self.grid.rows();
            // Tell each stage owner P(q, j) which of its rows this process needs.
            for k in 0..s {
                let q = j * s + k;
                if q != i {
                    comm.isend(self.grid.rank_of(q, j), k as u64, as_u64(&self.nnz_cache[i][q]))?;
                }
            }
            if i / s == j {
                let k = i % s;
                for l in (0..rows).filter(|&l| l != i) {
                    let got: Vec<u64> = comm.recv(self.grid.rank_of(l, j), k as u64)?;
                    check(got, &self.nnz_cache[l][i])?;
                }
            }
        } else {
            let p = self.grid.p();
            let send = (0..p)
                .map(|dst| if dst == i { Vec::new() } else { as_u64(&self.nnz_cache[i][dst]) })
                .collect();
            let got = comm.all_to_allv::<Vec<u64>>(send)?;
            for (l, list) in got.into_iter().enumerate().filter(|&(l, _)| l != i) {
                check(list, &self.nnz_cache[l][i])?;
            }
        }
        Ok(())
    }

    fn check_local(&self, comm: &Comm<'_>, h_local: &DenseMat) -> Result<usize> {
        if comm.grid() != &self.grid {
            return Err(Error::Grid(format!(
                "operator distributed over {:?} but program runs on {:?}",
                self.grid,
                comm.grid()
            )));
        }
        let (i, _) = self.grid.coords(comm.rank());
        if h_local.n_rows() != self.layout.width(i) {
            return Err(Error::DimensionMismatch {
                op: "distributed spmm (local block row)",
                lhs: (self.layout.width(i), h_local.n_cols()),
                rhs: h_local.shape(),
            });
        }
        Ok(i)
    }
}

/// Rows of `h` listed in `ix`.
fn gather_rows(h: &DenseMat, ix: &NnzColsIndex) -> DenseMat {
    h.select_rows(&ix.indices)
}

/// Zero matrix of `height` rows with the rows of `packed` placed at `ix`.
fn scatter_rows(packed: &DenseMat, ix: &NnzColsIndex, height: usize) -> Result<DenseMat> {
    if packed.n_rows() != ix.len() {
        return Err(Error::DimensionMismatch {
            op: "scatter received rows",
            lhs: (ix.len(), packed.n_cols()),
            rhs: packed.shape(),
        });
    }
    let mut out = DenseMat::zeros(height, packed.n_cols());
    for (r, &dst) in ix.indices.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(packed.row(r));
    }
    Ok(out)
}

/// Computes this process's block row `Z_i` of `M · H` from its block row
/// `h_local = H_i`. Must be called collectively by every rank.
///
/// Contributions are accumulated in ascending source block order starting
/// from zero, so within a family the oblivious and sparsity-aware variants
/// agree bit for bit, and the 1D variants agree bit for bit with the serial
/// product.
pub fn spmm_on_rank(comm: &mut Comm<'_>, dm: &DistMatrices, variant: SpmmVariant, h_local: &DenseMat) -> Result<DenseMat> {
    variant.validate(&dm.grid)?;
    let i = dm.check_local(comm, h_local)?;
    let f = h_local.n_cols();
    let mut z = DenseMat::zeros(dm.layout.width(i), f);
    match variant {
        SpmmVariant::Oblivious1d => {
            for root in 0..dm.grid.p() {
                let buf = (root == i).then(|| h_local.clone());
                let h_root = comm.broadcast(root, buf)?;
                spmm_accumulate(&dm.blocks[i][root], &h_root, &mut z)?;
            }
        }
        SpmmVariant::Sparse1d => {
            let p = dm.grid.p();
            let send = (0..p)
                .map(|dst| {
                    if dst == i {
                        DenseMat::zeros(0, f)
                    } else {
                        gather_rows(h_local, &dm.nnz_cache[dst][i])
                    }
                })
                .collect();
            let received = comm.all_to_allv(send)?;
            for (src, packed) in received.into_iter().enumerate() {
                if src == i {
                    spmm_accumulate(&dm.blocks[i][i], h_local, &mut z)?;
                } else {
                    let h_hat = scatter_rows(&packed, &dm.nnz_cache[i][src], dm.layout.width(src))?;
                    spmm_accumulate(&dm.blocks[i][src], &h_hat, &mut z)?;
                }
            }
        }
        SpmmVariant::Oblivious15d | SpmmVariant::Sparse15d => {
            let (_, j) = dm.grid.coords(comm.rank());
            let s = dm.grid.stages()?;
            let col = dm.grid.col_group(j);
            for k in 0..s {
                let q = j * s + k;
                let owner = dm.grid.rank_of(q, j);
                if variant == SpmmVariant::Oblivious15d {
                    let h_q = comm.broadcast_in(&col, owner, (q == i).then(|| h_local.clone()))?;
                    spmm_accumulate(&dm.blocks[i][q], &h_q, &mut z)?;
                    continue;
                }
                if q == i {
                    for l in (0..dm.grid.rows()).filter(|&l| l != i) {
                        let ix = &dm.nnz_cache[l][q];
                        if !ix.is_empty() {
                            comm.isend(dm.grid.rank_of(l, j), k as u64, gather_rows(h_local, ix))?;
                        }
                    }
                    spmm_accumulate(&dm.blocks[i][q], h_local, &mut z)?;
                } else {
                    let ix = &dm.nnz_cache[i][q];
                    if !ix.is_empty() {
                        let packed: DenseMat = comm.recv(owner, k as u64)?;
                        let h_hat = scatter_rows(&packed, ix, dm.layout.width(q))?;
                        spmm_accumulate(&dm.blocks[i][q], &h_hat, &mut z)?;
                    }
                }
            }
            z = comm.all_reduce_sum(&dm.grid.row_group(i), z)?;
        }
    }
    Ok(z)
}

/// Per-rank block rows of a dense matrix, replicated across process rows.
pub fn scatter_dense(h: &DenseMat, dm: &DistMatrices) -> Result<Vec<DenseMat>> {
    if h.n_rows() != dm.layout.n() {
        return Err(Error::DimensionMismatch {
            op: "scatter_dense",
            lhs: (dm.layout.n(), h.n_cols()),
            rhs: h.shape(),
        });
    }
    Ok((0..dm.grid.p())
        .map(|r| h.row_range(dm.layout.range(dm.grid.coords(r).0)))
        .collect())
}

/// Reassembles a replicated block-row distribution from the ranks of
/// process column 0, after checking that replicas agree bit for bit.
pub fn gather_dense(parts: &[DenseMat], dm: &DistMatrices) -> Result<DenseMat> {
    let grid = &dm.grid;
    for (r, part) in parts.iter().enumerate() {
        let (i, _) = grid.coords(r);
        let lead = &parts[grid.rank_of(i, 0)];
        if part.shape() != lead.shape() || part.data().iter().zip(lead.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(Error::Config(format!(
                "replicas of block row {i} differ between ranks {} and {r}",
                grid.rank_of(i, 0)
            )));
        }
    }
    let leads: Vec<DenseMat> = (0..grid.rows()).map(|i| parts[grid.rank_of(i, 0)].clone()).collect();
    let f = parts.first().map_or(0, DenseMat::n_cols);
    DenseMat::vstack(&leads, f)
}

/// Runs one distributed multiply of the (permuted) dense matrix `h` and
/// returns the gathered product with the ledger of that multiply alone.
pub fn distributed_spmm(dm: &DistMatrices, variant: SpmmVariant, h: &DenseMat) -> Result<(DenseMat, CommLedger)> {
    variant.validate(&dm.grid)?;
    let locals = scatter_dense(h, dm)?;
    let (parts, ledger) = run_program(&dm.grid, |comm| spmm_on_rank(comm, dm, variant, &locals[comm.rank()]))?;
    Ok((gather_dense(&parts, dm)?, ledger))
}

/// `p` broadcasts of whole block rows, then local products.
pub fn spmm_1d_oblivious(dm: &DistMatrices, h: &DenseMat) -> Result<(DenseMat, CommLedger)> {
    distributed_spmm(dm, SpmmVariant::Oblivious1d, h)
}

/// One all-to-all exchange of exactly the rows each block needs.
pub fn spmm_1d_sparse(dm: &DistMatrices, h: &DenseMat) -> Result<(DenseMat, CommLedger)> {
    distributed_spmm(dm, SpmmVariant::Sparse1d, h)
}

/// `p / c²` stages of column-group broadcasts, then a row-group all-reduce.
pub fn spmm_15d_oblivious(dm: &DistMatrices, h: &DenseMat) -> Result<(DenseMat, CommLedger)> {
    distributed_spmm(dm, SpmmVariant::Oblivious15d, h)
}

/// `p / c²` stages of point-to-point row transfers, then a row-group all-reduce.
pub fn spmm_15d_sparse(dm: &DistMatrices, h: &DenseMat) -> Result<(DenseMat, CommLedger)> {
    distributed_spmm(dm, SpmmVariant::Sparse15d, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Primitive;
    use crate::sparse::{csr_from_edges, local_spmm, transpose_csr};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_graph(n: usize, density: f64, seed: u64) -> CsrMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if rng.random::<f64>() < density {
                    t.push((u, v, rng.random_range(-1.0..1.0)));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    fn random_dense(n: usize, f: usize, seed: u64) -> DenseMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMat::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0))
    }

    fn block_diag(blocks: usize, size: usize) -> CsrMatrix {
        let mut e = Vec::new();
        for b in 0..blocks {
            for u in 0..size {
                for v in 0..size {
                    e.push((b * size + u, b * size + v, 1.0));
                }
            }
        }
        csr_from_edges(&e, blocks * size, false).unwrap()
    }

    fn setup(a: &CsrMatrix, p: usize, c: usize) -> DistMatrices {
        let grid = ProcessGrid::new(p, c).unwrap();
        DistMatrices::new(&transpose_csr(a), BlockLayout::even(a.n_rows(), grid.rows()), grid).unwrap()
    }

    fn serial(a: &CsrMatrix, h: &DenseMat) -> DenseMat {
        local_spmm(&transpose_csr(a), h).unwrap()
    }

    #[test]
    fn single_process_is_local_and_silent() {
        let a = random_graph(7, 0.3, 1);
        let h = random_dense(7, 3, 2);
        let dm = setup(&a, 1, 1);
        for v in SpmmVariant::ALL {
            let (z, ledger) = distributed_spmm(&dm, v, &h).unwrap();
            assert_eq!(z, serial(&a, &h));
            assert_eq!(ledger.data_bytes(), 0);
        }
    }

    #[test]
    fn oblivious_1d_moves_everything_even_when_useless() {
        let a = block_diag(4, 2);
        let h = random_dense(8, 3, 5);
        let dm = setup(&a, 4, 1);
        let (z, ledger) = spmm_1d_oblivious(&dm, &h).unwrap();
        assert_eq!(z, serial(&a, &h));
        for r in 0..4 {
            // Each root sends its 2-row block to 3 others.
            assert_eq!(ledger.ranks[r].counters(Primitive::Broadcast).bytes_sent, 3 * 2 * 3 * 8);
        }
    }

    #[test]
    fn small_random_variants_match_serial_and_each_other() {
        let a = random_graph(6, 0.4, 9);
        let h = random_dense(6, 2, 10);
        let dm = setup(&a, 2, 1);
        let (zo, _) = spmm_1d_oblivious(&dm, &h).unwrap();
        let (zs, _) = spmm_1d_sparse(&dm, &h).unwrap();
        assert!(zo.max_abs_diff(&serial(&a, &h)) <= 1e-10);
        assert_eq!(zo, zs);
    }

    #[test]
    fn aligned_block_diagonal_sparse_moves_nothing() {
        let a = block_diag(4, 3);
        let h = random_dense(12, 2, 3);
        let dm = setup(&a, 4, 1);
        let (z, ledger) = spmm_1d_sparse(&dm, &h).unwrap();
        assert_eq!(z, serial(&a, &h));
        assert_eq!(ledger.data_bytes(), 0);
    }

    #[test]
    fn sparse_1d_pair_messages_are_nnz_cols_rows() {
        let a = random_graph(8, 0.25, 17);
        let f = 3;
        let h = random_dense(8, f, 18);
        let dm = setup(&a, 4, 1);
        let (_, ledger) = spmm_1d_sparse(&dm, &h).unwrap();
        for src in 0..4 {
            for dst in (0..4).filter(|&d| d != src) {
                let rows = dm.nnz_cols(dst, src).len() as u64;
                assert_eq!(ledger.pair_bytes(src, dst, &[Primitive::Alltoallv]), rows * f as u64 * 8);
                assert!(rows as usize <= dm.cut());
            }
        }
    }

    #[test]
    fn fifteen_d_matches_serial() {
        let a = random_graph(8, 0.3, 21);
        let h = random_dense(8, 3, 22);
        for (p, c) in [(4, 2), (8, 2)] {
            let dm = setup(&a, p, c);
            for v in [SpmmVariant::Oblivious15d, SpmmVariant::Sparse15d] {
                let (z, _) = distributed_spmm(&dm, v, &h).unwrap();
                assert!(z.max_abs_diff(&serial(&a, &h)) <= 1e-10, "{v} p={p} c={c}");
            }
        }
    }

    #[test]
    fn fifteen_d_block_diagonal_moves_only_reductions() {
        let a = block_diag(4, 2);
        let h = random_dense(8, 2, 4);
        let dm = setup(&a, 8, 2);
        let (z, ledger) = spmm_15d_sparse(&dm, &h).unwrap();
        assert_eq!(z, serial(&a, &h));
        assert_eq!(ledger.bytes_by_primitive(Primitive::P2p), 0);
        assert!(ledger.bytes_by_primitive(Primitive::Allreduce) > 0);
        let (z, ledger) = spmm_15d_oblivious(&dm, &h).unwrap();
        assert!(z.max_abs_diff(&serial(&a, &h)) <= 1e-10);
        assert!(ledger.bytes_by_primitive(Primitive::Broadcast) > 0);
    }

    #[test]
    fn c_one_reduces_to_1d() {
        let a = random_graph(10, 0.2, 31);
        let h = random_dense(10, 4, 32);
        let dm = setup(&a, 4, 1);
        let (z1, l1) = spmm_1d_sparse(&dm, &h).unwrap();
        let (z15, l15) = spmm_15d_sparse(&dm, &h).unwrap();
        assert_eq!(z1, z15);
        assert_eq!(l1.pair_matrix(&[Primitive::Alltoallv]), l15.pair_matrix(&[Primitive::P2p]));
        let (o1, m1) = spmm_1d_oblivious(&dm, &h).unwrap();
        let (o15, m15) = spmm_15d_oblivious(&dm, &h).unwrap();
        assert_eq!(o1, o15);
        assert_eq!(m1.pair_matrix(&[Primitive::Broadcast]), m15.pair_matrix(&[Primitive::Broadcast]));
    }

    #[test]
    fn grid_constraints_are_named() {
        let a = random_graph(12, 0.2, 1);
        let h = random_dense(12, 1, 1);
        let dm = setup(&a, 6, 2);
        let err = spmm_15d_sparse(&dm, &h).unwrap_err();
        assert!(err.to_string().contains("c^2 divides p"), "{err}");
        let err = spmm_1d_sparse(&dm, &h).unwrap_err();
        assert!(err.to_string().contains("c = 1"), "{err}");
    }

    #[test]
    fn index_exchange_charges_index_bytes_only() {
        let a = random_graph(12, 0.2, 41);
        let dm = setup(&a, 4, 1);
        let l = dm.exchange_indices(SpmmVariant::Sparse1d).unwrap();
        assert_eq!(l.data_bytes(), 0);
        let expect: usize = (0..4)
            .flat_map(|i| (0..4).filter(move |&q| q != i).map(move |q| (i, q)))
            .map(|(i, q)| dm.nnz_cols(i, q).len())
            .sum();
        assert_eq!(l.index_bytes(), 8 * expect as u64);
        let dm2 = setup(&a, 8, 2);
        let l2 = dm2.exchange_indices(SpmmVariant::Sparse15d).unwrap();
        assert!(l2.is_conserved());
        assert_eq!(dm.exchange_indices(SpmmVariant::Oblivious1d).unwrap().index_bytes(), 0);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in SpmmVariant::ALL {
            assert_eq!(v.name().parse::<SpmmVariant>().unwrap(), v);
        }
        assert!("2d".parse::<SpmmVariant>().is_err());
    }
}
