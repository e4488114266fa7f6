//! K-way vertex partitions and the volume metrics they induce.
//!
//! A [`Partition`] carries both the vertex → part map and the relabelling
//! that makes every part a contiguous range of new vertex ids, so the
//! permuted matrix can be cut into variable-size block rows.

mod greedy;
mod metrics;
mod refine;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{BlockLayout, CsrMatrix, DenseMat};

pub use greedy::{balance_cap, edgecut, greedy_tv_partition, BalanceCap};
pub use metrics::{comm_metrics, imbalance_pct, CommMetrics};
pub use refine::{refine_cost, volume_balanced_refine, RefineConfig};

/// Default load tolerance on per-part nonzeros.
pub const DEFAULT_EPSILON: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    n: usize,
    k: usize,
    assignment: Vec<usize>,
    perm: Vec<usize>,
    layout: BlockLayout,
}

impl Partition {
    /// Builds a partition from a part map. New ids are assigned part by part,
    /// keeping original order inside each part.
    pub fn from_assignment(assignment: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidPartition("k must be at least 1".into()));
        }
        if let Some((v, &q)) = assignment.iter().enumerate().find(|(_, &q)| q >= k) {
            return Err(Error::InvalidPartition(format!(
                "vertex {v} assigned to part {q}, but k = {k}"
            )));
        }
        let n = assignment.len();
        let mut sizes = vec![0usize; k];
        for &q in &assignment {
            sizes[q] += 1;
        }
        let layout = BlockLayout::from_sizes(&sizes);
        let mut next: Vec<usize> = layout.offsets()[..k].to_vec();
        let mut perm = vec![0; n];
        for (v, &q) in assignment.iter().enumerate() {
            perm[v] = next[q];
            next[q] += 1;
        }
        Ok(Self {
            n,
            k,
            assignment,
            perm,
            layout,
        })
    }

    /// Builds a partition from a relabelling and the block ranges over new ids.
    pub fn from_perm(perm: Vec<usize>, layout: BlockLayout) -> Result<Self> {
        let n = perm.len();
        if layout.n() != n {
            return Err(Error::InvalidPartition(format!(
                "layout covers {} ids but permutation has {}",
                layout.n(),
                n
            )));
        }
        let mut seen = vec![false; n];
        for &x in &perm {
            if x >= n || std::mem::replace(&mut seen[x], true) {
                return Err(Error::InvalidPartition("permutation is not a bijection".into()));
            }
        }
        let assignment = perm.iter().map(|&x| layout.block_of(x)).collect();
        Ok(Self {
            n,
            k: layout.k(),
            assignment,
            perm,
            layout,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn part_of(&self, v: usize) -> usize {
        self.assignment[v]
    }

    /// Old id → new id.
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// New id → old id.
    pub fn inverse_perm(&self) -> Vec<usize> {
        let mut inv = vec![0; self.n];
        for (old, &new) in self.perm.iter().enumerate() {
            inv[new] = old;
        }
        inv
    }

    /// Block ranges over the new ids.
    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.layout.sizes()
    }

    /// Checks that `self` describes a partition of `a`'s vertices.
    pub fn check_matrix(&self, a: &CsrMatrix) -> Result<()> {
        if !a.is_square() || a.n_rows() != self.n {
            return Err(Error::InvalidPartition(format!(
                "partition of {} vertices does not fit a {}x{} matrix",
                self.n,
                a.n_rows(),
                a.n_cols()
            )));
        }
        Ok(())
    }
}

/// Contiguous blocks of the original ids with sizes differing by at most one.
pub fn block_partition(n: usize, k: usize) -> Result<Partition> {
    check_k(n, k)?;
    Partition::from_perm((0..n).collect(), BlockLayout::even(n, k))
}

/// Seeded uniform random relabelling followed by an even block split.
pub fn random_partition(n: usize, k: usize, seed: u64) -> Result<Partition> {
    check_k(n, k)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Partition::from_perm(perm, BlockLayout::even(n, k))
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidPartition(format!(
            "cannot split {n} vertices into {k} parts"
        )));
    }
    Ok(())
}

/// Total-volume partition followed by volume-balancing refinement.
pub fn gvb_partition(a: &CsrMatrix, k: usize, cfg: &RefineConfig) -> Result<Partition> {
    let base = greedy_tv_partition(a, k, cfg.epsilon)?;
    volume_balanced_refine(a, &base, cfg)
}

/// Symmetric permutation `P A Pᵀ` together with the matching row permutation of `h`.
pub fn apply_partition(a: &CsrMatrix, h: &DenseMat, p: &Partition) -> Result<(CsrMatrix, DenseMat)> {
    p.check_matrix(a)?;
    if h.n_rows() != a.n_rows() {
        return Err(Error::DimensionMismatch {
            op: "apply_partition",
            lhs: a.shape(),
            rhs: h.shape(),
        });
    }
    let inv = p.inverse_perm();
    Ok((a.permute_symmetric(p.perm()), h.select_rows(&inv)))
}

/// Moves per-vertex values into new-id order.
pub fn permute_values<T: Clone>(values: &[T], p: &Partition) -> Vec<T> {
    p.inverse_perm().into_iter().map(|old| values[old].clone()).collect()
}

/// Undirected neighbor lists (pattern of `A + Aᵀ`, self-loops dropped).
pub(crate) fn undirected_adjacency(a: &CsrMatrix) -> Vec<Vec<usize>> {
    let n = a.n_rows();
    let mut adj = vec![Vec::new(); n];
    for (r, c, _) in a.iter() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Per-vertex load used for balance: stored entries in the row, at least one.
pub(crate) fn vertex_weights(a: &CsrMatrix) -> Vec<usize> {
    (0..a.n_rows()).map(|r| a.row_nnz(r).max(1)).collect()
}
