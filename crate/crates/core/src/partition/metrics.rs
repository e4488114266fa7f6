use serde::{Deserialize, Serialize};

use super::Partition;
use crate::sparse::CsrMatrix;

/// Send-volume statistics of a partition for one sparsity-aware SpMM.
///
/// Volumes are in dense-matrix rows; multiply by `f * 8` for bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommMetrics {
    pub k: usize,
    pub f: usize,
    pub per_part_send_rows: Vec<usize>,
    /// `pair_send_rows[src][dst]` = rows part `src` sends to part `dst`,
    /// i.e. `|NnzCols(dst, src)|` of the transposed operator.
    pub pair_send_rows: Vec<Vec<usize>>,
    pub total_rows: usize,
    pub max_rows: usize,
    pub avg_rows: f64,
    pub imbalance_pct: f64,
    pub cut_p: usize,
}

impl CommMetrics {
    pub fn total_bytes(&self) -> u64 {
        (self.total_rows * self.f * 8) as u64
    }

    pub fn max_bytes(&self) -> u64 {
        (self.max_rows * self.f * 8) as u64
    }
}

/// Load imbalance of a maximum over an average, in percent.
pub fn imbalance_pct(avg: f64, max: f64) -> f64 {
    if avg <= 0.0 {
        0.0
    } else {
        100.0 * (max - avg) / avg
    }
}

/// Distinct parts (other than `own`) holding an out-neighbor of `u`.
pub(crate) fn foreign_parts(a: &CsrMatrix, assignment: &[usize], u: usize, own: usize) -> Vec<usize> {
    let mut parts: Vec<usize> = a
        .row(u)
        .0
        .iter()
        .map(|&v| assignment[v])
        .filter(|&q| q != own)
        .collect();
    parts.sort_unstable();
    parts.dedup();
    parts
}

/// Volume metrics of the multiplication by `Aᵀ` under partition `p`.
///
/// Vertex `u` of part `j` must be sent to part `i ≠ j` exactly when column
/// `u` of the `(i, j)` block of `Aᵀ` is nonempty, i.e. when `u` has an
/// out-neighbor in `i`.
pub fn comm_metrics(a: &CsrMatrix, p: &Partition, f: usize) -> CommMetrics {
    let k = p.k();
    let assignment = p.assignment();
    let mut pair = vec![vec![0usize; k]; k];
    for u in 0..a.n_rows() {
        let own = assignment[u];
        for dst in foreign_parts(a, assignment, u, own) {
            pair[own][dst] += 1;
        }
    }
    let per_part: Vec<usize> = pair.iter().map(|row| row.iter().sum()).collect();
    let total_rows = per_part.iter().sum();
    let max_rows = per_part.iter().copied().max().unwrap_or(0);
    let avg_rows = total_rows as f64 / k as f64;
    let cut_p = pair.iter().flatten().copied().max().unwrap_or(0);
    CommMetrics {
        k,
        f,
        per_part_send_rows: per_part,
        pair_send_rows: pair,
        total_rows,
        max_rows,
        avg_rows,
        imbalance_pct: imbalance_pct(avg_rows, max_rows as f64),
        cut_p,
    }
}
