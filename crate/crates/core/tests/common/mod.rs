//! Independent reference computations and instance generators for tests.
#![allow(dead_code)]

use gcnsim::sparse::{CsrMatrix, DenseMat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Directed random pattern with uniform weights in `[0.1, 1)`.
pub fn random_matrix(n: usize, density: f64, rng: &mut impl Rng) -> CsrMatrix {
    let mut t = Vec::new();
    for r in 0..n {
        for c in 0..n {
            if rng.random::<f64>() < density {
                t.push((r, c, rng.random_range(0.1..1.0)));
            }
        }
    }
    CsrMatrix::from_triplets(n, n, t)
}

pub fn random_dense(n: usize, f: usize, rng: &mut impl Rng) -> DenseMat {
    DenseMat::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0))
}

/// Row-major dense copy as nested vectors.
pub fn to_rows(a: &CsrMatrix) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; a.n_cols()]; a.n_rows()];
    for (r, c, v) in a.iter() {
        d[r][c] += v;
    }
    d
}

/// `Aᵀ · H` by triple loop.
pub fn oracle_at_h(a: &CsrMatrix, h: &DenseMat) -> Vec<Vec<f64>> {
    let d = to_rows(a);
    let (n, f) = (a.n_cols(), h.n_cols());
    let mut out = vec![vec![0.0; f]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for (k, dk) in d.iter().enumerate() {
            if dk[i] != 0.0 {
                for (j, o) in row.iter_mut().enumerate() {
                    *o += dk[i] * h.get(k, j);
                }
            }
        }
    }
    out
}

pub fn max_diff(got: &DenseMat, want: &[Vec<f64>]) -> f64 {
    let mut m = 0.0f64;
    for (r, row) in want.iter().enumerate() {
        for (c, &w) in row.iter().enumerate() {
            m = m.max((got.get(r, c) - w).abs());
        }
    }
    m
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = b.first().map_or(0, |r| r.len());
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum())
                .collect()
        })
        .collect()
}

fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = a.first().map_or(0, |r| r.len());
    (0..cols).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn dense_rows(m: &DenseMat) -> Vec<Vec<f64>> {
    (0..m.n_rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Mean masked softmax cross-entropy of a ReLU GCN, all in nested vectors.
pub fn oracle_gcn_loss(a: &CsrMatrix, x: &DenseMat, weights: &[Vec<Vec<f64>>], labels: &[usize], mask: &[bool]) -> f64 {
    let at = transpose(&to_rows(a));
    let mut h = dense_rows(x);
    for (l, w) in weights.iter().enumerate() {
        let z = matmul(&matmul(&at, &h), w);
        h = if l + 1 < weights.len() {
            z.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()
        } else {
            z
        };
    }
    let mut total = 0.0;
    let mut count = 0;
    for (r, row) in h.iter().enumerate().filter(|(r, _)| mask[*r]) {
        let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        total += lse - row[labels[r]];
        count += 1;
    }
    total / count as f64
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
