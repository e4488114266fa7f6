//! Seeded synthetic graphs, features and labels. All generators return
//! unnormalized symmetric adjacency matrices with unit weights and no
//! self-loops.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sparse::{csr_from_edges, CsrMatrix, DenseMat};

/// Stochastic block model with `blocks` contiguous communities of near-equal
/// size. Each unordered pair is joined with probability `p_in` inside a
/// community and `p_out` across. Labels are community ids.
pub fn sbm(n: usize, blocks: usize, p_in: f64, p_out: f64, seed: u64) -> Result<(CsrMatrix, Vec<usize>)> {
    if blocks == 0 || blocks > n {
        return Err(Error::Config(format!("cannot form {blocks} communities from {n} vertices")));
    }
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name} must lie in [0, 1] (got {p})")));
        }
    }
    let labels: Vec<usize> = (0..n).map(|v| v * blocks / n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let prob = if labels[u] == labels[v] { p_in } else { p_out };
            if rng.random::<f64>() < prob {
                edges.push((u, v, 1.0));
            }
        }
    }
    Ok((csr_from_edges(&edges, n, true)?, labels))
}

/// 4-neighbor `rows × cols` lattice; vertex `(r, c)` has id `r * cols + c`.
pub fn grid2d(rows: usize, cols: usize) -> Result<CsrMatrix> {
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                edges.push((v, v + 1, 1.0));
            }
            if r + 1 < rows {
                edges.push((v, v + cols, 1.0));
            }
        }
    }
    csr_from_edges(&edges, rows * cols, true)
}

/// Vertex 0 joined to `leaves` others.
pub fn star(leaves: usize) -> Result<CsrMatrix> {
    let edges: Vec<_> = (1..=leaves).map(|v| (0, v, 1.0)).collect();
    csr_from_edges(&edges, leaves + 1, true)
}

/// `count` disjoint cliques of `size` vertices on consecutive ids.
pub fn block_diagonal_cliques(count: usize, size: usize) -> Result<CsrMatrix> {
    let mut edges = Vec::new();
    for b in 0..count {
        for u in 0..size {
            for v in (u + 1)..size {
                edges.push((b * size + u, b * size + v, 1.0));
            }
        }
    }
    csr_from_edges(&edges, count * size, true)
}

/// Irregular graph: a `side × side` lattice plus `hubs` extra vertices
/// (ids after the lattice), each joined to `hub_degree` distinct lattice
/// vertices drawn uniformly without replacement.
pub fn star_augmented_grid(side: usize, hubs: usize, hub_degree: usize, seed: u64) -> Result<CsrMatrix> {
    let base = side * side;
    if hub_degree > base {
        return Err(Error::Config(format!(
            "hub degree {hub_degree} exceeds the {base} lattice vertices"
        )));
    }
    let mut edges: Vec<(usize, usize, f64)> = grid2d(side, side)?
        .iter()
        .filter(|&(u, v, _)| u < v)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for h in 0..hubs {
        let mut targets = sample(&mut rng, base, hub_degree).into_vec();
        targets.sort_unstable();
        edges.extend(targets.into_iter().map(|v| (base + h, v, 1.0)));
    }
    csr_from_edges(&edges, base + hubs, true)
}

/// Features `N(0, 1)` per entry plus `signal` on column `label % f`.
pub fn synthetic_features(labels: &[usize], f: usize, signal: f64, seed: u64) -> Result<DenseMat> {
    if f == 0 {
        return Err(Error::Config("feature width must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(DenseMat::from_fn(labels.len(), f, |r, c| {
        let noise: f64 = rng.sample(StandardNormal);
        noise + if c == labels[r] % f { signal } else { 0.0 }
    }))
}

/// Seeded mask selecting `round(fraction · n)` vertices, at least one.
pub fn train_mask(n: usize, fraction: f64, seed: u64) -> Result<Vec<bool>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1] (got {fraction})")));
    }
    let count = ((fraction * n as f64).round() as usize).clamp(1, n.max(1));
    let mut mask = vec![false; n];
    if n == 0 {
        return Ok(mask);
    }
    for v in sample(&mut ChaCha8Rng::seed_from_u64(seed), n, count) {
        mask[v] = true;
    }
    Ok(mask)
}
