//! Single-level total-volume partitioner: breadth-first region growing
//! followed by greedy edgecut-reducing vertex moves.

use std::collections::VecDeque;

use super::{check_k, undirected_adjacency, vertex_weights, Partition};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

const MAX_PASSES: usize = 32;

/// Upper bound on per-part load (row nonzeros).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceCap {
    pub cap: f64,
    /// The nominal `(1 + epsilon) * load / k` was below the heaviest single
    /// row and had to be raised to it.
    pub relaxed: bool,
}

pub fn balance_cap(a: &CsrMatrix, k: usize, epsilon: f64) -> BalanceCap {
    let w = vertex_weights(a);
    let total: usize = w.iter().sum();
    let nominal = (1.0 + epsilon) * total as f64 / k as f64;
    let heaviest = w.iter().copied().max().unwrap_or(0) as f64;
    if heaviest > nominal {
        BalanceCap {
            cap: heaviest,
            relaxed: true,
        }
    } else {
        BalanceCap {
            cap: nominal,
            relaxed: false,
        }
    }
}

/// Number of undirected edges whose endpoints lie in different parts.
pub fn edgecut(a: &CsrMatrix, p: &Partition) -> usize {
    undirected_adjacency(a)
        .iter()
        .enumerate()
        .map(|(u, nbrs)| {
            nbrs.iter()
                .filter(|&&v| v > u && p.part_of(u) != p.part_of(v))
                .count()
        })
        .sum()
}

/// Partitions `a` into `k` parts aiming at a small edgecut under the
/// nonzero balance constraint.
///
/// If a single row outweighs the cap, the cap is raised to that row and a
/// warning is printed to stderr; the partition is still produced.
pub fn greedy_tv_partition(a: &CsrMatrix, k: usize, epsilon: f64) -> Result<Partition> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            op: "greedy_tv_partition",
            lhs: a.shape(),
            rhs: (a.n_cols(), a.n_rows()),
        });
    }
    let n = a.n_rows();
    check_k(n, k)?;
    let cap = balance_cap(a, k, epsilon);
    if cap.relaxed {
        eprintln!(
            "warning: a single row exceeds the balance cap for k={k}, epsilon={epsilon}; \
             relaxing the cap to {} nonzeros",
            cap.cap
        );
    }
    let adj = undirected_adjacency(a);
    let w = vertex_weights(a);
    let mut part = grow_regions(&adj, &w, k);
    rebalance(&adj, &w, &mut part, k, cap.cap);
    reduce_edgecut(&adj, &w, &mut part, k, cap.cap);
    Partition::from_assignment(part, k)
}

fn grow_regions(adj: &[Vec<usize>], w: &[usize], k: usize) -> Vec<usize> {
    const UNASSIGNED: usize = usize::MAX;
    let n = adj.len();
    let mut part = vec![UNASSIGNED; n];
    let mut queued = vec![usize::MAX; n];
    let mut remaining_weight: usize = w.iter().sum();
    let mut unassigned = n;
    let mut next_seed = 0;

    for q in 0..k {
        if q == k - 1 {
            part.iter_mut().filter(|x| **x == UNASSIGNED).for_each(|x| *x = q);
            break;
        }
        let target = remaining_weight as f64 / (k - q) as f64;
        // Leave at least one vertex for each later part.
        let reserve = k - q - 1;
        let mut load = 0usize;
        let mut queue = VecDeque::new();
        while unassigned > reserve {
            let v = match queue.pop_front() {
                Some(v) => v,
                None => {
                    if load as f64 >= target {
                        break;
                    }
                    while part[next_seed] != UNASSIGNED {
                        next_seed += 1;
                    }
                    next_seed
                }
            };
            if part[v] != UNASSIGNED {
                continue;
            }
            if load > 0 && (load + w[v]) as f64 > target {
                break;
            }
            part[v] = q;
            load += w[v];
            unassigned -= 1;
            for &u in &adj[v] {
                if part[u] == UNASSIGNED && queued[u] != q {
                    queued[u] = q;
                    queue.push_back(u);
                }
            }
        }
        remaining_weight -= load;
    }
    part
}

/// Drains parts above the cap, one vertex at a time, choosing the move that
/// hurts the edgecut least.
fn rebalance(adj: &[Vec<usize>], w: &[usize], part: &mut [usize], k: usize, cap: f64) {
    let mut load = vec![0usize; k];
    let mut size = vec![0usize; k];
    for (v, &q) in part.iter().enumerate() {
        load[q] += w[v];
        size[q] += 1;
    }
    let mut conn = vec![0i64; k];
    for s in 0..k {
        while load[s] as f64 > cap && size[s] > 1 {
            let mut best: Option<(i64, usize, usize)> = None;
            for v in (0..adj.len()).filter(|&v| part[v] == s) {
                conn.iter_mut().for_each(|c| *c = 0);
                for &u in &adj[v] {
                    conn[part[u]] += 1;
                }
                for t in (0..k).filter(|&t| t != s && (load[t] + w[v]) as f64 <= cap) {
                    let gain = conn[t] - conn[s];
                    if best.is_none_or(|(g, _, _)| gain > g) {
                        best = Some((gain, v, t));
                    }
                }
            }
            let Some((_, v, t)) = best else { break };
            part[v] = t;
            load[s] -= w[v];
            load[t] += w[v];
            size[s] -= 1;
            size[t] += 1;
        }
    }
}

fn reduce_edgecut(adj: &[Vec<usize>], w: &[usize], part: &mut [usize], k: usize, cap: f64) {
    let mut load = vec![0usize; k];
    let mut size = vec![0usize; k];
    for (v, &q) in part.iter().enumerate() {
        load[q] += w[v];
        size[q] += 1;
    }
    let mut conn = vec![0i64; k];
    for _ in 0..MAX_PASSES {
        let mut moved = false;
        for v in 0..adj.len() {
            let s = part[v];
            if size[s] == 1 {
                continue;
            }
            conn.iter_mut().for_each(|c| *c = 0);
            for &u in &adj[v] {
                conn[part[u]] += 1;
            }
            let mut best: Option<(i64, usize)> = None;
            for t in 0..k {
                if t == s || conn[t] == 0 || (load[t] + w[v]) as f64 > cap {
                    continue;
                }
                let gain = conn[t] - conn[s];
                if gain > 0 && best.is_none_or(|(g, _)| gain > g) {
                    best = Some((gain, t));
                }
            }
            if let Some((_, t)) = best {
                part[v] = t;
                load[s] -= w[v];
                load[t] += w[v];
                size[s] -= 1;
                size[t] += 1;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::csr_from_edges;

    fn cliques(count: usize, size: usize) -> CsrMatrix {
        let mut edges = Vec::new();
        for b in 0..count {
            for u in 0..size {
                for v in (u + 1)..size {
                    edges.push((b * size + u, b * size + v, 1.0));
                }
            }
        }
        csr_from_edges(&edges, count * size, true).unwrap()
    }

    fn brute_edgecut(a: &CsrMatrix, p: &Partition) -> usize {
        let d = a.to_dense();
        let mut cut = 0;
        for u in 0..a.n_rows() {
            for v in (u + 1)..a.n_rows() {
                if (d.get(u, v) != 0.0 || d.get(v, u) != 0.0) && p.part_of(u) != p.part_of(v) {
                    cut += 1;
                }
            }
        }
        cut
    }

    #[test]
    fn disconnected_cliques_split_cleanly() {
        let a = cliques(2, 8);
        let p = greedy_tv_partition(&a, 2, 0.1).unwrap();
        assert_eq!(edgecut(&a, &p), 0);
        assert!((0..8).all(|v| p.part_of(v) == p.part_of(0)));
        assert!((8..16).all(|v| p.part_of(v) == p.part_of(8)));
        assert_ne!(p.part_of(0), p.part_of(8));
    }

    #[test]
    fn path_is_cut_once() {
        let edges: Vec<_> = (0..9).map(|u| (u, u + 1, 1.0)).collect();
        let a = csr_from_edges(&edges, 10, true).unwrap();
        let p = greedy_tv_partition(&a, 2, 0.1).unwrap();
        assert_eq!(edgecut(&a, &p), 1);
        assert_eq!(brute_edgecut(&a, &p), 1);
    }

    #[test]
    fn single_part_has_no_cut() {
        let a = cliques(3, 4);
        let p = greedy_tv_partition(&a, 1, 0.1).unwrap();
        assert_eq!(edgecut(&a, &p), 0);
    }

    #[test]
    fn respects_balance_and_reports_cut() {
        let mut edges = Vec::new();
        for r in 0..10 {
            for c in 0..10 {
                let v = r * 10 + c;
                if c + 1 < 10 {
                    edges.push((v, v + 1, 1.0));
                }
                if r + 1 < 10 {
                    edges.push((v, v + 10, 1.0));
                }
            }
        }
        let a = csr_from_edges(&edges, 100, true).unwrap();
        let p = greedy_tv_partition(&a, 4, 0.1).unwrap();
        let cap = balance_cap(&a, 4, 0.1);
        let w = vertex_weights(&a);
        for q in 0..4 {
            let load: usize = (0..100).filter(|&v| p.part_of(v) == q).map(|v| w[v]).sum();
            assert!(load as f64 <= cap.cap, "part {q} load {load} > {}", cap.cap);
            assert!(p.sizes()[q] > 0);
        }
        assert_eq!(edgecut(&a, &p), brute_edgecut(&a, &p));
    }

    #[test]
    fn heavy_row_relaxes_cap() {
        let edges: Vec<_> = (1..20).map(|v| (0, v, 1.0)).collect();
        let a = csr_from_edges(&edges, 20, true).unwrap();
        let cap = balance_cap(&a, 4, 0.0);
        assert!(cap.relaxed);
        assert_eq!(cap.cap, 19.0);
        assert!(greedy_tv_partition(&a, 4, 0.0).is_ok());
    }
}
