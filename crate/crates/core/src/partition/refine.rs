//! Move-based refinement of a k-way partition against a two-term send-volume
//! objective: total send rows plus a weighted maximum over parts.

use super::{balance_cap, undirected_adjacency, vertex_weights, Partition};
use crate::error::Result;
use crate::sparse::{transpose_csr, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    /// Weight on the bottleneck part's send rows. Defaults to `k`.
    pub lambda_max: f64,
    pub epsilon: f64,
    pub max_passes: usize,
}

impl RefineConfig {
    pub fn for_k(k: usize) -> Self {
        Self {
            lambda_max: k as f64,
            epsilon: super::DEFAULT_EPSILON,
            max_passes: 16,
        }
    }
}

/// Objective value `total_rows + lambda_max * max_rows` of a partition.
pub fn refine_cost(a: &CsrMatrix, p: &Partition, lambda_max: f64) -> f64 {
    let m = super::comm_metrics(a, p, 1);
    m.total_rows as f64 + lambda_max * m.max_rows as f64
}

/// Incrementally maintained send volumes.
struct VolumeState<'a> {
    k: usize,
    out: &'a CsrMatrix,
    incoming: CsrMatrix,
    part: Vec<usize>,
    /// `cnt[u * k + q]`: out-neighbors of `u` in part `q`.
    cnt: Vec<u32>,
    /// Foreign parts reached by `u`, i.e. its contribution to `send[part[u]]`.
    reach: Vec<usize>,
    send: Vec<usize>,
}

impl<'a> VolumeState<'a> {
    fn new(a: &'a CsrMatrix, part: Vec<usize>, k: usize) -> Self {
        let n = a.n_rows();
        let mut cnt = vec![0u32; n * k];
        for (u, v, _) in a.iter() {
            cnt[u * k + part[v]] += 1;
        }
        let mut state = Self {
            k,
            out: a,
            incoming: transpose_csr(a),
            part,
            cnt,
            reach: vec![0; n],
            send: vec![0; k],
        };
        for u in 0..n {
            let r = state.count_reach(u, state.part[u], None);
            state.reach[u] = r;
            state.send[state.part[u]] += r;
        }
        state
    }

    /// Foreign parts of `u` when it sits in `own`, optionally after one of its
    /// out-neighbors moved `from → to`.
    fn count_reach(&self, u: usize, own: usize, shift: Option<(usize, usize)>) -> usize {
        let row = &self.cnt[u * self.k..(u + 1) * self.k];
        (0..self.k)
            .filter(|&q| {
                let mut c = row[q] as i64;
                if let Some((from, to)) = shift {
                    c -= i64::from(q == from);
                    c += i64::from(q == to);
                }
                q != own && c > 0
            })
            .count()
    }

    /// Vertices whose contribution changes when `v` moves: `v` and its in-neighbors.
    fn affected(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        let ins = self.incoming.row(v).0.iter().copied().filter(move |&u| u != v);
        std::iter::once(v).chain(ins)
    }

    /// Send vector after moving `v` to part `t`.
    fn send_after_move(&self, v: usize, t: usize) -> Vec<usize> {
        let s = self.part[v];
        let self_loop = self.out.row(v).0.binary_search(&v).is_ok();
        let mut send = self.send.clone();
        for u in self.affected(v) {
            let old_own = self.part[u];
            let new_own = if u == v { t } else { old_own };
            let points_at_v = u != v || self_loop;
            let shift = points_at_v.then_some((s, t));
            send[old_own] -= self.reach[u];
            send[new_own] += self.count_reach(u, new_own, shift);
        }
        send
    }

    fn apply_move(&mut self, v: usize, t: usize) {
        let s = self.part[v];
        let k = self.k;
        for u in self.incoming.row(v).0 {
            self.cnt[u * k + s] -= 1;
            self.cnt[u * k + t] += 1;
        }
        self.part[v] = t;
        let affected: Vec<usize> = self.affected(v).collect();
        self.send.iter_mut().for_each(|x| *x = 0);
        for u in affected {
            self.reach[u] = self.count_reach(u, self.part[u], None);
        }
        for u in 0..self.part.len() {
            self.send[self.part[u]] += self.reach[u];
        }
    }
}

fn cost_of(send: &[usize], lambda_max: f64) -> f64 {
    let total: usize = send.iter().sum();
    let max = send.iter().copied().max().unwrap_or(0);
    total as f64 + lambda_max * max as f64
}

/// Improves `p` by single-vertex moves that strictly lower
/// `total_rows + lambda_max * max_rows` while keeping every receiving part
/// under the nonzero balance cap.
///
/// Vertices are visited in ascending id order; each takes its best target
/// part, lowest part id on ties. Returns `p` unchanged when no move helps.
pub fn volume_balanced_refine(a: &CsrMatrix, p: &Partition, cfg: &RefineConfig) -> Result<Partition> {
    p.check_matrix(a)?;
    let k = p.k();
    if k == 1 {
        return Ok(p.clone());
    }
    let cap = balance_cap(a, k, cfg.epsilon).cap;
    let adj = undirected_adjacency(a);
    let w = vertex_weights(a);
    let mut state = VolumeState::new(a, p.assignment().to_vec(), k);
    let mut load = vec![0usize; k];
    let mut size = vec![0usize; k];
    for (v, &q) in state.part.iter().enumerate() {
        load[q] += w[v];
        size[q] += 1;
    }
    let mut cost = cost_of(&state.send, cfg.lambda_max);
    let mut moved_any = false;

    for _ in 0..cfg.max_passes {
        let mut moved = false;
        for v in 0..a.n_rows() {
            let s = state.part[v];
            if size[s] == 1 {
                continue;
            }
            let mut targets: Vec<usize> = adj[v].iter().map(|&u| state.part[u]).filter(|&q| q != s).collect();
            targets.sort_unstable();
            targets.dedup();

            let mut best: Option<(f64, usize)> = None;
            for t in targets {
                if (load[t] + w[v]) as f64 > cap {
                    continue;
                }
                let c = cost_of(&state.send_after_move(v, t), cfg.lambda_max);
                if c < best.map_or(cost, |(bc, _)| bc) {
                    best = Some((c, t));
                }
            }
            if let Some((c, t)) = best {
                state.apply_move(v, t);
                debug_assert_eq!(cost_of(&state.send, cfg.lambda_max), c);
                cost = c;
                load[s] -= w[v];
                load[t] += w[v];
                size[s] -= 1;
                size[t] += 1;
                moved = true;
                moved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    if !moved_any {
        return Ok(p.clone());
    }
    Partition::from_assignment(state.part, k)
}
