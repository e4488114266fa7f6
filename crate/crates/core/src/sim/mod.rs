//! In-process message-passing runtime with exact communication accounting.

mod grid;
mod ledger;
mod runtime;

use std::fmt;

use serde::Serialize;

pub use grid::ProcessGrid;
pub use ledger::{CommLedger, Counters, PairStats, Primitive, RankLedger, Traffic};
pub use runtime::{
    run_program, AccountingPolicy, AllReduceCost, BroadcastCost, Comm, Reducible, Simulator, Wire,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockedRank {
    pub rank: usize,
    pub waiting_on: String,
}

impl fmt::Display for BlockedRank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rank {} waiting on {}", self.rank, self.waiting_on)
    }
}

fn list_blocked(b: &[BlockedRank]) -> String {
    b.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("invalid process grid: {0}")]
    Grid(String),
    #[error("deadlock: {}", list_blocked(.0))]
    Deadlock(Vec<BlockedRank>),
    #[error("rank stopped because another rank failed")]
    Aborted,
    #[error("rank {rank}: payload type mismatch in {op}")]
    PayloadType { rank: usize, op: &'static str },
    #[error("rank {rank} out of range for p={p}")]
    RankOutOfRange { rank: usize, p: usize },
    #[error("rank {rank}: collective mismatch, expected {expected}, called {found}")]
    CollectiveMismatch {
        rank: usize,
        expected: String,
        found: String,
    },
    #[error("invalid group: {0}")]
    InvalidGroup(String),
    #[error("rank {rank} is not a member of group {group:?}")]
    NotInGroup { rank: usize, group: Vec<usize> },
    #[error("broadcast root {root} is not in group {group:?}")]
    RootOutOfRange { root: usize, group: Vec<usize> },
    #[error("broadcast root {root} supplied no buffer")]
    MissingRootBuffer { root: usize },
    #[error("rank {rank}: all-reduce buffer shape {found:?} differs from {expected:?}")]
    ShapeMismatch {
        rank: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("messages never received on (src, dst, tag) channels {0:?}")]
    Undelivered(Vec<(usize, usize, u64)>),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::DenseMat;

    fn run<T: Send>(
        p: usize,
        f: impl Fn(&mut Comm<'_>) -> Result<T, SimError> + Sync,
    ) -> Result<(Vec<T>, CommLedger), SimError> {
        run_program(&ProcessGrid::flat(p).unwrap(), f)
    }

    #[test]
    fn ring_exchange() {
        let (out, ledger) = run(4, |c| {
            let r = c.rank();
            c.isend((r + 1) % 4, 0, vec![r as f64; 3])?;
            c.recv::<Vec<f64>>((r + 3) % 4, 0)
        })
        .unwrap();
        assert_eq!(out[0], vec![3.0; 3]);
        assert_eq!(ledger.data_bytes(), 4 * 24);
        assert!(ledger.is_conserved());
        assert_eq!(ledger.pair_bytes(1, 2, &[Primitive::P2p]), 24);
    }

    #[test]
    fn messages_on_one_channel_keep_order() {
        let (out, _) = run(2, |c| {
            if c.rank() == 0 {
                for i in 0..5 {
                    c.isend(1, 7, vec![i as f64])?;
                }
                Ok(vec![])
            } else {
                (0..5).map(|_| c.recv::<Vec<f64>>(0, 7).map(|v| v[0])).collect()
            }
        })
        .unwrap();
        assert_eq!(out[1], vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn all_to_allv_routes_by_destination() {
        let (out, ledger) = run(3, |c| {
            let r = c.rank();
            let send = (0..3).map(|d| vec![(10 * r + d) as f64; d]).collect();
            c.all_to_allv(send)
        })
        .unwrap();
        for (dst, got) in out.iter().enumerate() {
            for (src, buf) in got.iter().enumerate() {
                assert_eq!(buf, &vec![(10 * src + dst) as f64; dst]);
            }
        }
        // Rank d receives d values from each of the two other ranks.
        assert_eq!(ledger.data_bytes(), (2 * 1 + 2 * 2) * 8);
        assert_eq!(ledger.ranks[0].counters(Primitive::Alltoallv).bytes_received, 0);
    }

    #[test]
    fn broadcast_is_linear_by_default() {
        let (out, ledger) = run(4, |c| {
            let buf = (c.rank() == 2).then(|| DenseMat::from_fn(2, 2, |i, j| (i + j) as f64));
            c.broadcast(2, buf)
        })
        .unwrap();
        assert!(out.iter().all(|m| m.get(1, 1) == 2.0));
        assert_eq!(ledger.ranks[2].counters(Primitive::Broadcast).bytes_sent, 3 * 32);
        assert_eq!(ledger.ranks[0].counters(Primitive::Broadcast).bytes_received, 32);
    }

    #[test]
    fn binomial_broadcast_charges_each_receiver_once() {
        let grid = ProcessGrid::flat(5).unwrap();
        let policy = AccountingPolicy {
            broadcast: BroadcastCost::BinomialTree,
            ..Default::default()
        };
        let (_, ledger) = Simulator::new(grid)
            .with_policy(policy)
            .run(|c| c.broadcast(1, (c.rank() == 1).then(|| vec![1.0; 4])))
            .map_err(|e: SimError| e)
            .unwrap();
        for r in 0..5 {
            let got = ledger.ranks[r].counters(Primitive::Broadcast).bytes_received;
            assert_eq!(got, if r == 1 { 0 } else { 32 });
        }
        assert_eq!(ledger.data_bytes(), 4 * 32);
    }

    #[test]
    fn all_reduce_is_deterministic_and_ring_charged() {
        let program = |c: &mut Comm<'_>| {
            let x = 0.1 * (c.rank() + 1) as f64;
            c.all_reduce_sum(&[0, 1, 2, 3], vec![x, 1e16, -1e16])
        };
        let (a, ledger) = run(4, program).unwrap();
        let (b, _) = run(4, program).unwrap();
        let serial = ((0.1f64 + 0.2) + 0.3) + 0.4;
        for v in a.iter().chain(&b) {
            assert_eq!(v[0].to_bits(), serial.to_bits());
        }
        let c = ledger.ranks[1].counters(Primitive::Allreduce);
        assert_eq!(c.bytes_sent, 2 * 3 * 24 / 4);
        assert_eq!(c.messages_sent, 6);
        assert!(ledger.is_conserved());
    }

    #[test]
    fn subgroup_collectives_are_independent() {
        let grid = ProcessGrid::new(4, 2).unwrap();
        let (out, _) = run_program(&grid, |c| {
            let (i, _) = c.grid().coords(c.rank());
            let group = c.grid().row_group(i);
            c.all_reduce_sum(&group, vec![c.rank() as f64])
        })
        .map_err(|e: SimError| e)
        .unwrap();
        assert_eq!(out, vec![vec![1.0], vec![1.0], vec![5.0], vec![5.0]]);
    }

    #[test]
    fn missing_send_is_a_deadlock() {
        let err = run(2, |c| {
            if c.rank() == 1 {
                c.recv::<Vec<f64>>(0, 3)?;
            }
            Ok(())
        })
        .unwrap_err();
        match err {
            SimError::Deadlock(b) => {
                assert_eq!(b.len(), 1);
                assert_eq!(b[0].rank, 1);
                assert!(b[0].waiting_on.contains("tag=3"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn mismatched_collectives_are_reported() {
        let err = run(2, |c| {
            if c.rank() == 0 {
                c.barrier()
            } else {
                c.all_reduce_sum(&[0, 1], vec![1.0]).map(|_| ())
            }
        })
        .unwrap_err();
        assert!(matches!(err, SimError::CollectiveMismatch { .. }), "{err}");
    }

    #[test]
    fn shape_mismatch_fails_every_member() {
        let err = run(2, |c| c.all_reduce_sum(&[0, 1], vec![0.0; c.rank() + 1])).unwrap_err();
        assert!(matches!(err, SimError::ShapeMismatch { rank: 1, .. }), "{err}");
    }

    #[test]
    fn unreceived_messages_are_reported() {
        let err = run(2, |c| {
            if c.rank() == 0 {
                c.isend(1, 9, vec![1.0])?;
            }
            Ok(())
        })
        .unwrap_err();
        assert_eq!(err, SimError::Undelivered(vec![(0, 1, 9)]));
    }

    #[test]
    fn failing_rank_error_wins_over_aborts() {
        #[derive(Debug, PartialEq)]
        enum E {
            Mine,
            Sim(SimError),
        }
        impl From<SimError> for E {
            fn from(e: SimError) -> Self {
                E::Sim(e)
            }
        }
        let grid = ProcessGrid::flat(3).unwrap();
        let err = run_program(&grid, |c| {
            if c.rank() == 2 {
                return Err(E::Mine);
            }
            c.barrier()?;
            Ok(())
        })
        .unwrap_err();
        assert_eq!(err, E::Mine);
    }

    #[test]
    #[should_panic(expected = "boom")]
    fn panics_propagate() {
        let _ = run(2, |c| {
            if c.rank() == 0 {
                panic!("boom");
            }
            c.barrier()
        });
    }

    #[test]
    fn index_traffic_is_separate() {
        let (_, ledger) = run(2, |c| {
            let r = c.rank();
            c.isend(1 - r, 0, vec![1u64, 2, 3])?;
            c.recv::<Vec<u64>>(1 - r, 0)
        })
        .unwrap();
        assert_eq!(ledger.data_bytes(), 0);
        assert_eq!(ledger.index_bytes(), 48);
    }

    #[test]
    fn non_member_is_rejected() {
        let err = run(2, |c| c.all_reduce_sum(&[0], vec![1.0])).unwrap_err();
        assert!(matches!(err, SimError::NotInGroup { rank: 1, .. }));
    }
}
