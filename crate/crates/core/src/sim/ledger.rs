//! Exact per-rank communication accounting for one simulated execution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    P2p,
    Alltoallv,
    Broadcast,
    Allreduce,
}

impl Primitive {
    pub const ALL: [Primitive; 4] = [
        Primitive::P2p,
        Primitive::Alltoallv,
        Primitive::Broadcast,
        Primitive::Allreduce,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::P2p => "p2p",
            Primitive::Alltoallv => "alltoallv",
            Primitive::Broadcast => "broadcast",
            Primitive::Allreduce => "allreduce",
        }
    }
}

/// Whether a payload is dense data or an index list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Traffic {
    Data,
    Index,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
    /// Invocations of the primitive by this rank (sends for point-to-point).
    pub calls: u64,
}

impl Counters {
    fn merge(&mut self, o: &Counters) {
        self.bytes_sent += o.bytes_sent;
        self.bytes_received += o.bytes_received;
        self.messages_sent += o.messages_sent;
        self.messages_received += o.messages_received;
        self.calls += o.calls;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankLedger {
    /// Dense-data traffic by primitive.
    pub data: BTreeMap<Primitive, Counters>,
    /// Index-list traffic, all primitives combined.
    pub index: Counters,
}

impl RankLedger {
    pub fn data_bytes_sent(&self) -> u64 {
        self.data.values().map(|c| c.bytes_sent).sum()
    }

    pub fn data_bytes_received(&self) -> u64 {
        self.data.values().map(|c| c.bytes_received).sum()
    }

    pub fn counters(&self, prim: Primitive) -> Counters {
        self.data.get(&prim).copied().unwrap_or_default()
    }
}

/// Square `p × p` tables indexed `[src][dst]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    pub max_message_bytes: Vec<Vec<u64>>,
    pub total_bytes: Vec<Vec<u64>>,
}

impl PairStats {
    fn new(p: usize) -> Self {
        Self {
            max_message_bytes: vec![vec![0; p]; p],
            total_bytes: vec![vec![0; p]; p],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub p: usize,
    pub ranks: Vec<RankLedger>,
    /// Dense-data pair statistics by primitive.
    pub pairs: BTreeMap<Primitive, PairStats>,
}

impl CommLedger {
    pub fn new(p: usize) -> Self {
        Self {
            p,
            ranks: vec![RankLedger::default(); p],
            pairs: BTreeMap::new(),
        }
    }

    fn slot(&mut self, rank: usize, prim: Primitive, traffic: Traffic) -> &mut Counters {
        match traffic {
            Traffic::Data => self.ranks[rank].data.entry(prim).or_default(),
            Traffic::Index => &mut self.ranks[rank].index,
        }
    }

    pub(crate) fn call(&mut self, rank: usize, prim: Primitive, traffic: Traffic) {
        self.slot(rank, prim, traffic).calls += 1;
    }

    /// Charges one message of `bytes` from `src` to `dst`. Self-messages and
    /// empty payloads cost nothing.
    pub(crate) fn message(&mut self, prim: Primitive, traffic: Traffic, src: usize, dst: usize, bytes: u64) {
        if src == dst || bytes == 0 {
            return;
        }
        let s = self.slot(src, prim, traffic);
        s.bytes_sent += bytes;
        s.messages_sent += 1;
        let r = self.slot(dst, prim, traffic);
        r.bytes_received += bytes;
        r.messages_received += 1;
        if traffic == Traffic::Data {
            self.record_pair(prim, src, dst, bytes, bytes);
        }
    }

    pub(crate) fn record_pair(&mut self, prim: Primitive, src: usize, dst: usize, max_msg: u64, total: u64) {
        let p = self.p;
        let pair = self.pairs.entry(prim).or_insert_with(|| PairStats::new(p));
        pair.max_message_bytes[src][dst] = pair.max_message_bytes[src][dst].max(max_msg);
        pair.total_bytes[src][dst] += total;
    }

    /// Adds `bytes` and `messages` to both sides of a rank's counters without
    /// pairing, for collectives whose per-link schedule is modelled in aggregate.
    pub(crate) fn aggregate(&mut self, prim: Primitive, rank: usize, sent: (u64, u64), received: (u64, u64)) {
        let c = self.slot(rank, prim, Traffic::Data);
        c.bytes_sent += sent.0;
        c.messages_sent += sent.1;
        c.bytes_received += received.0;
        c.messages_received += received.1;
    }

    /// Folds another execution's counters into this one.
    pub fn merge(&mut self, other: &CommLedger) {
        assert_eq!(self.p, other.p, "ledgers of different process counts");
        for (mine, theirs) in self.ranks.iter_mut().zip(&other.ranks) {
            for (prim, c) in &theirs.data {
                mine.data.entry(*prim).or_default().merge(c);
            }
            mine.index.merge(&theirs.index);
        }
        for (prim, theirs) in &other.pairs {
            let p = self.p;
            let mine = self.pairs.entry(*prim).or_insert_with(|| PairStats::new(p));
            for s in 0..p {
                for d in 0..p {
                    mine.max_message_bytes[s][d] = mine.max_message_bytes[s][d].max(theirs.max_message_bytes[s][d]);
                    mine.total_bytes[s][d] += theirs.total_bytes[s][d];
                }
            }
        }
    }

    /// Total dense-data bytes sent, all ranks and primitives.
    pub fn data_bytes(&self) -> u64 {
        self.ranks.iter().map(RankLedger::data_bytes_sent).sum()
    }

    pub fn data_bytes_received(&self) -> u64 {
        self.ranks.iter().map(RankLedger::data_bytes_received).sum()
    }

    pub fn bytes_by_primitive(&self, prim: Primitive) -> u64 {
        self.ranks.iter().map(|r| r.counters(prim).bytes_sent).sum()
    }

    pub fn index_bytes(&self) -> u64 {
        self.ranks.iter().map(|r| r.index.bytes_sent).sum()
    }

    /// `Σ sent == Σ received`, for data and index traffic separately.
    pub fn is_conserved(&self) -> bool {
        let idx_recv: u64 = self.ranks.iter().map(|r| r.index.bytes_received).sum();
        self.data_bytes() == self.data_bytes_received() && self.index_bytes() == idx_recv
    }

    /// Total data bytes from `src` to `dst` over the given primitives.
    pub fn pair_bytes(&self, src: usize, dst: usize, prims: &[Primitive]) -> u64 {
        prims
            .iter()
            .filter_map(|p| self.pairs.get(p))
            .map(|s| s.total_bytes[src][dst])
            .sum()
    }

    /// Largest single data message from `src` to `dst` over the given primitives.
    pub fn pair_max_message(&self, src: usize, dst: usize, prims: &[Primitive]) -> u64 {
        prims
            .iter()
            .filter_map(|p| self.pairs.get(p))
            .map(|s| s.max_message_bytes[src][dst])
            .max()
            .unwrap_or(0)
    }

    /// Matrix of total data bytes over the given primitives, `[src][dst]`.
    pub fn pair_matrix(&self, prims: &[Primitive]) -> Vec<Vec<u64>> {
        (0..self.p)
            .map(|s| (0..self.p).map(|d| self.pair_bytes(s, d, prims)).collect())
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("ledger is always serializable")
    }
}
