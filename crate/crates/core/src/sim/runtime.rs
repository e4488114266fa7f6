//! Bulk-synchronous execution of one procedure on `p` virtual ranks.
//!
//! Each rank runs on its own host thread. All shared state lives behind a
//! single mutex, collectives combine contributions in group order, and
//! reductions add in ascending rank order, so results and ledgers do not
//! depend on thread interleaving.

use std::any::Any;
use std::collections::{HashMap, VecDeque};
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Condvar, Mutex, MutexGuard};

use super::ledger::{CommLedger, Primitive, Traffic};
use super::{BlockedRank, ProcessGrid, SimError};
use crate::sparse::DenseMat;

/// A value that can travel between ranks.
pub trait Wire: Clone + Send + 'static {
    fn byte_len(&self) -> u64;
    fn traffic() -> Traffic {
        Traffic::Data
    }
}

impl Wire for DenseMat {
    fn byte_len(&self) -> u64 {
        (self.data().len() * 8) as u64
    }
}

impl Wire for Vec<f64> {
    fn byte_len(&self) -> u64 {
        (self.len() * 8) as u64
    }
}

/// Index lists travel as 64-bit integers.
impl Wire for Vec<u64> {
    fn byte_len(&self) -> u64 {
        (self.len() * 8) as u64
    }

    fn traffic() -> Traffic {
        Traffic::Index
    }
}

/// A payload that supports elementwise summation.
pub trait Reducible: Wire {
    fn shape(&self) -> (usize, usize);
    fn add_assign(&mut self, other: &Self);
}

impl Reducible for DenseMat {
    fn shape(&self) -> (usize, usize) {
        DenseMat::shape(self)
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.data_mut().iter_mut().zip(other.data()) {
            *a += b;
        }
    }
}

impl Reducible for Vec<f64> {
    fn shape(&self) -> (usize, usize) {
        (self.len(), 1)
    }

    fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BroadcastCost {
    /// Root sends the full payload to every other member.
    #[default]
    Linear,
    /// Binomial tree: each member receives once, senders forward along the tree.
    BinomialTree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AllReduceCost {
    /// Reduce-scatter plus all-gather around a ring: every member sends and
    /// receives `2 (g - 1) / g` of the payload in `2 (g - 1)` messages.
    #[default]
    Ring,
    /// Members send to the lowest rank, which returns the sum to each.
    ReduceBroadcast,
}

/// How collectives are charged to the ledger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AccountingPolicy {
    pub broadcast: BroadcastCost,
    pub allreduce: AllReduceCost,
}

type Boxed = Box<dyn Any + Send>;

#[derive(Debug, Clone, PartialEq, Eq)]
enum CollectiveKind {
    AllToAllv,
    Broadcast { root: usize },
    AllReduce,
    Barrier,
}

impl CollectiveKind {
    fn name(&self) -> &'static str {
        match self {
            CollectiveKind::AllToAllv => "all_to_allv",
            CollectiveKind::Broadcast { .. } => "broadcast",
            CollectiveKind::AllReduce => "all_reduce_sum",
            CollectiveKind::Barrier => "barrier",
        }
    }
}

type SlotKey = (Vec<usize>, u64);

struct Slot {
    kind: CollectiveKind,
    inputs: Vec<Option<Boxed>>,
    outputs: Option<Result<Vec<Option<Boxed>>, SimError>>,
    picked: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Wait {
    Recv { src: usize, tag: u64 },
    Collective { key: SlotKey, name: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Status {
    Running,
    Blocked(Wait),
    Finished,
}

struct State {
    mailboxes: HashMap<(usize, usize, u64), VecDeque<Boxed>>,
    slots: HashMap<SlotKey, Slot>,
    status: Vec<Status>,
    deadlock: Option<Vec<BlockedRank>>,
    aborted: bool,
    /// Ranks that stopped only because another rank failed.
    victim: Vec<bool>,
    ledger: CommLedger,
}

impl State {
    fn satisfied(&self, rank: usize, wait: &Wait) -> bool {
        match wait {
            Wait::Recv { src, tag } => self
                .mailboxes
                .get(&(*src, rank, *tag))
                .is_some_and(|q| !q.is_empty()),
            Wait::Collective { key, .. } => self.slots.get(key).is_some_and(|s| s.outputs.is_some()),
        }
    }

    /// Every live rank is blocked on something that cannot happen.
    fn find_deadlock(&self) -> Option<Vec<BlockedRank>> {
        let mut blocked = Vec::new();
        for (rank, st) in self.status.iter().enumerate() {
            match st {
                Status::Running => return None,
                Status::Finished => {}
                Status::Blocked(w) => {
                    if self.satisfied(rank, w) {
                        return None;
                    }
                    blocked.push(BlockedRank {
                        rank,
                        waiting_on: match w {
                            Wait::Recv { src, tag } => format!("recv(src={src}, dst={rank}, tag={tag})"),
                            Wait::Collective { key, name } => {
                                format!("{name}(group={:?}, call #{})", key.0, key.1)
                            }
                        },
                    });
                }
            }
        }
        (!blocked.is_empty()).then_some(blocked)
    }

    fn check_live(&mut self, rank: usize) -> Result<(), SimError> {
        if let Some(report) = &self.deadlock {
            return Err(SimError::Deadlock(report.clone()));
        }
        if self.aborted {
            self.victim[rank] = true;
            return Err(SimError::Aborted);
        }
        Ok(())
    }
}

struct Shared {
    state: Mutex<State>,
    cv: Condvar,
    policy: AccountingPolicy,
    p: usize,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

/// Per-rank communication handle passed to the simulated program.
pub struct Comm<'a> {
    rank: usize,
    grid: ProcessGrid,
    shared: &'a Shared,
    seqs: HashMap<Vec<usize>, u64>,
}

impl Comm<'_> {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.shared.p
    }

    pub fn grid(&self) -> &ProcessGrid {
        &self.grid
    }

    /// Blocks until `wait` is satisfied, failing on deadlock or abort.
    fn block_on<'g>(&self, mut st: MutexGuard<'g, State>, wait: Wait) -> Result<MutexGuard<'g, State>, SimError> {
        loop {
            if st.satisfied(self.rank, &wait) {
                st.status[self.rank] = Status::Running;
                return Ok(st);
            }
            st.check_live(self.rank)?;
            st.status[self.rank] = Status::Blocked(wait.clone());
            if let Some(report) = st.find_deadlock() {
                st.deadlock = Some(report.clone());
                self.shared.cv.notify_all();
                return Err(SimError::Deadlock(report));
            }
            st = self.shared.cv.wait(st).unwrap_or_else(|e| e.into_inner());
        }
    }

    fn check_rank(&self, r: usize) -> Result<(), SimError> {
        if r >= self.shared.p {
            return Err(SimError::RankOutOfRange {
                rank: r,
                p: self.shared.p,
            });
        }
        Ok(())
    }

    /// Non-blocking send. Messages on one `(src, dst, tag)` channel arrive in order.
    pub fn isend<T: Wire>(&mut self, dst: usize, tag: u64, payload: T) -> Result<(), SimError> {
        self.check_rank(dst)?;
        let mut st = self.shared.lock();
        st.check_live(self.rank)?;
        st.ledger.call(self.rank, Primitive::P2p, T::traffic());
        st.ledger
            .message(Primitive::P2p, T::traffic(), self.rank, dst, payload.byte_len());
        st.mailboxes
            .entry((self.rank, dst, tag))
            .or_default()
            .push_back(Box::new(payload));
        self.shared.cv.notify_all();
        Ok(())
    }

    /// Blocking receive of the oldest message on `(src, self, tag)`.
    pub fn recv<T: Wire>(&mut self, src: usize, tag: u64) -> Result<T, SimError> {
        self.check_rank(src)?;
        let st = self.shared.lock();
        let mut st = self.block_on(st, Wait::Recv { src, tag })?;
        let boxed = st
            .mailboxes
            .get_mut(&(src, self.rank, tag))
            .and_then(VecDeque::pop_front)
            .expect("satisfied wait implies a queued message");
        drop(st);
        boxed.downcast::<T>().map(|b| *b).map_err(|_| SimError::PayloadType {
            rank: self.rank,
            op: "recv",
        })
    }

    fn validate_group(&self, group: &[usize]) -> Result<usize, SimError> {
        if group.is_empty() || group.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SimError::InvalidGroup(format!(
                "groups must be non-empty and strictly ascending, got {group:?}"
            )));
        }
        if let Some(&r) = group.iter().find(|&&r| r >= self.shared.p) {
            return Err(SimError::RankOutOfRange { rank: r, p: self.shared.p });
        }
        group.iter().position(|&r| r == self.rank).ok_or(SimError::NotInGroup {
            rank: self.rank,
            group: group.to_vec(),
        })
    }

    /// Runs one collective over `group`. The last member to arrive combines
    /// all inputs (in group order) and charges the ledger.
    fn collective<In, Out>(
        &mut self,
        group: &[usize],
        kind: CollectiveKind,
        input: In,
        combine: impl FnOnce(Vec<In>, &mut CommLedger) -> Result<Vec<Out>, SimError>,
    ) -> Result<Out, SimError>
    where
        In: Send + 'static,
        Out: Send + 'static,
    {
        let pos = self.validate_group(group)?;
        let seq = {
            let s = self.seqs.entry(group.to_vec()).or_insert(0);
            *s += 1;
            *s - 1
        };
        let key: SlotKey = (group.to_vec(), seq);
        let name = kind.name();
        let rank = self.rank;
        let mut st = self.shared.lock();
        st.check_live(rank)?;

        let slot = st.slots.entry(key.clone()).or_insert_with(|| Slot {
            kind: kind.clone(),
            inputs: (0..group.len()).map(|_| None).collect(),
            outputs: None,
            picked: 0,
        });
        if slot.kind != kind {
            return Err(SimError::CollectiveMismatch {
                rank,
                expected: slot.kind.name().to_string(),
                found: name.to_string(),
            });
        }
        slot.inputs[pos] = Some(Box::new(input));

        if slot.inputs.iter().all(Option::is_some) {
            let inputs: Result<Vec<In>, SimError> = slot
                .inputs
                .iter_mut()
                .map(|b| {
                    b.take()
                        .expect("all inputs present")
                        .downcast::<In>()
                        .map(|b| *b)
                        .map_err(|_| SimError::PayloadType { rank, op: name })
                })
                .collect();
            let outcome = inputs.and_then(|inputs| {
                let out = combine(inputs, &mut st.ledger)?;
                Ok(out.into_iter().map(|o| Some(Box::new(o) as Boxed)).collect::<Vec<_>>())
            });
            st.slots.get_mut(&key).expect("slot exists").outputs = Some(outcome);
            self.shared.cv.notify_all();
        }

        let mut st = self.block_on(st, Wait::Collective { key: key.clone(), name })?;
        let slot = st.slots.get_mut(&key).expect("slot lives until every member picks up");
        slot.picked += 1;
        let done = slot.picked == group.len();
        let result = match slot.outputs.as_mut().expect("completed") {
            Ok(outs) => Ok(outs[pos].take().expect("each member picks up once")),
            Err(e) => Err(e.clone()),
        };
        if done {
            st.slots.remove(&key);
        }
        drop(st);
        result?
            .downcast::<Out>()
            .map(|b| *b)
            .map_err(|_| SimError::PayloadType { rank, op: name })
    }

    /// Exchange among all ranks: `send[d]` goes to rank `d`; the result holds
    /// one payload per source rank, in rank order.
    pub fn all_to_allv<T: Wire>(&mut self, send: Vec<T>) -> Result<Vec<T>, SimError> {
        let p = self.shared.p;
        if send.len() != p {
            return Err(SimError::InvalidGroup(format!(
                "all_to_allv needs {p} send buffers, got {}",
                send.len()
            )));
        }
        let group: Vec<usize> = (0..p).collect();
        self.collective(&group, CollectiveKind::AllToAllv, send, move |inputs, ledger| {
            let mut out: Vec<Vec<T>> = (0..p).map(|_| Vec::with_capacity(p)).collect();
            for (src, bufs) in inputs.into_iter().enumerate() {
                ledger.call(src, Primitive::Alltoallv, T::traffic());
                for (dst, payload) in bufs.into_iter().enumerate() {
                    ledger.message(Primitive::Alltoallv, T::traffic(), src, dst, payload.byte_len());
                    out[dst].push(payload);
                }
            }
            Ok(out)
        })
    }

    /// Broadcast over all ranks. Only the root's buffer is used.
    pub fn broadcast<T: Wire>(&mut self, root: usize, buf: Option<T>) -> Result<T, SimError> {
        let group: Vec<usize> = (0..self.shared.p).collect();
        self.broadcast_in(&group, root, buf)
    }

    /// Broadcast within `group` from global rank `root`.
    pub fn broadcast_in<T: Wire>(&mut self, group: &[usize], root: usize, buf: Option<T>) -> Result<T, SimError> {
        let Some(root_pos) = group.iter().position(|&r| r == root) else {
            return Err(SimError::RootOutOfRange {
                root,
                group: group.to_vec(),
            });
        };
        let policy = self.shared.policy.broadcast;
        let members = group.to_vec();
        self.collective(group, CollectiveKind::Broadcast { root }, buf, move |mut inputs, ledger| {
            let payload = inputs[root_pos].take().ok_or(SimError::MissingRootBuffer { root })?;
            let bytes = payload.byte_len();
            let g = members.len();
            for &m in &members {
                ledger.call(m, Primitive::Broadcast, T::traffic());
            }
            match policy {
                BroadcastCost::Linear => {
                    for &m in &members {
                        ledger.message(Primitive::Broadcast, T::traffic(), root, m, bytes);
                    }
                }
                BroadcastCost::BinomialTree => {
                    // Positions are relative to the root.
                    let at = |pos: usize| members[(root_pos + pos) % g];
                    let mut span = 1;
                    while span < g {
                        for pos in 0..span.min(g - span) {
                            ledger.message(Primitive::Broadcast, T::traffic(), at(pos), at(pos + span), bytes);
                        }
                        span *= 2;
                    }
                }
            }
            Ok(vec![payload; g])
        })
    }

    /// Elementwise sum over `group`, added in ascending rank order. All
    /// members receive bit-identical results.
    pub fn all_reduce_sum<T: Reducible>(&mut self, group: &[usize], buf: T) -> Result<T, SimError> {
        let policy = self.shared.policy.allreduce;
        let members = group.to_vec();
        self.collective(group, CollectiveKind::AllReduce, buf, move |inputs, ledger| {
            let shape = inputs[0].shape();
            if let Some((i, other)) = inputs.iter().enumerate().find(|(_, b)| b.shape() != shape) {
                return Err(SimError::ShapeMismatch {
                    rank: members[i],
                    expected: shape,
                    found: other.shape(),
                });
            }
            let bytes = inputs[0].byte_len();
            let g = members.len() as u64;
            for &m in &members {
                ledger.call(m, Primitive::Allreduce, T::traffic());
            }
            if g > 1 && bytes > 0 {
                match policy {
                    AllReduceCost::Ring => {
                        let moved = 2 * (g - 1) * bytes / g;
                        let msgs = 2 * (g - 1);
                        let chunk = bytes.div_ceil(g);
                        for (i, &m) in members.iter().enumerate() {
                            ledger.aggregate(Primitive::Allreduce, m, (moved, msgs), (moved, msgs));
                            let next = members[(i + 1) % members.len()];
                            ledger.record_pair(Primitive::Allreduce, m, next, chunk, moved);
                        }
                    }
                    AllReduceCost::ReduceBroadcast => {
                        let root = members[0];
                        for &m in &members[1..] {
                            ledger.message(Primitive::Allreduce, T::traffic(), m, root, bytes);
                            ledger.message(Primitive::Allreduce, T::traffic(), root, m, bytes);
                        }
                    }
                }
            }
            let mut iter = inputs.into_iter();
            let mut sum = iter.next().expect("group is non-empty");
            for b in iter {
                sum.add_assign(&b);
            }
            Ok(vec![sum; members.len()])
        })
    }

    pub fn barrier(&mut self) -> Result<(), SimError> {
        let group: Vec<usize> = (0..self.shared.p).collect();
        let g = group.len();
        self.collective(&group, CollectiveKind::Barrier, (), move |_, _| Ok(vec![(); g]))
    }
}

/// Runs a program on every rank of a grid and returns the per-rank results
/// in rank order together with the communication ledger.
pub struct Simulator {
    grid: ProcessGrid,
    policy: AccountingPolicy,
}

impl Simulator {
    pub fn new(grid: ProcessGrid) -> Self {
        Self {
            grid,
            policy: AccountingPolicy::default(),
        }
    }

    pub fn with_policy(mut self, policy: AccountingPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn run<T, E, F>(&self, program: F) -> Result<(Vec<T>, CommLedger), E>
    where
        T: Send,
        E: From<SimError> + Send,
        F: Fn(&mut Comm<'_>) -> Result<T, E> + Sync,
    {
        let p = self.grid.p();
        let shared = Shared {
            state: Mutex::new(State {
                mailboxes: HashMap::new(),
                slots: HashMap::new(),
                status: vec![Status::Running; p],
                deadlock: None,
                aborted: false,
                victim: vec![false; p],
                ledger: CommLedger::new(p),
            }),
            cv: Condvar::new(),
            policy: self.policy,
            p,
        };
        let shared = &shared;
        let program = &program;
        let grid = self.grid;

        let outcomes: Vec<std::thread::Result<Result<T, E>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..p)
                .map(|rank| {
                    scope.spawn(move || {
                        let mut comm = Comm {
                            rank,
                            grid,
                            shared,
                            seqs: HashMap::new(),
                        };
                        let res = panic::catch_unwind(AssertUnwindSafe(|| program(&mut comm)));
                        let mut st = shared.lock();
                        st.status[rank] = Status::Finished;
                        match &res {
                            Ok(Ok(_)) => {
                                if st.deadlock.is_none() {
                                    st.deadlock = st.find_deadlock();
                                }
                            }
                            _ => st.aborted = true,
                        }
                        shared.cv.notify_all();
                        res
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("rank threads catch their own panics"))
                .collect()
        });

        let st = shared.lock();
        let mut results = Vec::with_capacity(p);
        let mut origin: Option<E> = None;
        let mut fallback: Option<E> = None;
        for (rank, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Err(payload) => panic::resume_unwind(payload),
                Ok(Ok(v)) => results.push(v),
                Ok(Err(e)) => {
                    if !st.victim[rank] && origin.is_none() {
                        origin = Some(e);
                    } else if fallback.is_none() {
                        fallback = Some(e);
                    }
                }
            }
        }
        if let Some(e) = origin.or(fallback) {
            return Err(e);
        }
        if let Some(report) = &st.deadlock {
            return Err(SimError::Deadlock(report.clone()).into());
        }
        let mut pending: Vec<(usize, usize, u64)> = st
            .mailboxes
            .iter()
            .filter(|(_, q)| !q.is_empty())
            .map(|(k, _)| *k)
            .collect();
        if !pending.is_empty() {
            pending.sort_unstable();
            return Err(SimError::Undelivered(pending).into());
        }
        Ok((results, st.ledger.clone()))
    }
}

/// Runs `program` under the default accounting policy.
pub fn run_program<T, E, F>(grid: &ProcessGrid, program: F) -> Result<(Vec<T>, CommLedger), E>
where
    T: Send,
    E: From<SimError> + Send,
    F: Fn(&mut Comm<'_>) -> Result<T, E> + Sync,
{
    Simulator::new(*grid).run(program)
}
