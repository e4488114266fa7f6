//! Full-batch GCN training over a serial reference path or any of the
//! distributed SpMM variants.
//!
//! Layer `l` computes `Z^l = (Aᵀ H^{l-1}) W^l` and `H^l = σ(Z^l)`; the last
//! layer emits logits. Backpropagation uses `G^{l-1} = (A G^l)(W^l)ᵀ ⊙ σ'(Z^{l-1})`
//! and `Y^l = (Aᵀ H^{l-1})ᵀ G^l`.
//!
//! `Aᵀ H^0` does not change during training and is computed once, so an
//! epoch performs `L - 1` forward and `L - 1` backward multiplies.

use std::str::FromStr;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{permute_values, Partition};
use crate::sim::{run_program, Comm, CommLedger, Primitive, ProcessGrid};
use crate::sparse::{gemm, gemm_tn, local_spmm, transpose_csr, CsrMatrix, DenseMat};
use crate::spmm::{scatter_dense, spmm_on_rank, DistMatrices, SpmmVariant};

pub const DEFAULT_LR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `max(z, 0)`, with derivative 0 at `z = 0`.
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::Config(format!("unknown activation {s:?} (expected relu or tanh)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layers: usize,
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub activation: Activation,
    pub seed: u64,
    pub f_in: usize,
    pub f_out: usize,
}

impl TrainConfig {
    pub fn new(f_in: usize, f_out: usize) -> Self {
        Self {
            layers: 3,
            hidden: 16,
            lr: DEFAULT_LR,
            epochs: 100,
            activation: Activation::Relu,
            seed: 0,
            f_in,
            f_out,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::Config(format!("layers must be at least 2 (got {})", self.layers)));
        }
        if self.hidden == 0 || self.f_in == 0 || self.f_out == 0 {
            return Err(Error::Config("hidden, f_in and f_out must be at least 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("lr must be a finite non-negative number (got {})", self.lr)));
        }
        Ok(())
    }

    /// `(f^{l-1}, f^l)` for `l = 1..=L`.
    pub fn widths(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let fi = if l == 0 { self.f_in } else { self.hidden };
                let fo = if l + 1 == self.layers { self.f_out } else { self.hidden };
                (fi, fo)
            })
            .collect()
    }
}

/// Symmetric-uniform Glorot initialization from a seeded generator. Every
/// rank calling this with the same seed gets identical weights.
pub fn init_weights(cfg: &TrainConfig) -> Vec<DenseMat> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    cfg.widths()
        .into_iter()
        .map(|(fi, fo)| {
            let r = (6.0 / (fi + fo) as f64).sqrt();
            DenseMat::from_fn(fi, fo, |_, _| rng.random_range(-r..=r))
        })
        .collect()
}

/// Loss and its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss_sum: f64,
    pub correct: usize,
    pub grad: DenseMat,
}

fn xent_rows(logits: &DenseMat, labels: &[usize], mask: &[bool], denom: f64) -> Result<LossOutput> {
    let (n, k) = logits.shape();
    if labels.len() != n || mask.len() != n {
        return Err(Error::DimensionMismatch {
            op: "softmax_xent",
            lhs: logits.shape(),
            rhs: (labels.len(), mask.len()),
        });
    }
    let mut grad = DenseMat::zeros(n, k);
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for r in (0..n).filter(|&r| mask[r]) {
        let y = labels[r];
        if y >= k {
            return Err(Error::LabelOutOfRange {
                row: r,
                label: y,
                classes: k,
            });
        }
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&x| (x - m).exp()).sum();
        let log_z = m + sum.ln();
        loss_sum += log_z - row[y];
        // First maximal logit wins ties.
        let arg = row
            .iter()
            .enumerate()
            .fold(0, |best, (c, &x)| if x > row[best] { c } else { best });
        correct += usize::from(arg == y);
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            let prob = (row[c] - log_z).exp();
            *g = (prob - f64::from(u8::from(c == y))) / denom;
        }
    }
    Ok(LossOutput { loss_sum, correct, grad })
}

/// Mean softmax cross-entropy over masked rows, stabilized by subtracting
/// each row's maximum, and its gradient (zero on unmasked rows).
pub fn softmax_xent(logits: &DenseMat, labels: &[usize], mask: &[bool]) -> Result<(f64, DenseMat)> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let out = xent_rows(logits, labels, mask, count as f64)?;
    Ok((out.loss_sum / count as f64, out.grad))
}

/// Fraction of masked rows whose largest logit is the label.
pub fn accuracy(logits: &DenseMat, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(xent_rows(logits, labels, mask, 1.0)?.correct as f64 / count as f64)
}

/// The communication a layer computation needs: multiplies by `Aᵀ` and `A`
/// on the local rows, and sums of replicated quantities.
pub trait Propagator {
    /// `Aᵀ · h` for the local rows.
    fn forward_spmm(&mut self, h: &DenseMat) -> Result<DenseMat>;
    /// `A · g` for the local rows.
    fn backward_spmm(&mut self, g: &DenseMat) -> Result<DenseMat>;
    /// Sum of per-process contributions to a replicated matrix.
    fn reduce(&mut self, y: DenseMat) -> Result<DenseMat>;
}

/// Single-process reference path.
pub struct SerialPropagator<'a> {
    pub at: &'a CsrMatrix,
    pub a: &'a CsrMatrix,
}

impl Propagator for SerialPropagator<'_> {
    fn forward_spmm(&mut self, h: &DenseMat) -> Result<DenseMat> {
        local_spmm(self.at, h)
    }

    fn backward_spmm(&mut self, g: &DenseMat) -> Result<DenseMat> {
        local_spmm(self.a, g)
    }

    fn reduce(&mut self, y: DenseMat) -> Result<DenseMat> {
        Ok(y)
    }
}

/// One rank's view during a simulated run.
pub struct DistPropagator<'c, 'a> {
    pub comm: &'c mut Comm<'a>,
    pub forward_op: &'c DistMatrices,
    pub backward_op: &'c DistMatrices,
    pub variant: SpmmVariant,
}

impl DistPropagator<'_, '_> {
    /// Ranks holding each block row exactly once.
    fn column_group(&self) -> Vec<usize> {
        let grid = self.comm.grid();
        grid.col_group(grid.coords(self.comm.rank()).1)
    }

    fn reduce_vec(&mut self, v: Vec<f64>) -> Result<Vec<f64>> {
        let group = self.column_group();
        Ok(self.comm.all_reduce_sum(&group, v)?)
    }
}

impl Propagator for DistPropagator<'_, '_> {
    fn forward_spmm(&mut self, h: &DenseMat) -> Result<DenseMat> {
        spmm_on_rank(self.comm, self.forward_op, self.variant, h)
    }

    fn backward_spmm(&mut self, g: &DenseMat) -> Result<DenseMat> {
        spmm_on_rank(self.comm, self.backward_op, self.variant, g)
    }

    fn reduce(&mut self, y: DenseMat) -> Result<DenseMat> {
        let group = self.column_group();
        Ok(self.comm.all_reduce_sum(&group, y)?)
    }
}

/// Intermediate values kept from the forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardCache {
    /// `T^l = Aᵀ H^{l-1}`.
    pub t: Vec<DenseMat>,
    pub z: Vec<DenseMat>,
    /// `H^l` for hidden layers.
    pub h: Vec<DenseMat>,
}

impl ForwardCache {
    pub fn logits(&self) -> Option<&DenseMat> {
        self.z.last()
    }
}

/// Runs all layers. `t1 = Aᵀ H^0` may be supplied from an earlier call;
/// otherwise it is computed from `h0`.
pub fn forward(
    prop: &mut impl Propagator,
    weights: &[DenseMat],
    h0: &DenseMat,
    t1: Option<&DenseMat>,
    act: Activation,
) -> Result<ForwardCache> {
    let mut cache = ForwardCache::default();
    let layers = weights.len();
    for (l, w) in weights.iter().enumerate() {
        let t = match (l, t1) {
            (0, Some(t)) => t.clone(),
            (0, None) => prop.forward_spmm(h0)?,
            _ => prop.forward_spmm(&cache.h[l - 1])?,
        };
        if t.n_cols() != w.n_rows() {
            return Err(Error::DimensionMismatch {
                op: "forward (feature width vs weight rows)",
                lhs: t.shape(),
                rhs: w.shape(),
            });
        }
        let z = gemm(&t, w)?;
        if l + 1 < layers {
            cache.h.push(z.map(|x| act.apply(x)));
        }
        cache.t.push(t);
        cache.z.push(z);
    }
    Ok(cache)
}

/// Weight gradients `Y^1..Y^L`, replicated through `prop.reduce`.
pub fn backward(
    prop: &mut impl Propagator,
    weights: &[DenseMat],
    cache: &ForwardCache,
    g_out: &DenseMat,
    act: Activation,
) -> Result<Vec<DenseMat>> {
    let layers = weights.len();
    if cache.z.len() != layers || cache.t.len() != layers {
        return Err(Error::NoForwardCache);
    }
    if g_out.shape() != cache.z[layers - 1].shape() {
        return Err(Error::DimensionMismatch {
            op: "backward (output gradient vs logits)",
            lhs: cache.z[layers - 1].shape(),
            rhs: g_out.shape(),
        });
    }
    let mut ys = vec![DenseMat::zeros(0, 0); layers];
    let mut g = g_out.clone();
    for l in (0..layers).rev() {
        ys[l] = prop.reduce(gemm_tn(&cache.t[l], &g)?)?;
        if l > 0 {
            let ag = prop.backward_spmm(&g)?;
            let mut next = gemm(&ag, &weights[l].transpose())?;
            for (x, &z) in next.data_mut().iter_mut().zip(cache.z[l - 1].data()) {
                *x *= act.derivative(z);
            }
            g = next;
        }
    }
    Ok(ys)
}

/// `W ← W − lr · Y`, layer by layer.
pub fn apply_update(weights: &mut [DenseMat], ys: &[DenseMat], lr: f64) {
    for (w, y) in weights.iter_mut().zip(ys) {
        for (wv, yv) in w.data_mut().iter_mut().zip(y.data()) {
            *wv -= lr * yv;
        }
    }
}

/// Graph, features and supervision for one training run, in original ids.
#[derive(Debug, Clone)]
pub struct TrainData<'a> {
    /// Normalized adjacency `A`.
    pub a: &'a CsrMatrix,
    pub features: &'a DenseMat,
    pub labels: &'a [usize],
    pub mask: &'a [bool],
}

impl TrainData<'_> {
    fn validate(&self, cfg: &TrainConfig) -> Result<usize> {
        cfg.validate()?;
        let n = self.a.n_rows();
        if !self.a.is_square() || self.features.n_rows() != n || self.labels.len() != n || self.mask.len() != n {
            return Err(Error::DimensionMismatch {
                op: "training inputs (adjacency vs features/labels/mask)",
                lhs: self.a.shape(),
                rhs: (self.features.n_rows(), self.labels.len()),
            });
        }
        if self.features.n_cols() != cfg.f_in {
            return Err(Error::Config(format!(
                "features have {} columns but f_in = {}",
                self.features.n_cols(),
                cfg.f_in
            )));
        }
        let count = self.mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        for (r, (&y, &m)) in self.labels.iter().zip(self.mask).enumerate() {
            if m && y >= cfg.f_out {
                return Err(Error::LabelOutOfRange {
                    row: r,
                    label: y,
                    classes: cfg.f_out,
                });
            }
        }
        Ok(count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    /// Cumulative data bytes per primitive, setup included, in
    /// [`Primitive::ALL`] order.
    pub cumulative_bytes: [u64; 4],
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub history: Vec<EpochRecord>,
    pub weights: Vec<DenseMat>,
    /// Index exchange and the one-off `Aᵀ H^0` multiply.
    pub setup_ledger: CommLedger,
    /// All epochs merged.
    pub epoch_ledger: CommLedger,
    /// Ledger of the first epoch alone.
    pub first_epoch_ledger: Option<CommLedger>,
}

impl TrainResult {
    pub fn final_accuracy(&self) -> f64 {
        self.history.last().map_or(0.0, |r| r.train_acc)
    }

    pub fn total_ledger(&self) -> CommLedger {
        let mut l = self.setup_ledger.clone();
        l.merge(&self.epoch_ledger);
        l
    }

    /// Per-epoch history as CSV.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_acc");
        for p in Primitive::ALL {
            out.push_str(&format!(",bytes_{}", p.name()));
        }
        out.push('\n');
        for r in &self.history {
            out.push_str(&format!("{},{:.17e},{:.17e}", r.epoch, r.loss, r.train_acc));
            for b in r.cumulative_bytes {
                out.push_str(&format!(",{b}"));
            }
            out.push('\n');
        }
        out
    }
}

fn bytes_by_primitive(l: &CommLedger) -> [u64; 4] {
    Primitive::ALL.map(|p| l.bytes_by_primitive(p))
}

/// Trains on one process with plain in-memory products.
pub fn train_serial(data: &TrainData<'_>, cfg: &TrainConfig) -> Result<TrainResult> {
    let count = data.validate(cfg)?;
    let at = transpose_csr(data.a);
    let mut prop = SerialPropagator { at: &at, a: data.a };
    let t1 = prop.forward_spmm(data.features)?;
    let mut weights = init_weights(cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let cache = forward(&mut prop, &weights, data.features, Some(&t1), cfg.activation)?;
        let logits = cache.logits().expect("at least two layers");
        let out = xent_rows(logits, data.labels, data.mask, count as f64)?;
        let ys = backward(&mut prop, &weights, &cache, &out.grad, cfg.activation)?;
        apply_update(&mut weights, &ys, cfg.lr);
        history.push(EpochRecord {
            epoch,
            loss: out.loss_sum / count as f64,
            train_acc: out.correct as f64 / count as f64,
            cumulative_bytes: [0; 4],
        });
    }
    Ok(TrainResult {
        history,
        weights,
        setup_ledger: CommLedger::new(1),
        epoch_ledger: CommLedger::new(1),
        first_epoch_ledger: None,
    })
}

struct RankState {
    weights: Vec<DenseMat>,
    h0: DenseMat,
    t1: DenseMat,
    labels: Vec<usize>,
    mask: Vec<bool>,
}

/// Forward and backward operators of a permuted, normalized adjacency.
pub struct DistOperators {
    pub forward: DistMatrices,
    /// `None` when `A` is symmetric and the forward operator is reused.
    backward: Option<DistMatrices>,
}

impl DistOperators {
    pub fn new(a_perm: &CsrMatrix, partition: &Partition, grid: ProcessGrid) -> Result<Self> {
        if partition.k() != grid.rows() {
            return Err(Error::Grid(format!(
                "partition has {} parts but the grid has p/c = {} process rows",
                partition.k(),
                grid.rows()
            )));
        }
        let layout = partition.layout().clone();
        let at = transpose_csr(a_perm);
        let symmetric = at == *a_perm;
        let forward = DistMatrices::new(&at, layout.clone(), grid)?;
        let backward = if symmetric {
            None
        } else {
            Some(DistMatrices::new(a_perm, layout, grid)?)
        };
        Ok(Self { forward, backward })
    }

    pub fn backward(&self) -> &DistMatrices {
        self.backward.as_ref().unwrap_or(&self.forward)
    }

    pub fn grid(&self) -> &ProcessGrid {
        self.forward.grid()
    }

    fn exchange_indices(&self, variant: SpmmVariant) -> Result<CommLedger> {
        let mut l = self.forward.exchange_indices(variant)?;
        if let Some(b) = &self.backward {
            l.merge(&b.exchange_indices(variant)?);
        }
        Ok(l)
    }
}

/// Trains with the selected distributed SpMM variant. `data` is in
/// original ids; it is permuted by `partition` internally. Each epoch is
/// one simulated program, so the history can report cumulative volumes.
pub fn train_distributed(
    data: &TrainData<'_>,
    partition: &Partition,
    grid: ProcessGrid,
    variant: SpmmVariant,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    let count = data.validate(cfg)?;
    variant.validate(&grid)?;
    partition.check_matrix(data.a)?;
    let a_perm = data.a.permute_symmetric(partition.perm());
    let ops = DistOperators::new(&a_perm, partition, grid)?;
    let h0 = scatter_dense(&data.features.select_rows(&partition.inverse_perm()), &ops.forward)?;
    let labels = permute_values(data.labels, partition);
    let mask = permute_values(data.mask, partition);
    let layout = ops.forward.layout().clone();

    let mut setup_ledger = ops.exchange_indices(variant)?;
    let (t1, l) = run_program(&grid, |comm| spmm_on_rank(comm, &ops.forward, variant, &h0[comm.rank()]))?;
    setup_ledger.merge(&l);

    let weights = init_weights(cfg);
    let states: Vec<Mutex<RankState>> = (0..grid.p())
        .zip(t1)
        .map(|(r, t1)| {
            let range = layout.range(grid.coords(r).0);
            Mutex::new(RankState {
                weights: weights.clone(),
                h0: h0[r].clone(),
                t1,
                labels: labels[range.clone()].to_vec(),
                mask: mask[range].to_vec(),
            })
        })
        .collect();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut epoch_ledger = CommLedger::new(grid.p());
    let mut first_epoch_ledger = None;
    for epoch in 0..cfg.epochs {
        let (stats, ledger) = run_program(&grid, |comm| -> Result<Vec<f64>> {
            let mut st = states[comm.rank()].lock().unwrap_or_else(|e| e.into_inner());
            let st = &mut *st;
            let mut prop = DistPropagator {
                comm,
                forward_op: &ops.forward,
                backward_op: ops.backward(),
                variant,
            };
            let cache = forward(&mut prop, &st.weights, &st.h0, Some(&st.t1), cfg.activation)?;
            let logits = cache.logits().expect("at least two layers");
            let out = xent_rows(logits, &st.labels, &st.mask, count as f64)?;
            let ys = backward(&mut prop, &st.weights, &cache, &out.grad, cfg.activation)?;
            apply_update(&mut st.weights, &ys, cfg.lr);
            prop.reduce_vec(vec![out.loss_sum, out.correct as f64])
        })?;
        if first_epoch_ledger.is_none() {
            first_epoch_ledger = Some(ledger.clone());
        }
        epoch_ledger.merge(&ledger);
        let mut total = setup_ledger.clone();
        total.merge(&epoch_ledger);
        history.push(EpochRecord {
            epoch,
            loss: stats[0][0] / count as f64,
            train_acc: stats[0][1] / count as f64,
            cumulative_bytes: bytes_by_primitive(&total),
        });
    }

    let states: Vec<RankState> = states
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()))
        .collect();
    for (r, st) in states.iter().enumerate().skip(1) {
        let same = st
            .weights
            .iter()
            .zip(&states[0].weights)
            .all(|(a, b)| a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        if !same {
            return Err(Error::Config(format!("weights on rank {r} diverged from rank 0")));
        }
    }
    Ok(TrainResult {
        history,
        weights: states.into_iter().next().map(|s| s.weights).unwrap_or_default(),
        setup_ledger,
        epoch_ledger,
        first_epoch_ledger,
    })
}
