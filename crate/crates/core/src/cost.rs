//! α-β communication-time model of the sparsity-aware SpMM algorithms and
//! its confrontation with simulated ledgers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{CommLedger, Primitive};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Latency per message, in seconds.
    pub alpha: f64,
    /// Seconds per communicated scalar.
    pub beta: f64,
    pub p: usize,
    pub c: usize,
    pub l_layers: usize,
    pub f: usize,
    pub cut_p: usize,
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "alpha and beta must be non-negative (got {}, {})",
                self.alpha, self.beta
            )));
        }
        if self.p == 0 || self.c == 0 {
            return Err(Error::Config("p and c must be at least 1".into()));
        }
        Ok(())
    }

    /// `P / c²`, requiring exact divisibility.
    pub fn stages(&self) -> Result<usize> {
        let c2 = self.c * self.c;
        if self.c == 0 || !self.p.is_multiple_of(c2) {
            return Err(Error::Grid(format!(
                "c^2 divides p (got p={}, c={}, c^2={c2})",
                self.p, self.c
            )));
        }
        Ok(self.p / c2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[serde(rename = "1d")]
    OneD,
    #[serde(rename = "15d")]
    OnePointFiveD,
}

/// Predicted time split into its latency and bandwidth parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub algorithm: Algorithm,
    /// Latency term of one multiply.
    pub latency_per_spmm: f64,
    /// Bandwidth term of one multiply.
    pub bandwidth_per_spmm: f64,
    /// Multiplies the prediction covers; `2L` for an epoch.
    pub spmm_phases: usize,
    pub total: f64,
}

impl Prediction {
    /// The same per-multiply terms scaled to `phases` multiplies.
    pub fn with_phases(mut self, phases: usize) -> Self {
        self.spmm_phases = phases;
        self.total = phases as f64 * (self.latency_per_spmm + self.bandwidth_per_spmm);
        self
    }
}

/// `2L (α (P − 1) + (P − 1) · cut · f · β)`, split into terms.
pub fn predict_1d_terms(cp: &CostParams) -> Prediction {
    let pm1 = cp.p.saturating_sub(1) as f64;
    let latency = cp.alpha * pm1;
    let bandwidth = pm1 * cp.cut_p as f64 * cp.f as f64 * cp.beta;
    Prediction {
        algorithm: Algorithm::OneD,
        latency_per_spmm: latency,
        bandwidth_per_spmm: bandwidth,
        spmm_phases: 2 * cp.l_layers,
        total: 0.0,
    }
    .with_phases(2 * cp.l_layers)
}

pub fn predict_1d(cp: &CostParams) -> f64 {
    predict_1d_terms(cp).total
}

/// `2L (α s log₂ s + s · cut · f · β)` with `s = P / c²`; the logarithm
/// contributes nothing when `s = 1`.
pub fn predict_15d_terms(cp: &CostParams) -> Result<Prediction> {
    let s = cp.stages()? as f64;
    let latency = if s > 1.0 { cp.alpha * s * s.log2() } else { 0.0 };
    let bandwidth = s * cp.cut_p as f64 * cp.f as f64 * cp.beta;
    Ok(Prediction {
        algorithm: Algorithm::OnePointFiveD,
        latency_per_spmm: latency,
        bandwidth_per_spmm: bandwidth,
        spmm_phases: 2 * cp.l_layers,
        total: 0.0,
    }
    .with_phases(2 * cp.l_layers))
}

pub fn predict_15d(cp: &CostParams) -> Result<f64> {
    Ok(predict_15d_terms(cp)?.total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub check: String,
    pub rank: Option<usize>,
    pub pair: Option<(usize, usize)>,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfrontReport {
    pub prediction: Prediction,
    pub params: CostParams,
    /// Largest single point-to-point or all-to-all message, in rows.
    pub max_pair_message_rows: f64,
    pub pair_message_bound_rows: f64,
    /// Largest per-process sent plus received message count.
    pub max_messages_per_rank: u64,
    pub message_bound_per_rank: u64,
    /// Largest per-process received rows.
    pub max_received_rows: f64,
    pub received_rows_bound: f64,
    /// `β · f ·` the largest per-process received rows.
    pub measured_bandwidth_time: f64,
    pub flags: Vec<Flag>,
}

impl ConfrontReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report is always serializable")
    }
}

const ROW_PRIMS: [Primitive; 2] = [Primitive::P2p, Primitive::Alltoallv];

/// Compares a ledger of `prediction.spmm_phases` sparsity-aware multiplies
/// against the per-process bounds behind the model and flags every
/// measurement that exceeds one. Collective reductions are outside the
/// model and are not checked.
pub fn confront(prediction: &Prediction, ledger: &CommLedger, cp: &CostParams) -> Result<ConfrontReport> {
    cp.validate()?;
    let p = ledger.p;
    let phases = prediction.spmm_phases as u64;
    let row_bytes = (8 * cp.f.max(1)) as f64;
    let (per_phase_msgs, per_phase_rows) = match prediction.algorithm {
        Algorithm::OneD => {
            let pm1 = p.saturating_sub(1) as u64;
            (2 * pm1, pm1 * cp.cut_p as u64)
        }
        Algorithm::OnePointFiveD => {
            let s = cp.stages()? as u64;
            let rows = (cp.p / cp.c) as u64;
            (rows.saturating_sub(1) + s, s * cp.cut_p as u64)
        }
    };
    let mut flags = Vec::new();

    let mut max_pair = 0.0f64;
    for src in 0..p {
        for dst in 0..p {
            let rows = ledger.pair_max_message(src, dst, &ROW_PRIMS) as f64 / row_bytes;
            max_pair = max_pair.max(rows);
            if rows > cp.cut_p as f64 {
                flags.push(Flag {
                    check: "pair_message_rows_le_cut".into(),
                    rank: None,
                    pair: Some((src, dst)),
                    measured: rows,
                    bound: cp.cut_p as f64,
                });
            }
        }
    }

    let msg_bound = phases * per_phase_msgs;
    let rows_bound = (phases * per_phase_rows) as f64;
    let mut max_msgs = 0;
    let mut max_rows = 0.0f64;
    for (rank, r) in ledger.ranks.iter().enumerate() {
        let msgs: u64 = ROW_PRIMS
            .iter()
            .map(|&pr| {
                let c = r.counters(pr);
                c.messages_sent + c.messages_received
            })
            .sum();
        let rows = ROW_PRIMS.iter().map(|&pr| r.counters(pr).bytes_received).sum::<u64>() as f64 / row_bytes;
        max_msgs = max_msgs.max(msgs);
        max_rows = max_rows.max(rows);
        if msgs > msg_bound {
            flags.push(Flag {
                check: "messages_per_rank_le_latency_bound".into(),
                rank: Some(rank),
                pair: None,
                measured: msgs as f64,
                bound: msg_bound as f64,
            });
        }
        if rows > rows_bound {
            flags.push(Flag {
                check: "received_rows_le_bandwidth_bound".into(),
                rank: Some(rank),
                pair: None,
                measured: rows,
                bound: rows_bound,
            });
        }
    }

    Ok(ConfrontReport {
        prediction: prediction.clone(),
        params: *cp,
        max_pair_message_rows: max_pair,
        pair_message_bound_rows: cp.cut_p as f64,
        max_messages_per_rank: max_msgs,
        message_bound_per_rank: msg_bound,
        max_received_rows: max_rows,
        received_rows_bound: rows_bound,
        measured_bandwidth_time: max_rows * cp.f as f64 * cp.beta,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(alpha: f64, beta: f64, p: usize, c: usize, l: usize, f: usize, cut: usize) -> CostParams {
        CostParams {
            alpha,
            beta,
            p,
            c,
            l_layers: l,
            f,
            cut_p: cut,
        }
    }

    #[test]
    fn one_process_costs_nothing() {
        assert_eq!(predict_1d(&params(3.0, 2.0, 1, 1, 3, 16, 9)), 0.0);
    }

    #[test]
    fn direct_substitution() {
        assert_eq!(predict_1d(&params(0.0, 1.0, 3, 1, 1, 2, 5)), 40.0);
    }

    #[test]
    fn square_grid_has_no_latency_term() {
        let t = predict_15d_terms(&params(5.0, 1.0, 4, 2, 1, 3, 7)).unwrap();
        assert_eq!(t.latency_per_spmm, 0.0);
        assert_eq!(t.bandwidth_per_spmm, 21.0);
        assert_eq!(t.total, 42.0);
    }

    #[test]
    fn fifteen_d_with_c_one_uses_its_own_formula() {
        let cp = params(1.0, 0.5, 8, 1, 2, 4, 3);
        // 2L (α · 8 · 3 + 8 · 3 · 4 · 0.5)
        assert_eq!(predict_15d(&cp).unwrap(), 4.0 * (24.0 + 48.0));
    }

    #[test]
    fn divisibility_is_named() {
        let err = predict_15d(&params(1.0, 1.0, 8, 4, 1, 1, 1)).unwrap_err();
        assert!(err.to_string().contains("c^2 divides p"));
    }

    fn oracle_1d(a: f64, b: f64, p: usize, l: usize, f: usize, cut: usize) -> f64 {
        let pm1 = p as f64 - 1.0;
        2.0 * l as f64 * (a * pm1 + pm1 * cut as f64 * f as f64 * b)
    }

    fn oracle_15d(a: f64, b: f64, p: usize, c: usize, l: usize, f: usize, cut: usize) -> f64 {
        let s = p as f64 / (c * c) as f64;
        let lat = if s == 1.0 { 0.0 } else { a * s * s.ln() / std::f64::consts::LN_2 };
        2.0 * l as f64 * (lat + s * cut as f64 * f as f64 * b)
    }

    proptest! {
        #[test]
        fn formulas_match_independent_evaluation(
            a in 0.0f64..1e-3, b in 0.0f64..1e-6, p in 1usize..300, c in 1usize..4,
            l in 1usize..5, f in 1usize..64, cut in 0usize..10_000,
        ) {
            let v = predict_1d(&params(a, b, p, 1, l, f, cut));
            let o = oracle_1d(a, b, p, l, f, cut);
            prop_assert!((v - o).abs() <= 1e-12 * o.abs().max(1e-30));
            let p15 = p * c * c;
            let v = predict_15d(&params(a, b, p15, c, l, f, cut)).unwrap();
            let o = oracle_15d(a, b, p15, c, l, f, cut);
            prop_assert!((v - o).abs() <= 1e-12 * o.abs().max(1e-30));
        }

        #[test]
        fn monotone_in_every_parameter(
            a in 0.0f64..1.0, b in 0.0f64..1.0, p in 1usize..64, l in 1usize..4,
            f in 1usize..32, cut in 0usize..100,
        ) {
            let base = params(a, b, p * 4, 2, l, f, cut);
            let bumps = [
                params(a + 0.1, b, p * 4, 2, l, f, cut),
                params(a, b + 0.1, p * 4, 2, l, f, cut),
                params(a, b, p * 4, 2, l + 1, f, cut),
                params(a, b, p * 4, 2, l, f + 1, cut),
                params(a, b, p * 4, 2, l, f, cut + 1),
            ];
            let b1 = predict_1d(&base);
            let b15 = predict_15d(&base).unwrap();
            for q in bumps {
                prop_assert!(predict_1d(&q) >= b1);
                prop_assert!(predict_15d(&q).unwrap() >= b15);
            }
        }

        #[test]
        fn bandwidth_is_linear_in_cut(b in 0.0f64..1.0, k in 1usize..8, base in 0usize..50) {
            let cut = base * k;
            let full = predict_1d_terms(&params(0.0, b, 9, 1, 2, 4, cut)).bandwidth_per_spmm;
            let scaled = predict_1d_terms(&params(0.0, b, 9, 1, 2, 4, cut / k)).bandwidth_per_spmm;
            prop_assert!((scaled * k as f64 - full).abs() <= 1e-12 * full.max(1e-30));
        }
    }

    #[test]
    fn empty_ledger_is_clean_and_injection_is_flagged() {
        let cp = params(1.0, 1.0, 4, 1, 1, 2, 3);
        let pred = predict_1d_terms(&cp).with_phases(1);
        let mut ledger = CommLedger::new(4);
        let report = confront(&pred, &ledger, &cp).unwrap();
        assert!(report.is_clean());
        assert_eq!(report.measured_bandwidth_time, 0.0);
        ledger.ranks[1].data.entry(Primitive::Alltoallv).or_default().bytes_received += 8 * 2 * 100;
        assert!(!confront(&pred, &ledger, &cp).unwrap().is_clean());
    }
}
