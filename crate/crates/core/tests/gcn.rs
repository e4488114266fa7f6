mod common;

use common::{random_dense, random_matrix, rng};
use gcnsim::gcn::{train_distributed, train_serial, Activation, TrainConfig, TrainData};
use gcnsim::graphgen;
use gcnsim::partition::random_partition;
use gcnsim::sim::{Primitive, ProcessGrid};
use gcnsim::sparse::gcn_normalize;
use gcnsim::spmm::SpmmVariant;
use gcnsim::Error;
use rand::Rng;

#[test]
fn directed_graph_trains_identically_across_variants() {
    let mut r = rng(11);
    let a = gcn_normalize(&random_matrix(40, 0.1, &mut r)).unwrap();
    let x = random_dense(40, 5, &mut r);
    let labels: Vec<usize> = (0..40).map(|_| r.random_range(0..3)).collect();
    let mask: Vec<bool> = (0..40).map(|v| v % 4 != 0).collect();
    let cfg = TrainConfig {
        epochs: 8,
        hidden: 6,
        activation: Activation::Tanh,
        lr: 0.1,
        ..TrainConfig::new(5, 3)
    };
    let data = TrainData {
        a: &a,
        features: &x,
        labels: &labels,
        mask: &mask,
    };
    let serial = train_serial(&data, &cfg).unwrap();
    for (v, p, c) in [(SpmmVariant::Sparse1d, 4, 1), (SpmmVariant::Oblivious15d, 4, 2), (SpmmVariant::Sparse15d, 8, 2)] {
        let grid = ProcessGrid::new(p, c).unwrap();
        let part = random_partition(40, grid.rows(), 1).unwrap();
        let res = train_distributed(&data, &part, grid, v, &cfg).unwrap();
        for (d, s) in res.history.iter().zip(&serial.history) {
            assert!((d.loss - s.loss).abs() < 1e-10, "{v} epoch {}", d.epoch);
            assert_eq!(d.train_acc, s.train_acc);
        }
        for (w, ws) in res.weights.iter().zip(&serial.weights) {
            assert!(w.max_abs_diff(ws) < 1e-10);
        }
    }
}

#[test]
fn epoch_traffic_matches_layer_structure() {
    let (raw, labels) = graphgen::sbm(60, 2, 0.3, 0.02, 2).unwrap();
    let a = gcn_normalize(&raw).unwrap();
    let x = graphgen::synthetic_features(&labels, 4, 1.0, 2).unwrap();
    let mask = vec![true; 60];
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::new(4, 2)
    };
    let data = TrainData {
        a: &a,
        features: &x,
        labels: &labels,
        mask: &mask,
    };
    let grid = ProcessGrid::flat(4).unwrap();
    let part = random_partition(60, 4, 0).unwrap();
    let res = train_distributed(&data, &part, grid, SpmmVariant::Sparse1d, &cfg).unwrap();
    let first = res.first_epoch_ledger.as_ref().unwrap();
    let per_epoch = res.epoch_ledger.bytes_by_primitive(Primitive::Alltoallv) / 3;
    assert_eq!(first.bytes_by_primitive(Primitive::Alltoallv), per_epoch);
    let cumulative: Vec<u64> = res.history.iter().map(|h| h.cumulative_bytes[1]).collect();
    assert!(cumulative.windows(2).all(|w| w[1] - w[0] == per_epoch));
    assert!(first.bytes_by_primitive(Primitive::Allreduce) > 0);
}

#[test]
fn bad_inputs_are_rejected() {
    let a = gcn_normalize(&graphgen::grid2d(3, 3).unwrap()).unwrap();
    let x = random_dense(9, 2, &mut rng(0));
    let labels = vec![0; 9];
    let grid = ProcessGrid::flat(3).unwrap();
    let part = random_partition(9, 3, 0).unwrap();
    let cfg = TrainConfig::new(2, 2);
    let none = vec![false; 9];
    let data = TrainData {
        a: &a,
        features: &x,
        labels: &labels,
        mask: &none,
    };
    assert!(matches!(train_serial(&data, &cfg), Err(Error::EmptyMask)));
    let all = vec![true; 9];
    let wide = vec![5; 9];
    let data = TrainData {
        labels: &wide,
        mask: &all,
        ..data
    };
    assert!(matches!(
        train_distributed(&data, &part, grid, SpmmVariant::Sparse1d, &cfg),
        Err(Error::LabelOutOfRange { .. })
    ));
    let data = TrainData { labels: &labels, ..data };
    assert!(train_distributed(&data, &part, ProcessGrid::new(4, 2).unwrap(), SpmmVariant::Sparse1d, &cfg).is_err());
}
