mod common;

use common::{max_diff, oracle_at_h, random_dense, random_matrix, rng};
use gcnsim::partition::{apply_partition, random_partition};
use gcnsim::sim::{Primitive, ProcessGrid};
use gcnsim::sparse::transpose_csr;
use gcnsim::spmm::{distributed_spmm, DistMatrices, SpmmVariant};
use proptest::prelude::*;

fn setup(n: usize, density: f64, f: usize, p: usize, c: usize, seed: u64) -> (DistMatrices, gcnsim::sparse::DenseMat, Vec<Vec<f64>>) {
    let mut r = rng(seed);
    let a = random_matrix(n, density, &mut r);
    let h = random_dense(n, f, &mut r);
    let grid = ProcessGrid::new(p, c).unwrap();
    let part = random_partition(n, grid.rows(), seed).unwrap();
    let (ap, hp) = apply_partition(&a, &h, &part).unwrap();
    let oracle = oracle_at_h(&ap, &hp);
    (DistMatrices::new(&transpose_csr(&ap), part.layout().clone(), grid).unwrap(), hp, oracle)
}

#[test]
fn invalid_grids_are_rejected_per_family() {
    let g = ProcessGrid::new(8, 2).unwrap();
    assert!(SpmmVariant::Sparse1d.validate(&g).is_err());
    assert!(SpmmVariant::Sparse15d.validate(&g).is_ok());
    let err = SpmmVariant::Sparse15d.validate(&ProcessGrid::new(6, 2).unwrap()).unwrap_err();
    assert!(err.to_string().contains("c^2 divides p"));
    assert!(ProcessGrid::new(6, 4).is_err());
}

#[test]
fn variant_names_round_trip() {
    for v in SpmmVariant::ALL {
        assert_eq!(v.name().parse::<SpmmVariant>().unwrap(), v);
    }
}

#[test]
fn sparse_1d_uses_only_all_to_allv() {
    let (dm, h, _) = setup(60, 0.05, 4, 4, 1, 2);
    let (_, l) = distributed_spmm(&dm, SpmmVariant::Sparse1d, &h).unwrap();
    assert_eq!(l.data_bytes(), l.bytes_by_primitive(Primitive::Alltoallv));
    let (_, l) = distributed_spmm(&dm, SpmmVariant::Oblivious1d, &h).unwrap();
    assert_eq!(l.data_bytes(), l.bytes_by_primitive(Primitive::Broadcast));
}

#[test]
fn sparse_1d_volume_matches_nnz_cols() {
    let (dm, h, _) = setup(80, 0.04, 3, 4, 1, 9);
    let (_, l) = distributed_spmm(&dm, SpmmVariant::Sparse1d, &h).unwrap();
    let k = dm.layout().k();
    let rows: usize = (0..k)
        .flat_map(|i| (0..k).filter(move |&q| q != i).map(move |q| (i, q)))
        .map(|(i, q)| dm.nnz_cols(i, q).len())
        .sum();
    assert_eq!(l.data_bytes(), (rows * 3 * 8) as u64);
}

#[test]
fn index_exchange_is_index_traffic_only() {
    let (dm, _, _) = setup(50, 0.08, 2, 8, 2, 4);
    let l = dm.exchange_indices(SpmmVariant::Sparse15d).unwrap();
    assert_eq!(l.data_bytes(), 0);
    assert!(l.index_bytes() > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_variant_matches_oracle(
        n in 8usize..90,
        density in 0.0f64..0.15,
        f in 1usize..6,
        grid in prop::sample::select(vec![(1, 1), (2, 1), (3, 1), (4, 1), (4, 2), (8, 2), (9, 3)]),
        seed in 0u64..10_000,
    ) {
        let (p, c) = grid;
        prop_assume!(n >= p / c);
        let (dm, h, oracle) = setup(n, density, f, p, c, seed);
        for v in SpmmVariant::ALL.into_iter().filter(|v| v.validate(dm.grid()).is_ok()) {
            let (z, l) = distributed_spmm(&dm, v, &h).unwrap();
            prop_assert!(max_diff(&z, &oracle) <= 1e-10, "{} error", v);
            prop_assert!(l.is_conserved());
        }
    }
}
