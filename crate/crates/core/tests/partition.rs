mod common;

use common::{random_matrix, rng};
use gcnsim::graphgen;
use gcnsim::partition::{
    block_partition, comm_metrics, edgecut, greedy_tv_partition, gvb_partition, imbalance_pct, random_partition,
    refine_cost, volume_balanced_refine, Partition, RefineConfig,
};
use gcnsim::sparse::CsrMatrix;
use proptest::prelude::*;

/// Send rows recomputed from the definition: `u` goes to every other part
/// holding one of its out-neighbors.
fn oracle_send_rows(a: &CsrMatrix, p: &Partition) -> (Vec<usize>, usize) {
    let mut per = vec![0; p.k()];
    for u in 0..a.n_rows() {
        let mut parts: Vec<usize> = a.row(u).0.iter().map(|&v| p.part_of(v)).filter(|&q| q != p.part_of(u)).collect();
        parts.sort_unstable();
        parts.dedup();
        per[p.part_of(u)] += parts.len();
    }
    let total = per.iter().sum();
    (per, total)
}

#[test]
fn grid_metrics_on_block_partition() {
    let g = graphgen::grid2d(4, 4).unwrap();
    let p = block_partition(16, 2).unwrap();
    let m = comm_metrics(&g, &p, 1);
    assert_eq!(m.per_part_send_rows, vec![4, 4]);
    assert_eq!(m.cut_p, 4);
    assert_eq!(edgecut(&g, &p), 4);
    assert_eq!(m.imbalance_pct, 0.0);
}

#[test]
fn imbalance_definition() {
    assert_eq!(imbalance_pct(10.0, 15.0), 50.0);
    assert_eq!(imbalance_pct(0.0, 0.0), 0.0);
}

#[test]
fn partitioners_are_deterministic() {
    let g = graphgen::star_augmented_grid(12, 3, 20, 1).unwrap();
    assert_eq!(
        gvb_partition(&g, 4, &RefineConfig::for_k(4)).unwrap().assignment(),
        gvb_partition(&g, 4, &RefineConfig::for_k(4)).unwrap().assignment()
    );
    assert_eq!(random_partition(144, 4, 5).unwrap().assignment(), random_partition(144, 4, 5).unwrap().assignment());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_match_definition(n in 4usize..60, k in 1usize..6, seed in 0u64..1000) {
        prop_assume!(k <= n);
        let a = random_matrix(n, 0.1, &mut rng(seed));
        let p = random_partition(n, k, seed).unwrap();
        let m = comm_metrics(&a, &p, 2);
        let (per, total) = oracle_send_rows(&a, &p);
        prop_assert_eq!(&m.per_part_send_rows, &per);
        prop_assert_eq!(m.total_rows, total);
        prop_assert_eq!(m.max_rows, per.iter().copied().max().unwrap_or(0));
        let pair_total: usize = m.pair_send_rows.iter().flatten().sum();
        prop_assert_eq!(pair_total, total);
    }

    #[test]
    fn partitions_cover_every_vertex(n in 4usize..80, k in 1usize..6, seed in 0u64..1000) {
        prop_assume!(k <= n);
        let a = graphgen::sbm(n, 2.min(n), 0.3, 0.05, seed).unwrap().0;
        for p in [greedy_tv_partition(&a, k, 0.1).unwrap(), gvb_partition(&a, k, &RefineConfig::for_k(k)).unwrap()] {
            prop_assert_eq!(p.n(), n);
            prop_assert_eq!(p.sizes().iter().sum::<usize>(), n);
            let mut perm = p.perm().to_vec();
            perm.sort_unstable();
            prop_assert_eq!(perm, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn refinement_never_increases_objective(n in 8usize..80, k in 2usize..6, seed in 0u64..1000) {
        prop_assume!(k <= n);
        let a = graphgen::sbm(n, 2, 0.3, 0.05, seed).unwrap().0;
        let start = random_partition(n, k, seed).unwrap();
        let cfg = RefineConfig::for_k(k);
        let refined = volume_balanced_refine(&a, &start, &cfg).unwrap();
        prop_assert!(refine_cost(&a, &refined, cfg.lambda_max) <= refine_cost(&a, &start, cfg.lambda_max));
    }
}
