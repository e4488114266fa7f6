mod common;

use common::{random_matrix, rng};
use gcnsim::io::{
    load_graph, parse_edge_list, parse_matrix_market, read_partition, write_edge_list, write_matrix_market,
    write_partition, GraphFormat,
};
use gcnsim::partition::random_partition;
use proptest::prelude::*;
use std::path::Path;

#[test]
fn symmetric_matrix_market_is_expanded() {
    let text = "%%MatrixMarket matrix coordinate real symmetric\n% comment\n3 3 2\n2 1 0.5\n3 3 1\n";
    let a = parse_matrix_market(text, Path::new("x.mtx")).unwrap();
    assert_eq!(a.get(1, 0), 0.5);
    assert_eq!(a.get(0, 1), 0.5);
    assert_eq!(a.get(2, 2), 1.0);
    assert_eq!(a.nnz(), 3);
}

#[test]
fn malformed_input_names_the_line() {
    let err = parse_matrix_market("%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n", Path::new("m.mtx"))
        .unwrap_err();
    assert_eq!(err.kind(), "parse");
    assert!(err.to_string().contains("m.mtx"));
    assert!(parse_edge_list("0\tx\n", Path::new("e.tsv")).is_err());
}

#[test]
fn partition_file_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let p = random_partition(30, 4, 2).unwrap();
    let path = tmp.path().join("part.txt");
    write_partition(&path, &p).unwrap();
    assert_eq!(read_partition(&path, Some(4)).unwrap().assignment(), p.assignment());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn writers_round_trip(n in 1usize..40, seed in 0u64..1000) {
        let a = random_matrix(n, 0.15, &mut rng(seed));
        let tmp = tempfile::tempdir().unwrap();
        let mtx = tmp.path().join("a.mtx");
        let tsv = tmp.path().join("a.tsv");
        write_matrix_market(&mtx, &a).unwrap();
        write_edge_list(&tsv, &a).unwrap();
        prop_assert_eq!(&load_graph(&mtx, GraphFormat::MatrixMarket).unwrap().a, &a);
        let from_tsv = load_graph(&tsv, GraphFormat::EdgeListTsv).unwrap().a;
        prop_assert_eq!(from_tsv.iter().collect::<Vec<_>>(), a.iter().collect::<Vec<_>>());
    }
}
