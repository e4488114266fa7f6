use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::{
    ActivationArg, Cli, Command, FormatArg, GenGraphCmd, GraphArgs, GraphKind, GridArgs, PartitionArgs,
    PartitionCmd, PartitionerArg, SpmmBenchCmd, TrainCmd, VariantArg,
};
use crate::cost::{confront, predict_15d_terms, predict_1d_terms, CostParams};
use crate::error::{Error, Result};
use crate::gcn::{train_distributed, Activation, TrainConfig, TrainData};
use crate::graphgen;
use crate::io::{self, GraphFormat};
use crate::partition::{
    apply_partition, block_partition, comm_metrics, edgecut, greedy_tv_partition, gvb_partition, random_partition,
    Partition, RefineConfig,
};
use crate::sim::{CommLedger, Primitive, ProcessGrid};
use crate::sparse::{gcn_normalize, local_spmm, transpose_csr, CsrMatrix, DenseMat};
use crate::spmm::{distributed_spmm, DistMatrices, SpmmVariant};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Partition(cmd) => cmd_partition(&cmd),
        Command::SpmmBench(cmd) => cmd_spmm_bench(&cmd),
        Command::Train(cmd) => cmd_train(&cmd),
        Command::GenGraph(cmd) => cmd_gen_graph(&cmd),
    }
}

impl From<VariantArg> for SpmmVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Oblivious1d => SpmmVariant::Oblivious1d,
            VariantArg::Sparse1d => SpmmVariant::Sparse1d,
            VariantArg::Oblivious15d => SpmmVariant::Oblivious15d,
            VariantArg::Sparse15d => SpmmVariant::Sparse15d,
        }
    }
}

impl From<ActivationArg> for Activation {
    fn from(a: ActivationArg) -> Self {
        match a {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Tanh => Activation::Tanh,
        }
    }
}

fn format_of(path: &Path, arg: Option<FormatArg>) -> GraphFormat {
    match arg {
        Some(FormatArg::MatrixMarket) => GraphFormat::MatrixMarket,
        Some(FormatArg::EdgeListTsv) => GraphFormat::EdgeListTsv,
        None => GraphFormat::from_extension(path),
    }
}

/// Adds `(v, u, w)` for every stored `(u, v, w)` whose mirror is absent.
fn symmetrize(a: &CsrMatrix) -> CsrMatrix {
    let mirrored = a
        .iter()
        .filter(|&(u, v, _)| u != v && a.row(v).0.binary_search(&u).is_err())
        .map(|(u, v, w)| (v, u, w));
    CsrMatrix::from_triplets(a.n_rows(), a.n_cols(), a.iter().chain(mirrored).collect::<Vec<_>>())
}

/// The graph file as loaded and the matrix the algorithms operate on.
fn load(args: &GraphArgs) -> Result<(io::LoadedGraph, CsrMatrix)> {
    let loaded = io::load_graph(&args.graph, format_of(&args.graph, args.format))?;
    let mut a = loaded.a.clone();
    if args.symmetrize {
        a = symmetrize(&a);
    }
    if !args.raw {
        a = gcn_normalize(&a)?;
    }
    Ok((loaded, a))
}

fn build_partition(a: &CsrMatrix, k: usize, args: &PartitionArgs) -> Result<Partition> {
    match args.partitioner {
        PartitionerArg::Block => block_partition(a.n_rows(), k),
        PartitionerArg::Random => random_partition(a.n_rows(), k, args.seed),
        PartitionerArg::GreedyTv => greedy_tv_partition(a, k, args.epsilon),
        PartitionerArg::Gvb => {
            let cfg = RefineConfig {
                lambda_max: args.lambda_max.unwrap_or(k as f64),
                epsilon: args.epsilon,
                ..RefineConfig::for_k(k)
            };
            gvb_partition(a, k, &cfg)
        }
    }
}

fn validate_grid(args: &GridArgs) -> Result<(ProcessGrid, SpmmVariant)> {
    let grid = ProcessGrid::new(args.p, args.c)?;
    let variant = SpmmVariant::from(args.variant);
    variant.validate(&grid)?;
    Ok((grid, variant))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn bytes_by_primitive(l: &CommLedger) -> BTreeMap<&'static str, u64> {
    Primitive::ALL.iter().map(|&p| (p.name(), l.bytes_by_primitive(p))).collect()
}

fn cmd_partition(cmd: &PartitionCmd) -> Result<()> {
    let (_, a) = load(&cmd.graph)?;
    let part = build_partition(&a, cmd.k, &cmd.part)?;
    let m = comm_metrics(&a, &part, 1);
    ensure_dir(&cmd.output_dir)?;
    io::write_partition(&cmd.output_dir.join("partition.txt"), &part)?;
    let report = json!({
        "config": cmd,
        "n": a.n_rows(),
        "nnz": a.nnz(),
        "k": cmd.k,
        "part_sizes": part.sizes(),
        "edgecut": edgecut(&a, &part),
        "total_rows": m.total_rows,
        "max_rows": m.max_rows,
        "avg_rows": m.avg_rows,
        "imbalance_pct": m.imbalance_pct,
        "cut_p": m.cut_p,
        "per_part_send_rows": m.per_part_send_rows,
    });
    write_json(&cmd.output_dir, "partition_metrics.json", &report)
}

fn random_dense(n: usize, f: usize, seed: u64) -> DenseMat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseMat::from_fn(n, f, |_, _| rng.random_range(-1.0..1.0))
}

fn cmd_spmm_bench(cmd: &SpmmBenchCmd) -> Result<()> {
    let (grid, variant) = validate_grid(&cmd.grid)?;
    if cmd.f == 0 {
        return Err(Error::Config("f must be at least 1".into()));
    }
    let (_, a) = load(&cmd.graph)?;
    let part = build_partition(&a, grid.rows(), &cmd.part)?;
    let h = random_dense(a.n_rows(), cmd.f, cmd.part.seed);
    let (a_perm, h_perm) = apply_partition(&a, &h, &part)?;
    let at = transpose_csr(&a_perm);
    let dm = DistMatrices::new(&at, part.layout().clone(), grid)?;
    let index_ledger = dm.exchange_indices(variant)?;
    let (z, ledger) = distributed_spmm(&dm, variant, &h_perm)?;
    let err = z.max_abs_diff(&local_spmm(&at, &h_perm)?);
    let metrics = comm_metrics(&a, &part, cmd.f);

    let confrontation = if variant.is_sparse() {
        let cp = CostParams {
            alpha: cmd.alpha,
            beta: cmd.beta,
            p: grid.p(),
            c: grid.c(),
            l_layers: 1,
            f: cmd.f,
            cut_p: metrics.cut_p,
        };
        let pred = if variant.is_15d() {
            predict_15d_terms(&cp)?
        } else {
            predict_1d_terms(&cp)
        }
        .with_phases(1);
        Some(confront(&pred, &ledger, &cp)?)
    } else {
        None
    };

    ensure_dir(&cmd.output_dir)?;
    write_json(&cmd.output_dir, "spmm_ledger.json", &ledger)?;
    let report = json!({
        "config": cmd,
        "variant": variant,
        "n": a.n_rows(),
        "nnz": a.nnz(),
        "max_abs_error_vs_serial": err,
        "data_bytes": ledger.data_bytes(),
        "bytes_by_primitive": bytes_by_primitive(&ledger),
        "index_setup_bytes": index_ledger.index_bytes(),
        "metrics": metrics,
        "confront": confrontation,
    });
    write_json(&cmd.output_dir, "spmm_report.json", &report)
}

fn cmd_train(cmd: &TrainCmd) -> Result<()> {
    let (grid, variant) = validate_grid(&cmd.grid)?;
    let (loaded, a) = load(&cmd.graph)?;
    let n = a.n_rows();
    let labels = match (&cmd.labels, cmd.synthetic_labels, loaded.labels) {
        (Some(path), _, _) => io::read_labels(path)?,
        (None, Some(classes), _) => {
            if classes == 0 || classes > n {
                return Err(Error::Config(format!("cannot form {classes} label ranges from {n} vertices")));
            }
            (0..n).map(|v| v * classes / n).collect()
        }
        (None, None, Some(y)) => y,
        (None, None, None) => {
            return Err(Error::Config(
                "no labels: pass --labels, --synthetic-labels or provide a .labels.tsv sidecar".into(),
            ))
        }
    };
    let features = match (&cmd.features, cmd.synthetic_features, loaded.features) {
        (Some(path), _, _) => io::read_features(path)?,
        (None, Some(f), _) => graphgen::synthetic_features(&labels, f, cmd.signal, cmd.part.seed)?,
        (None, None, Some(x)) => x,
        (None, None, None) => {
            return Err(Error::Config(
                "no features: pass --features, --synthetic-features or provide a .features.tsv sidecar".into(),
            ))
        }
    };
    let mask = graphgen::train_mask(n, cmd.train_fraction, cmd.part.seed)?;
    let f_out = labels.iter().copied().max().map_or(1, |m| m + 1);
    let cfg = TrainConfig {
        layers: cmd.layers,
        hidden: cmd.hidden,
        lr: cmd.lr,
        epochs: cmd.epochs,
        activation: cmd.activation.into(),
        seed: cmd.part.seed,
        f_in: features.n_cols(),
        f_out,
    };
    cfg.validate()?;
    let part = build_partition(&a, grid.rows(), &cmd.part)?;
    let data = TrainData {
        a: &a,
        features: &features,
        labels: &labels,
        mask: &mask,
    };
    let result = train_distributed(&data, &part, grid, variant, &cfg)?;

    ensure_dir(&cmd.output_dir)?;
    let hist = cmd.output_dir.join("history.csv");
    fs::write(&hist, result.history_csv()).map_err(|e| Error::io(&hist, e))?;
    let total = result.total_ledger();
    let last = result.history.last();
    let summary = json!({
        "config": cmd,
        "train_config": cfg,
        "variant": variant,
        "n": n,
        "epochs": result.history.len(),
        "final_loss": last.map(|r| r.loss),
        "final_accuracy": result.final_accuracy(),
        "total_data_bytes": total.data_bytes(),
        "total_bytes_by_primitive": bytes_by_primitive(&total),
        "setup_bytes_by_primitive": bytes_by_primitive(&result.setup_ledger),
        "index_bytes": total.index_bytes(),
    });
    write_json(&cmd.output_dir, "train_summary.json", &summary)
}

fn cmd_gen_graph(cmd: &GenGraphCmd) -> Result<()> {
    let mut labels = None;
    let a = match cmd.kind {
        GraphKind::Sbm => {
            let (a, y) = graphgen::sbm(cmd.n, cmd.blocks, cmd.p_in, cmd.p_out, cmd.seed)?;
            labels = Some(y);
            a
        }
        GraphKind::Grid => graphgen::grid2d(cmd.side, cmd.side)?,
        GraphKind::Star => graphgen::star(cmd.leaves)?,
        GraphKind::Cliques => graphgen::block_diagonal_cliques(cmd.count, cmd.size)?,
        GraphKind::StarGrid => graphgen::star_augmented_grid(cmd.side, cmd.hubs, cmd.hub_degree, cmd.seed)?,
    };
    if let Some(dir) = cmd.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    match GraphFormat::from_extension(&cmd.out) {
        GraphFormat::MatrixMarket => io::write_matrix_market(&cmd.out, &a)?,
        GraphFormat::EdgeListTsv => io::write_edge_list(&cmd.out, &a)?,
    }
    if let Some(y) = labels {
        let x = graphgen::synthetic_features(&y, cmd.feature_dim, cmd.signal, cmd.seed)?;
        io::write_features(&io::sibling(&cmd.out, "features.tsv"), &x)?;
        io::write_labels(&io::sibling(&cmd.out, "labels.tsv"), &y)?;
    }
    Ok(())
}
