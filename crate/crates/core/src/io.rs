//! Graph, feature, label and partition files.
//!
//! Matrix Market coordinate files are 1-indexed; TSV edge lists are
//! 0-indexed `u<TAB>v[<TAB>w]` lines with `#` comments. Features and labels
//! live next to a graph file as `<stem>.features.tsv` (one tab-separated row
//! per vertex) and `<stem>.labels.tsv` (one integer per line).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::sparse::{CsrMatrix, DenseMat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    MatrixMarket,
    EdgeListTsv,
}

impl GraphFormat {
    /// `.mtx` means Matrix Market, anything else a TSV edge list.
    pub fn from_extension(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("mtx") => GraphFormat::MatrixMarket,
            _ => GraphFormat::EdgeListTsv,
        }
    }
}

impl FromStr for GraphFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matrix-market" | "mtx" => Ok(GraphFormat::MatrixMarket),
            "edge-list-tsv" | "tsv" => Ok(GraphFormat::EdgeListTsv),
            _ => Err(Error::Config(format!(
                "unknown graph format {s:?} (expected matrix-market or edge-list-tsv)"
            ))),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn field<T: FromStr>(path: &Path, line: usize, tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(path, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("invalid {what} {tok:?}")))
}

/// Parses Matrix Market coordinate text (`real`, `integer` or `pattern`;
/// `general` or `symmetric`). Only square matrices are accepted.
pub fn parse_matrix_market(text: &str, path: &Path) -> Result<CsrMatrix> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (hl, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let h: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if h.len() != 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" || h[2] != "coordinate" {
        return Err(parse_err(
            path,
            hl,
            "expected header \"%%MatrixMarket matrix coordinate <field> <symmetry>\"",
        ));
    }
    let pattern = match h[3].as_str() {
        "real" | "integer" => false,
        "pattern" => true,
        other => return Err(parse_err(path, hl, format!("unsupported field {other:?}"))),
    };
    let symmetric = match h[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(path, hl, format!("unsupported symmetry {other:?}"))),
    };
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('%'));
    let (sl, size) = body.next().ok_or_else(|| parse_err(path, hl, "missing size line"))?;
    let mut it = size.split_whitespace();
    let rows: usize = field(path, sl, it.next(), "row count")?;
    let cols: usize = field(path, sl, it.next(), "column count")?;
    let nnz: usize = field(path, sl, it.next(), "entry count")?;
    if rows != cols {
        return Err(parse_err(path, sl, format!("matrix must be square (got {rows} x {cols})")));
    }
    let mut triplets = Vec::with_capacity(if symmetric { 2 * nnz } else { nnz });
    let mut seen = 0;
    for (ln, line) in body {
        seen += 1;
        if seen > nnz {
            return Err(parse_err(path, ln, format!("more than the declared {nnz} entries")));
        }
        let mut it = line.split_whitespace();
        let r: usize = field(path, ln, it.next(), "row index")?;
        let c: usize = field(path, ln, it.next(), "column index")?;
        let v: f64 = if pattern { 1.0 } else { field(path, ln, it.next(), "value")? };
        if r == 0 || c == 0 || r > rows || c > cols {
            return Err(parse_err(path, ln, format!("index ({r}, {c}) outside 1..={rows}")));
        }
        triplets.push((r - 1, c - 1, v));
        if symmetric && r != c {
            triplets.push((c - 1, r - 1, v));
        }
    }
    if seen != nnz {
        return Err(parse_err(path, text.lines().count(), format!("expected {nnz} entries, found {seen}")));
    }
    Ok(CsrMatrix::from_triplets(rows, cols, triplets))
}

pub fn read_matrix_market(path: &Path) -> Result<CsrMatrix> {
    parse_matrix_market(&read(path)?, path)
}

/// Writes `a` as a general real coordinate file with round-trip exact values.
pub fn write_matrix_market(path: &Path, a: &CsrMatrix) -> Result<()> {
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(out, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz());
    for (r, c, v) in a.iter() {
        let _ = writeln!(out, "{} {} {v:?}", r + 1, c + 1);
    }
    write(path, &out)
}

/// Parses a directed TSV edge list. Missing weights default to 1.0 and the
/// vertex count is one past the largest id.
pub fn parse_edge_list(text: &str, path: &Path) -> Result<CsrMatrix> {
    let mut triplets = Vec::new();
    let mut n = 0;
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split('\t').map(str::trim);
        let u: usize = field(path, ln, it.next(), "source id")?;
        let v: usize = field(path, ln, it.next(), "target id")?;
        let w: f64 = match it.next() {
            Some(tok) => field(path, ln, Some(tok), "weight")?,
            None => 1.0,
        };
        if it.next().is_some() {
            return Err(parse_err(path, ln, "expected u<TAB>v[<TAB>w]"));
        }
        n = n.max(u + 1).max(v + 1);
        triplets.push((u, v, w));
    }
    Ok(CsrMatrix::from_triplets(n, n, triplets))
}

pub fn read_edge_list(path: &Path) -> Result<CsrMatrix> {
    parse_edge_list(&read(path)?, path)
}

pub fn write_edge_list(path: &Path, a: &CsrMatrix) -> Result<()> {
    let mut out = String::new();
    for (r, c, v) in a.iter() {
        let _ = writeln!(out, "{r}\t{c}\t{v:?}");
    }
    write(path, &out)
}

/// `<stem>.<suffix>` next to `graph`.
pub fn sibling(graph: &Path, suffix: &str) -> PathBuf {
    let stem = graph.file_stem().and_then(|s| s.to_str()).unwrap_or("graph");
    graph.with_file_name(format!("{stem}.{suffix}"))
}

pub fn read_features(path: &Path) -> Result<DenseMat> {
    let text = read(path)?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let vals = line
            .split('\t')
            .map(|t| field::<f64>(path, i + 1, Some(t.trim()), "feature value"))
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(parse_err(path, i + 1, format!("expected {w} columns, found {}", vals.len())))
            }
            _ => {}
        }
        data.extend(vals);
        rows += 1;
    }
    DenseMat::from_vec(rows, width.unwrap_or(0), data)
}

pub fn write_features(path: &Path, x: &DenseMat) -> Result<()> {
    let mut out = String::new();
    for r in 0..x.n_rows() {
        let row: Vec<String> = x.row(r).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    write(path, &out)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| field(path, i + 1, Some(l.trim()), "label"))
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::new();
    for y in labels {
        let _ = writeln!(out, "{y}");
    }
    write(path, &out)
}

/// A graph with whatever sidecar data was found next to it.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub a: CsrMatrix,
    pub features: Option<DenseMat>,
    pub labels: Option<Vec<usize>>,
}

pub fn load_graph(path: &Path, format: GraphFormat) -> Result<LoadedGraph> {
    let a = match format {
        GraphFormat::MatrixMarket => read_matrix_market(path)?,
        GraphFormat::EdgeListTsv => read_edge_list(path)?,
    };
    let fpath = sibling(path, "features.tsv");
    let features = if fpath.exists() { Some(read_features(&fpath)?) } else { None };
    let lpath = sibling(path, "labels.tsv");
    let labels = if lpath.exists() { Some(read_labels(&lpath)?) } else { None };
    let n = a.n_rows();
    if let Some(x) = &features {
        if x.n_rows() != n {
            return Err(parse_err(&fpath, x.n_rows(), format!("{} feature rows for {n} vertices", x.n_rows())));
        }
    }
    if let Some(y) = &labels {
        if y.len() != n {
            return Err(parse_err(&lpath, y.len(), format!("{} labels for {n} vertices", y.len())));
        }
    }
    Ok(LoadedGraph { a, features, labels })
}

/// One part id per line, in original vertex order.
pub fn write_partition(path: &Path, p: &Partition) -> Result<()> {
    let mut out = String::new();
    for q in p.assignment() {
        let _ = writeln!(out, "{q}");
    }
    write(path, &out)
}

/// Reads a partition file written by [`write_partition`]; `k` is one past
/// the largest part id unless given.
pub fn read_partition(path: &Path, k: Option<usize>) -> Result<Partition> {
    let text = read(path)?;
    let assignment: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| field(path, i + 1, Some(l.trim()), "part id"))
        .collect::<Result<_>>()?;
    let k = k.unwrap_or_else(|| assignment.iter().max().map_or(0, |m| m + 1));
    Partition::from_assignment(assignment, k)
}
