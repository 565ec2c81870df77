use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Adjacency, DomainGraph};
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Reads a whitespace-separated edge list into a symmetric adjacency matrix.
///
/// Self-loops are dropped and repeated edges collapse. Blank lines and lines
/// starting with `#` are skipped.
pub fn load_edge_list(path: impl AsRef<Path>, num_nodes: usize) -> Result<Adjacency> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut a = Array2::zeros((num_nodes, num_nodes));
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let mut next = || -> Result<usize> {
            let tok = fields
                .next()
                .ok_or_else(|| parse_err(path, lineno + 1, "expected two node indices"))?;
            tok.parse()
                .map_err(|_| parse_err(path, lineno + 1, format!("bad node index {tok:?}")))
        };
        let (u, v) = (next()?, next()?);
        if fields.next().is_some() {
            return Err(parse_err(path, lineno + 1, "trailing fields after edge"));
        }
        for idx in [u, v] {
            if idx >= num_nodes {
                return Err(Error::OutOfBounds {
                    index: idx,
                    size: num_nodes,
                });
            }
        }
        if u != v {
            a[[u, v]] = 1;
            a[[v, u]] = 1;
        }
    }
    Ok(a)
}

/// Reads `id<TAB>f1,...,fd<TAB>label` rows. Row `i` of the feature matrix is node `i`.
pub fn load_node_table(path: impl AsRef<Path>) -> Result<(Array2<f64>, Vec<usize>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<(usize, Vec<f64>, usize)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(parse_err(
                path,
                lineno + 1,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        let id: usize = cols[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, format!("bad node id {:?}", cols[0])))?;
        let feats = cols[1]
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(path, lineno + 1, format!("bad feature value: {e}")))?;
        let label: usize = cols[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, format!("bad label {:?}", cols[2])))?;
        rows.push((id, feats, label));
    }
    if rows.is_empty() {
        return Err(format_err(path, "node table is empty"));
    }
    let n = rows.len();
    let d = rows[0].1.len();
    let mut features = Array2::zeros((n, d));
    let mut labels = vec![0; n];
    let mut seen = vec![false; n];
    for (id, feats, label) in rows {
        if feats.len() != d {
            return Err(format_err(
                path,
                format!("node {id} has {} features, expected {d}", feats.len()),
            ));
        }
        if id >= n || seen[id] {
            return Err(format_err(
                path,
                format!("node ids must be a permutation of 0..{n}; offending id {id}"),
            ));
        }
        seen[id] = true;
        features.row_mut(id).assign(&ndarray::Array1::from(feats));
        labels[id] = label;
    }
    Ok((features, labels))
}

/// Loads one domain from its edge list and node table.
///
/// `num_classes` defaults to `max(label) + 1` when not given.
pub fn load_domain(
    edges: impl AsRef<Path>,
    nodes: impl AsRef<Path>,
    num_classes: Option<usize>,
    domain_id: impl Into<String>,
) -> Result<DomainGraph> {
    let (features, labels) = load_node_table(nodes)?;
    let adjacency = load_edge_list(edges, labels.len())?;
    let c = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    DomainGraph::new(adjacency, features, labels, c, domain_id)
}

pub fn write_edge_list(path: impl AsRef<Path>, a: &Adjacency) -> Result<()> {
    let n = a.nrows();
    let mut out = String::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if a[[i, j]] != 0 {
                writeln!(out, "{i} {j}").unwrap();
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_node_table(path: impl AsRef<Path>, features: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(Error::shape("node table rows", labels.len(), features.nrows()));
    }
    let mut out = String::new();
    for (i, (row, y)) in features.rows().into_iter().zip(labels).enumerate() {
        write!(out, "{i}\t").unwrap();
        for (k, v) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        writeln!(out, "\t{y}").unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}
