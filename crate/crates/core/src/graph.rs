//! Attributed graphs: loading, validation and attribute preprocessing.
//!
//! Files:
//! - edge list: one `src<TAB>dst` pair per line, `#` starts a comment;
//! - attributes: one whitespace-separated row of reals per node;
//! - labels: one integer per line;
//! - optional id file: one external node id per line, in node order. When present,
//!   edge endpoints are resolved through it instead of being parsed as integers.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: node index {index} out of range for {n} nodes")]
    IndexOutOfRange {
        path: PathBuf,
        line: usize,
        index: usize,
        n: usize,
    },
    #[error("{path}:{line}: expected {expected} attribute values, found {found}")]
    RowLength {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: non-finite attribute value in column {col}")]
    NonFinite {
        path: PathBuf,
        line: usize,
        col: usize,
    },
    #[error("{path}:{line}: unknown node id {id:?}")]
    UnknownId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("node {index} out of range for {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("manifest {path}: {msg}")]
    Manifest { path: PathBuf, msg: String },
}

/// Per-row attribute scaling applied at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    None,
    RowSum,
    L2Row,
}

impl std::fmt::Display for Normalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Normalization::None => "none",
            Normalization::RowSum => "row-sum",
            Normalization::L2Row => "l2-row",
        })
    }
}

/// What the raw attribute values looked like before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    /// Every value is 0 or 1.
    Binary,
    /// Nonnegative integers (word counts).
    Counts,
    /// Anything else, e.g. tf-idf weights.
    Real,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub edge_file: PathBuf,
    pub attr_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_file: Option<PathBuf>,
    /// When absent, bag-of-words style attributes get `row-sum`, everything else `none`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Normalization>,
    /// Directory relative paths are resolved against; set from the manifest's location.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn from_path(path: &Path) -> Result<Self, GraphError> {
        let text = read_text(path)?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| GraphError::Manifest {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?;
        manifest.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(manifest)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Facts recorded while loading, kept for run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadInfo {
    pub edge_lines: usize,
    pub self_loops_dropped: usize,
    pub duplicate_edges_merged: usize,
    pub attribute_kind: AttributeKind,
    pub normalization: Normalization,
}

/// Undirected attributed graph with dense node ids `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    attributes: Tensor,
    labels: Option<Vec<usize>>,
    node_ids: Option<Vec<String>>,
}

impl Graph {
    /// Builds a graph from (possibly directed, duplicated) edges. Edges are symmetrized,
    /// deduplicated, and self-loops are dropped. Node count is the attribute row count.
    pub fn new(
        edges: impl IntoIterator<Item = (usize, usize)>,
        attributes: Tensor,
        labels: Option<Vec<usize>>,
    ) -> Result<Self, GraphError> {
        Self::build(edges, attributes, labels).map(|(g, _, _)| g)
    }

    fn build(
        edges: impl IntoIterator<Item = (usize, usize)>,
        attributes: Tensor,
        labels: Option<Vec<usize>>,
    ) -> Result<(Self, usize, usize), GraphError> {
        let n = attributes.rows();
        if let Some((i, _)) = attributes
            .iter_rows()
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            return Err(GraphError::Invalid(format!(
                "attribute row {i} is not finite"
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(GraphError::Invalid(format!(
                    "{} labels for {n} nodes",
                    l.len()
                )));
            }
        }
        let mut undirected = Vec::new();
        let mut self_loops = 0;
        let mut total = 0;
        for (a, b) in edges {
            for idx in [a, b] {
                if idx >= n {
                    return Err(GraphError::NodeOutOfRange { index: idx, n });
                }
            }
            total += 1;
            if a == b {
                self_loops += 1;
                continue;
            }
            undirected.push((a.min(b), a.max(b)));
        }
        undirected.sort_unstable();
        undirected.dedup();
        let duplicates = total - self_loops - undirected.len();

        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &undirected {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok((
            Self {
                edges: undirected,
                neighbors,
                attributes,
                labels,
                node_ids: None,
            },
            self_loops,
            duplicates,
        ))
    }

    pub fn with_node_ids(mut self, ids: Vec<String>) -> Result<Self, GraphError> {
        if ids.len() != self.n() {
            return Err(GraphError::Invalid(format!(
                "{} node ids for {} nodes",
                ids.len(),
                self.n()
            )));
        }
        self.node_ids = Some(ids);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.attributes.rows()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.cols()
    }

    /// Undirected edges `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Sorted neighbor list of `i`: the nonzero columns of adjacency row `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn adjacency_row(&self, i: usize) -> Result<&[usize], GraphError> {
        self.neighbors
            .get(i)
            .map(Vec::as_slice)
            .ok_or(GraphError::NodeOutOfRange { index: i, n: self.n() })
    }

    /// Dense 0/1 adjacency row of length n.
    pub fn adjacency_row_dense(&self, i: usize) -> Result<Vec<f64>, GraphError> {
        let mut row = vec![0.0; self.n()];
        for &j in self.adjacency_row(i)? {
            row[j] = 1.0;
        }
        Ok(row)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors
            .get(i)
            .is_some_and(|l| l.binary_search(&j).is_ok())
    }

    pub fn attributes(&self) -> &Tensor {
        &self.attributes
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Number of distinct ground-truth classes.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels.as_ref().map(|l| {
            let mut v = l.clone();
            v.sort_unstable();
            v.dedup();
            v.len()
        })
    }

    pub fn node_ids(&self) -> Option<&[String]> {
        self.node_ids.as_deref()
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let n = self.n();
        if perm.len() != n {
            return Err(GraphError::Invalid("permutation length mismatch".into()));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(GraphError::Invalid("not a permutation".into()));
            }
        }
        let mut attrs = Tensor::zeros(n, self.num_attributes());
        for i in 0..n {
            attrs.row_mut(perm[i]).copy_from_slice(self.attributes.row(i));
        }
        let labels = self.labels.as_ref().map(|l| {
            let mut out = vec![0; n];
            for i in 0..n {
                out[perm[i]] = l[i];
            }
            out
        });
        Graph::new(
            self.edges.iter().map(|&(a, b)| (perm[a], perm[b])),
            attrs,
            labels,
        )
    }
}

/// Scales each attribute row. Rows with zero norm are passed through unchanged.
pub fn normalize_attributes(x: &Tensor, mode: Normalization) -> Tensor {
    let mut out = x.clone();
    if mode == Normalization::None {
        return out;
    }
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = match mode {
            Normalization::RowSum => row.iter().map(|v| v.abs()).sum::<f64>(),
            Normalization::L2Row => row.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Normalization::None => unreachable!(),
        };
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

pub fn attribute_kind(x: &Tensor) -> AttributeKind {
    let data = x.data();
    if data.iter().all(|&v| v == 0.0 || v == 1.0) {
        AttributeKind::Binary
    } else if data.iter().all(|&v| v >= 0.0 && v.fract() == 0.0) {
        AttributeKind::Counts
    } else {
        AttributeKind::Real
    }
}

fn read_text(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_attributes(path: &Path) -> Result<Tensor, GraphError> {
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(width.unwrap_or(0));
        for (col, tok) in line.split_whitespace().enumerate() {
            let v: f64 = tok.parse().map_err(|_| GraphError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("cannot parse {tok:?} as a real number"),
            })?;
            if !v.is_finite() {
                return Err(GraphError::NonFinite {
                    path: path.to_path_buf(),
                    line: line_no,
                    col,
                });
            }
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(GraphError::RowLength {
                    path: path.to_path_buf(),
                    line: line_no,
                    expected: w,
                    found: row.len(),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    Tensor::from_rows(&rows).map_err(|e| GraphError::Invalid(e.to_string()))
}

fn parse_labels(path: &Path, n: usize) -> Result<Vec<usize>, GraphError> {
    let text = read_text(path)?;
    let mut labels = Vec::with_capacity(n);
    for (lineno, line) in text.lines().enumerate() {
        let tok = line.trim();
        if tok.is_empty() {
            continue;
        }
        let v: usize = tok.parse().map_err(|_| GraphError::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("cannot parse {tok:?} as a class id"),
        })?;
        labels.push(v);
    }
    if labels.len() != n {
        return Err(GraphError::Invalid(format!(
            "{}: {} labels for {n} nodes",
            path.display(),
            labels.len()
        )));
    }
    Ok(labels)
}

fn parse_ids(path: &Path) -> Result<Vec<String>, GraphError> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn parse_edges(
    path: &Path,
    n: usize,
    ids: Option<&HashMap<&str, usize>>,
) -> Result<Vec<(usize, usize)>, GraphError> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(GraphError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected 2 fields, found {}", toks.len()),
            });
        }
        let mut ends = [0usize; 2];
        for (slot, tok) in ends.iter_mut().zip(&toks) {
            *slot = match ids {
                Some(map) => *map.get(tok).ok_or_else(|| GraphError::UnknownId {
                    path: path.to_path_buf(),
                    line: line_no,
                    id: tok.to_string(),
                })?,
                None => tok.parse().map_err(|_| GraphError::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!("cannot parse {tok:?} as a node index"),
                })?,
            };
            if *slot >= n {
                return Err(GraphError::IndexOutOfRange {
                    path: path.to_path_buf(),
                    line: line_no,
                    index: *slot,
                    n,
                });
            }
        }
        edges.push((ends[0], ends[1]));
    }
    Ok(edges)
}

/// Loads and validates the files named by `manifest`.
pub fn load_graph(manifest: &DatasetManifest) -> Result<(Graph, LoadInfo), GraphError> {
    let raw = parse_attributes(&manifest.resolve(&manifest.attr_file))?;
    let n = raw.rows();
    let kind = attribute_kind(&raw);
    let normalization = manifest.normalization.unwrap_or(match kind {
        AttributeKind::Binary | AttributeKind::Counts => Normalization::RowSum,
        AttributeKind::Real => Normalization::None,
    });
    let attributes = normalize_attributes(&raw, normalization);

    let ids = match &manifest.id_file {
        Some(p) => {
            let ids = parse_ids(&manifest.resolve(p))?;
            if ids.len() != n {
                return Err(GraphError::Invalid(format!(
                    "{} node ids for {n} attribute rows",
                    ids.len()
                )));
            }
            Some(ids)
        }
        None => None,
    };
    let id_map: Option<HashMap<&str, usize>> = ids
        .as_ref()
        .map(|v| v.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect());
    if let (Some(map), Some(v)) = (&id_map, &ids) {
        if map.len() != v.len() {
            return Err(GraphError::Invalid("duplicate node ids".into()));
        }
    }

    let edge_path = manifest.resolve(&manifest.edge_file);
    let edges = parse_edges(&edge_path, n, id_map.as_ref())?;
    let edge_lines = edges.len();
    let labels = match &manifest.label_file {
        Some(p) => Some(parse_labels(&manifest.resolve(p), n)?),
        None => None,
    };
    let (mut graph, self_loops, duplicates) = Graph::build(edges, attributes, labels)?;
    graph.node_ids = ids;
    Ok((
        graph,
        LoadInfo {
            edge_lines,
            self_loops_dropped: self_loops,
            duplicate_edges_merged: duplicates,
            attribute_kind: kind,
            normalization,
        },
    ))
}

/// Convenience: read a manifest file and load the graph it describes.
pub fn load_graph_from_manifest(path: &Path) -> Result<(Graph, LoadInfo), GraphError> {
    load_graph(&DatasetManifest::from_path(path)?)
}

/// Writes `graph` as `<stem>.edges`, `<stem>.attrs`, optional `<stem>.labels` and
/// `<stem>.ids` (edges then use the external ids), plus `<stem>.json` (a manifest with normalization `none`, since the stored
/// attributes are already normalized). Returns the manifest path.
pub fn save_graph(graph: &Graph, dir: &Path, stem: &str) -> Result<PathBuf, GraphError> {
    let io = |path: &Path, source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    };
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;

    let mut edges = String::new();
    for &(a, b) in graph.edges() {
        match graph.node_ids() {
            Some(ids) => edges.push_str(&format!("{}\t{}\n", ids[a], ids[b])),
            None => edges.push_str(&format!("{a}\t{b}\n")),
        }
    }
    let edge_file = PathBuf::from(format!("{stem}.edges"));
    fs::write(dir.join(&edge_file), edges).map_err(|e| io(&dir.join(&edge_file), e))?;

    let mut attrs = String::new();
    for row in graph.attributes().iter_rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        attrs.push_str(&line.join(" "));
        attrs.push('\n');
    }
    let attr_file = PathBuf::from(format!("{stem}.attrs"));
    fs::write(dir.join(&attr_file), attrs).map_err(|e| io(&dir.join(&attr_file), e))?;

    let label_file = match graph.labels() {
        Some(labels) => {
            let p = PathBuf::from(format!("{stem}.labels"));
            let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
            fs::write(dir.join(&p), text).map_err(|e| io(&dir.join(&p), e))?;
            Some(p)
        }
        None => None,
    };

    let id_file = match graph.node_ids() {
        Some(ids) => {
            let p = PathBuf::from(format!("{stem}.ids"));
            let text: String = ids.iter().map(|s| format!("{s}\n")).collect();
            fs::write(dir.join(&p), text).map_err(|e| io(&dir.join(&p), e))?;
            Some(p)
        }
        None => None,
    };

    let manifest = DatasetManifest {
        name: Some(stem.to_string()),
        edge_file,
        attr_file,
        label_file,
        id_file,
        normalization: Some(Normalization::None),
        base_dir: PathBuf::new(),
    };
    let path = dir.join(format!("{stem}.json"));
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| io(&path, e))?;
    Ok(path)
}
