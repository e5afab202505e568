//! Undirected attributed graph snapshots and structural edits.
//!
//! A [`Graph`] is immutable once built. Adjacency is kept in CSR form with
//! both directions of every undirected edge stored, neighbor lists sorted
//! ascending, no self-loops and no duplicates. Every edit produces a new
//! snapshot through [`Graph::apply_delta`].

mod generate;
mod io;

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use generate::{generate_powerlaw, PowerlawSpec};
pub use io::{load_graph, load_graph_dir, load_linqs, save_graph_dir, LoadOptions, LoadReport};

/// Label value written to label files for nodes without a label.
pub const UNLABELED: i64 = -1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("node id {id} out of range for a graph with {num_nodes} nodes")]
    NodeOutOfRange { id: usize, num_nodes: usize },
    #[error("feature matrix has {rows} rows but the graph has {num_nodes} nodes")]
    FeatureRowCount { rows: usize, num_nodes: usize },
    #[error("feature row {row} has {found} columns, expected {expected}")]
    RaggedFeatures { row: usize, expected: usize, found: usize },
    #[error("label vector has {found} entries, expected {expected}")]
    LabelCount { expected: usize, found: usize },
    #[error("label {label} at node {node} is outside 0..{num_classes}")]
    LabelOutOfRange { node: usize, label: usize, num_classes: usize },
    #[error("cannot remove edge ({0}, {1}): not present")]
    MissingEdge(usize, usize),
    #[error("cannot add edge ({0}, {1}): already present")]
    DuplicateEdge(usize, usize),
    #[error("self-loop ({0}, {0}) is not allowed")]
    SelfLoop(usize),
    #[error("cannot drop node {0}: it still has edges to retained nodes")]
    DropConnectedNode(usize),
    #[error("generator precondition violated: {0}")]
    InvalidGenerator(String),
    #[error("parse error in {file} line {line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// A node appended by a [`GraphDelta`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewNode {
    pub features: Vec<f64>,
    pub label: Option<usize>,
    /// `true` for real nodes, `false` for generated pseudo nodes.
    pub real: bool,
}

/// A batch of structural edits against a base graph.
///
/// Application order: edge removals, trailing-node drops, node additions,
/// edge additions. Added edges may reference appended nodes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphDelta {
    pub removed_edges: Vec<(usize, usize)>,
    pub added_edges: Vec<(usize, usize)>,
    pub added_nodes: Vec<NewNode>,
    /// Number of trailing nodes to drop. Used by inverse deltas.
    #[serde(default)]
    pub dropped_tail_nodes: usize,
}

impl GraphDelta {
    pub fn is_empty(&self) -> bool {
        self.removed_edges.is_empty()
            && self.added_edges.is_empty()
            && self.added_nodes.is_empty()
            && self.dropped_tail_nodes == 0
    }

    /// Delta that undoes `self` when applied to `base.apply_delta(self)`.
    pub fn inverse(&self, base: &Graph) -> GraphDelta {
        let keep = base.num_nodes() - self.dropped_tail_nodes;
        let restored: Vec<NewNode> = (keep..base.num_nodes()).map(|v| base.node_record(v)).collect();
        // Edges among dropped nodes vanish with them and must come back.
        let mut re_add: BTreeSet<(usize, usize)> = self.removed_edges.iter().map(|&(u, v)| canonical(u, v)).collect();
        re_add.extend(base.edges().filter(|&(_, v)| v >= keep));
        GraphDelta {
            removed_edges: self.added_edges.clone(),
            added_edges: re_add.into_iter().collect(),
            added_nodes: restored,
            dropped_tail_nodes: self.added_nodes.len(),
        }
    }
}

fn canonical(u: usize, v: usize) -> (usize, usize) {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Immutable undirected attributed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    indptr: Vec<usize>,
    indices: Vec<usize>,
    features: Array2<f64>,
    labels: Vec<Option<usize>>,
    real: Vec<bool>,
    num_classes: usize,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list. Reversed and duplicate
    /// pairs are merged; self-loops are dropped and counted.
    ///
    /// `num_classes` of `None` infers `max label + 1`.
    pub fn from_edges(
        features: Array2<f64>,
        labels: Vec<Option<usize>>,
        num_classes: Option<usize>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Graph, usize)> {
        let n = features.nrows();
        let real = vec![true; n];
        Self::build(features, labels, real, num_classes, edges)
    }

    pub(crate) fn build(
        features: Array2<f64>,
        labels: Vec<Option<usize>>,
        real: Vec<bool>,
        num_classes: Option<usize>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Graph, usize)> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(GraphError::LabelCount { expected: n, found: labels.len() });
        }
        debug_assert_eq!(real.len(), n);
        let inferred = labels.iter().flatten().map(|&l| l + 1).max().unwrap_or(0);
        let num_classes = num_classes.unwrap_or(inferred);
        for (node, label) in labels.iter().enumerate() {
            if let Some(l) = *label {
                if l >= num_classes {
                    return Err(GraphError::LabelOutOfRange { node, label: l, num_classes });
                }
            }
        }
        let mut self_loops = 0;
        let mut pairs = BTreeSet::new();
        for (u, v) in edges {
            for id in [u, v] {
                if id >= n {
                    return Err(GraphError::NodeOutOfRange { id, num_nodes: n });
                }
            }
            if u == v {
                self_loops += 1;
                continue;
            }
            pairs.insert((u, v));
            pairs.insert((v, u));
        }
        let (indptr, indices) = csr_from_sorted_pairs(n, pairs.into_iter());
        Ok((Graph { indptr, indices, features, labels, real, num_classes }, self_loops))
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.indices[self.indptr[v]..self.indptr[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.indptr[v + 1] - self.indptr[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|v| self.degree(v)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes() && v < self.num_nodes() && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| self.neighbors(u).iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    pub fn csr(&self) -> (&[usize], &[usize]) {
        (&self.indptr, &self.indices)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels[v]
    }

    /// Realness flags: `true` for real nodes, `false` for pseudo nodes.
    pub fn pseudo_flags(&self) -> &[bool] {
        &self.real
    }

    pub fn is_real(&self, v: usize) -> bool {
        self.real[v]
    }

    pub fn num_pseudo(&self) -> usize {
        self.real.iter().filter(|r| !**r).count()
    }

    fn node_record(&self, v: usize) -> NewNode {
        NewNode { features: self.features.row(v).to_vec(), label: self.labels[v], real: self.real[v] }
    }

    /// Same structure with a replaced label vector.
    pub fn with_labels(&self, labels: Vec<Option<usize>>) -> Result<Graph> {
        if labels.len() != self.num_nodes() {
            return Err(GraphError::LabelCount { expected: self.num_nodes(), found: labels.len() });
        }
        for (node, l) in labels.iter().enumerate() {
            if let Some(l) = *l {
                if l >= self.num_classes {
                    return Err(GraphError::LabelOutOfRange { node, label: l, num_classes: self.num_classes });
                }
            }
        }
        Ok(Graph { labels, ..self.clone() })
    }

    /// Same graph keeping only the edges in `keep`, which must be a subset.
    pub fn with_edge_subset(&self, keep: &[(usize, usize)]) -> Result<Graph> {
        let mut pairs = BTreeSet::new();
        for &(u, v) in keep {
            if !self.has_edge(u, v) {
                return Err(GraphError::MissingEdge(u, v));
            }
            pairs.insert((u, v));
            pairs.insert((v, u));
        }
        let (indptr, indices) = csr_from_sorted_pairs(self.num_nodes(), pairs.into_iter());
        Ok(Graph { indptr, indices, ..self.clone() })
    }

    /// Rows rescaled to unit L1 norm; all-zero rows stay zero.
    pub fn l1_normalized(&self) -> Graph {
        let mut features = self.features.clone();
        for mut row in features.axis_iter_mut(Axis(0)) {
            let s: f64 = row.iter().map(|x| x.abs()).sum();
            if s > 0.0 {
                row.mapv_inplace(|x| x / s);
            }
        }
        Graph { features, ..self.clone() }
    }

    /// Applies `delta` and returns the edited snapshot; `self` is unchanged.
    pub fn apply_delta(&self, delta: &GraphDelta) -> Result<Graph> {
        let n = self.num_nodes();
        let mut pairs: BTreeSet<(usize, usize)> = self.edges().collect();
        for &(u, v) in &delta.removed_edges {
            if !pairs.remove(&canonical(u, v)) {
                return Err(GraphError::MissingEdge(u, v));
            }
        }
        let keep = n
            .checked_sub(delta.dropped_tail_nodes)
            .ok_or(GraphError::NodeOutOfRange { id: delta.dropped_tail_nodes, num_nodes: n })?;
        if let Some(&(u, v)) = pairs.iter().find(|&&(u, v)| (u < keep) != (v < keep)) {
            return Err(GraphError::DropConnectedNode(u.max(v)));
        }
        pairs.retain(|&(_, v)| v < keep);

        let d = self.feature_dim();
        let total = keep + delta.added_nodes.len();
        let mut features = Array2::zeros((total, d));
        features.slice_mut(ndarray::s![..keep, ..]).assign(&self.features.slice(ndarray::s![..keep, ..]));
        let mut labels = self.labels[..keep].to_vec();
        let mut real = self.real[..keep].to_vec();
        for (k, node) in delta.added_nodes.iter().enumerate() {
            if node.features.len() != d {
                return Err(GraphError::RaggedFeatures { row: keep + k, expected: d, found: node.features.len() });
            }
            features.row_mut(keep + k).assign(&ndarray::ArrayView1::from(&node.features));
            labels.push(node.label);
            real.push(node.real);
        }

        for &(u, v) in &delta.added_edges {
            for id in [u, v] {
                if id >= total {
                    return Err(GraphError::NodeOutOfRange { id, num_nodes: total });
                }
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if !pairs.insert(canonical(u, v)) {
                return Err(GraphError::DuplicateEdge(u, v));
            }
        }
        let (g, _) = Graph::build(features, labels, real, Some(self.num_classes), pairs)?;
        Ok(g)
    }

    /// Removes every pseudo node together with its edges.
    ///
    /// Pseudo nodes are always appended after the real nodes, so this is a
    /// truncation of the trailing block.
    pub fn strip_pseudo(&self) -> Result<Graph> {
        let first_pseudo = self.real.iter().position(|r| !r).unwrap_or(self.num_nodes());
        if self.real[first_pseudo..].iter().any(|r| *r) {
            // Interleaved pseudo nodes never come out of this crate's builders.
            return Err(GraphError::DropConnectedNode(first_pseudo));
        }
        let removed: Vec<(usize, usize)> =
            self.edges().filter(|&(u, v)| u >= first_pseudo || v >= first_pseudo).collect();
        self.apply_delta(&GraphDelta {
            removed_edges: removed,
            dropped_tail_nodes: self.num_nodes() - first_pseudo,
            ..Default::default()
        })
    }

    /// `true` when every stored edge has its reverse, lists are sorted and
    /// free of duplicates and self-loops.
    pub fn check_invariants(&self) -> bool {
        let n = self.num_nodes();
        if self.real.len() != n || self.features.nrows() != n || self.indptr.len() != n + 1 {
            return false;
        }
        (0..n).all(|u| {
            let nb = self.neighbors(u);
            nb.windows(2).all(|w| w[0] < w[1])
                && nb.iter().all(|&v| v != u && v < n && self.neighbors(v).binary_search(&u).is_ok())
        })
    }
}

fn csr_from_sorted_pairs(n: usize, pairs: impl Iterator<Item = (usize, usize)>) -> (Vec<usize>, Vec<usize>) {
    let mut indptr = vec![0usize; n + 1];
    let mut indices = Vec::new();
    for (u, v) in pairs {
        indptr[u + 1] += 1;
        indices.push(v);
    }
    for i in 0..n {
        indptr[i + 1] += indptr[i];
    }
    (indptr, indices)
}

/// Degree summary of a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    pub median: f64,
    /// `histogram[d]` = number of nodes with degree `d`.
    pub histogram: Vec<usize>,
}

pub fn degree_stats(g: &Graph) -> DegreeStats {
    let mut degrees = g.degrees();
    if degrees.is_empty() {
        return DegreeStats { min: 0, max: 0, mean: 0.0, median: 0.0, histogram: vec![] };
    }
    degrees.sort_unstable();
    let max = *degrees.last().unwrap();
    let mut histogram = vec![0; max + 1];
    for &d in &degrees {
        histogram[d] += 1;
    }
    let n = degrees.len();
    let median = if n % 2 == 1 { degrees[n / 2] as f64 } else { (degrees[n / 2 - 1] + degrees[n / 2]) as f64 / 2.0 };
    DegreeStats { min: degrees[0], max, mean: degrees.iter().sum::<usize>() as f64 / n as f64, median, histogram }
}
