//! Hub denoising and latent tail-neighbor discovery.
//!
//! Both steps score a node pair `(i, j)` as
//! `<softmax(z_label_i), softmax(z_label_j)> * sigmoid(<z_link_i, z_link_j>)`,
//! which lies in `(0, 1)` so the thresholds `L` and `P` are comparable with it.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::engine::{sigmoid, softmax_rows, EmbeddingPair};
use crate::graph::{Graph, GraphDelta, GraphError};
use crate::pagerank::NodePartition;
use crate::rng::seeded;

pub const DEFAULT_HUB_THRESHOLD: f64 = 0.1;
pub const DEFAULT_P: f64 = 0.8;
pub const DEFAULT_CHUNK_ROWS: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("hub {0} has no neighbors")]
    IsolatedHub(usize),
    #[error("embeddings have {rows} rows but the graph has {nodes} nodes")]
    EmbeddingRows { rows: usize, nodes: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("edit plan line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, AugmentError>;

/// Scores of one node against its candidate partners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScores {
    pub owner: usize,
    pub candidates: Vec<usize>,
    pub scores: Vec<f64>,
}

impl SimilarityScores {
    /// `(candidate, score)` pairs ordered by descending score, then ascending id.
    pub fn ranked(&self) -> Vec<(usize, f64)> {
        let mut r: Vec<(usize, f64)> = self.candidates.iter().copied().zip(self.scores.iter().copied()).collect();
        r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiscoveryStrategy {
    /// Every candidate scoring at least `p`.
    Threshold { p: f64 },
    /// The `q` best candidates.
    TopQ { q: usize },
}

impl Default for DiscoveryStrategy {
    fn default() -> Self {
        DiscoveryStrategy::Threshold { p: DEFAULT_P }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Hub edges scoring below this are dropped.
    pub hub_threshold: f64,
    pub strategy: DiscoveryStrategy,
    pub chunk_rows: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hub_threshold: DEFAULT_HUB_THRESHOLD,
            strategy: DiscoveryStrategy::default(),
            chunk_rows: DEFAULT_CHUNK_ROWS,
        }
    }
}

fn open_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(AugmentError::InvalidConfig(format!("{name} = {x} must lie in (0, 1)")))
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        open_unit("L", self.hub_threshold)?;
        match self.strategy {
            DiscoveryStrategy::Threshold { p } => open_unit("P", p)?,
            DiscoveryStrategy::TopQ { q: 0 } => return Err(AugmentError::InvalidConfig("Q must be >= 1".into())),
            DiscoveryStrategy::TopQ { .. } => {}
        }
        if self.chunk_rows == 0 {
            return Err(AugmentError::InvalidConfig("chunk_rows must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    Add,
    Remove,
}

/// One edge edit; `u` is the hub or tail that triggered it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeEdit {
    pub op: EditOp,
    pub u: usize,
    pub v: usize,
    pub score: f64,
}

/// Ordered removals and additions with their justifying scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeEditPlan {
    pub edits: Vec<EdgeEdit>,
}

impl EdgeEditPlan {
    pub fn removals(&self) -> impl Iterator<Item = &EdgeEdit> {
        self.edits.iter().filter(|e| e.op == EditOp::Remove)
    }

    pub fn additions(&self) -> impl Iterator<Item = &EdgeEdit> {
        self.edits.iter().filter(|e| e.op == EditOp::Add)
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edits.len()
    }

    /// Removals of `self` followed by everything in `other`.
    pub fn merged(mut self, other: EdgeEditPlan) -> EdgeEditPlan {
        self.edits.extend(other.edits);
        self
    }

    pub fn to_delta(&self) -> GraphDelta {
        GraphDelta {
            removed_edges: self.removals().map(|e| (e.u, e.v)).collect(),
            added_edges: self.additions().map(|e| (e.u, e.v)).collect(),
            ..GraphDelta::default()
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.edits {
            out.push_str(&serde_json::to_string(e).expect("edit serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| io_err(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<EdgeEditPlan> {
        let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
        let mut edits = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let e =
                serde_json::from_str(&line).map_err(|e| AugmentError::Parse { line: i + 1, message: e.to_string() })?;
            edits.push(e);
        }
        Ok(EdgeEditPlan { edits })
    }
}

/// Node pairs an edit may touch: an edge whose endpoints are both protected
/// is never removed or added.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditScope {
    protected: Vec<bool>,
}

impl EditScope {
    pub fn protecting(num_nodes: usize, nodes: impl IntoIterator<Item = usize>) -> Self {
        let mut protected = vec![false; num_nodes];
        for v in nodes {
            protected[v] = true;
        }
        EditScope { protected }
    }

    pub fn allows(&self, u: usize, v: usize) -> bool {
        let p = |x: usize| self.protected.get(x).copied().unwrap_or(false);
        !(p(u) && p(v))
    }
}

fn io_err(path: &Path, e: std::io::Error) -> AugmentError {
    AugmentError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn key(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

// Fixed summation order keeps chunked and dense results identical.
fn dot(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// Calibrated pair scorer over one embedding pair.
#[derive(Debug, Clone)]
pub struct Scorer {
    probs: Array2<f64>,
    link: Array2<f64>,
}

impl Scorer {
    pub fn new(emb: &EmbeddingPair) -> Self {
        Scorer { probs: softmax_rows(&emb.z_label), link: emb.z_link.clone() }
    }

    fn checked(emb: &EmbeddingPair, g: &Graph) -> Result<Self> {
        for rows in [emb.z_label.nrows(), emb.z_link.nrows()] {
            if rows != g.num_nodes() {
                return Err(AugmentError::EmbeddingRows { rows, nodes: g.num_nodes() });
            }
        }
        Ok(Self::new(emb))
    }

    pub fn label_factor(&self, i: usize, j: usize) -> f64 {
        dot(self.probs.row(i), self.probs.row(j))
    }

    pub fn link_factor(&self, i: usize, j: usize) -> f64 {
        sigmoid(dot(self.link.row(i), self.link.row(j)))
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        self.label_factor(i, j) * self.link_factor(i, j)
    }
}

/// Scores of `hub` against each of its neighbors.
pub fn hub_similarity(emb: &EmbeddingPair, g: &Graph, hub: usize) -> Result<SimilarityScores> {
    hub_scores(&Scorer::checked(emb, g)?, g, hub)
}

fn hub_scores(scorer: &Scorer, g: &Graph, hub: usize) -> Result<SimilarityScores> {
    let candidates = g.neighbors(hub).to_vec();
    if candidates.is_empty() {
        return Err(AugmentError::IsolatedHub(hub));
    }
    let scores = candidates.iter().map(|&j| scorer.score(hub, j)).collect();
    Ok(SimilarityScores { owner: hub, candidates, scores })
}

/// Removal plan for hub edges scoring below `l`.
///
/// Each hub keeps its best edge, and an edge is also kept when removing it
/// would leave its other endpoint without neighbors.
pub fn denoise_hubs(emb: &EmbeddingPair, g: &Graph, part: &NodePartition, l: f64) -> Result<EdgeEditPlan> {
    denoise_hubs_scoped(emb, g, part, l, &EditScope::default())
}

/// [`denoise_hubs`] restricted to edges `scope` allows.
pub fn denoise_hubs_scoped(
    emb: &EmbeddingPair,
    g: &Graph,
    part: &NodePartition,
    l: f64,
    scope: &EditScope,
) -> Result<EdgeEditPlan> {
    open_unit("L", l)?;
    let scorer = Scorer::checked(emb, g)?;
    let mut flagged: BTreeMap<(usize, usize), EdgeEdit> = BTreeMap::new();
    let mut protected = HashSet::new();
    for &h in &part.hubs {
        if g.degree(h) == 0 {
            continue;
        }
        let s = hub_scores(&scorer, g, h)?;
        let ranked = s.ranked();
        protected.insert(key(h, ranked[0].0));
        for &(j, score) in &ranked[1..] {
            if score < l && scope.allows(h, j) {
                flagged.entry(key(h, j)).or_insert(EdgeEdit { op: EditOp::Remove, u: h, v: j, score });
            }
        }
    }
    flagged.retain(|k, _| !protected.contains(k));

    let mut removed_at = vec![0usize; g.num_nodes()];
    for &(a, b) in flagged.keys() {
        removed_at[a] += 1;
        removed_at[b] += 1;
    }
    for v in 0..g.num_nodes() {
        if removed_at[v] == 0 || removed_at[v] < g.degree(v) {
            continue;
        }
        let best = flagged
            .iter()
            .filter(|(&(a, b), _)| a == v || b == v)
            .max_by(|x, y| x.1.score.total_cmp(&y.1.score).then(y.0.cmp(x.0)))
            .map(|(&k, _)| k)
            .expect("node has flagged edges");
        flagged.remove(&best);
        removed_at[best.0] -= 1;
        removed_at[best.1] -= 1;
    }
    Ok(EdgeEditPlan { edits: flagged.into_values().collect() })
}

/// Streams tail scores against every node that is neither the tail itself
/// nor one of its neighbors in `g`, `chunk_rows` tails at a time.
pub struct TailScoreStream<'g> {
    scorer: Scorer,
    g: &'g Graph,
    tails: Vec<usize>,
    scope: EditScope,
    chunk_rows: usize,
    next: usize,
    ready: VecDeque<SimilarityScores>,
}

impl TailScoreStream<'_> {
    fn fill(&mut self) {
        let n = self.g.num_nodes();
        let end = (self.next + self.chunk_rows).min(self.tails.len());
        let chunk = &self.tails[self.next..end];
        let mut block = Array2::zeros((chunk.len(), n));
        for (r, &t) in chunk.iter().enumerate() {
            for j in 0..n {
                block[[r, j]] = self.scorer.score(t, j);
            }
        }
        for (r, &t) in chunk.iter().enumerate() {
            let nbrs = self.g.neighbors(t);
            let mut k = 0;
            let (mut candidates, mut scores) = (Vec::new(), Vec::new());
            for j in 0..n {
                while k < nbrs.len() && nbrs[k] < j {
                    k += 1;
                }
                if j == t || (k < nbrs.len() && nbrs[k] == j) || !self.scope.allows(t, j) {
                    continue;
                }
                candidates.push(j);
                scores.push(block[[r, j]]);
            }
            self.ready.push_back(SimilarityScores { owner: t, candidates, scores });
        }
        self.next = end;
    }
}

impl Iterator for TailScoreStream<'_> {
    type Item = SimilarityScores;

    fn next(&mut self) -> Option<SimilarityScores> {
        if self.ready.is_empty() && self.next < self.tails.len() {
            self.fill();
        }
        self.ready.pop_front()
    }
}

pub fn tail_similarity_chunked<'g>(
    emb: &EmbeddingPair,
    g: &'g Graph,
    part: &NodePartition,
    chunk_rows: usize,
) -> Result<TailScoreStream<'g>> {
    tail_similarity_scoped(emb, g, part, chunk_rows, EditScope::default())
}

/// [`tail_similarity_chunked`] without candidates `scope` forbids.
pub fn tail_similarity_scoped<'g>(
    emb: &EmbeddingPair,
    g: &'g Graph,
    part: &NodePartition,
    chunk_rows: usize,
    scope: EditScope,
) -> Result<TailScoreStream<'g>> {
    if chunk_rows == 0 {
        return Err(AugmentError::InvalidConfig("chunk_rows must be >= 1".into()));
    }
    Ok(TailScoreStream {
        scorer: Scorer::checked(emb, g)?,
        g,
        tails: part.tails.clone(),
        scope,
        chunk_rows,
        next: 0,
        ready: VecDeque::new(),
    })
}

/// Addition plan from tail score rows. A pair proposed by both of its
/// endpoints is emitted once, by the first owner seen.
pub fn discover_tails(scores: impl IntoIterator<Item = SimilarityScores>, strategy: DiscoveryStrategy) -> EdgeEditPlan {
    let mut seen = HashSet::new();
    let mut edits = Vec::new();
    for row in scores {
        let picked: Vec<(usize, f64)> = match strategy {
            DiscoveryStrategy::Threshold { p } => {
                row.candidates.iter().copied().zip(row.scores.iter().copied()).filter(|&(_, s)| s >= p).collect()
            }
            DiscoveryStrategy::TopQ { q } => row.ranked().into_iter().take(q).collect(),
        };
        for (j, score) in picked {
            if seen.insert(key(row.owner, j)) {
                edits.push(EdgeEdit { op: EditOp::Add, u: row.owner, v: j, score });
            }
        }
    }
    EdgeEditPlan { edits }
}

/// Denoises hubs, then adds latent tail neighbors. Candidates are taken
/// from `g` before any removal, and removals are applied first.
pub fn augment(
    g: &Graph,
    emb: &EmbeddingPair,
    part: &NodePartition,
    cfg: &AugmentConfig,
) -> Result<(Graph, EdgeEditPlan)> {
    augment_scoped(g, emb, part, cfg, &EditScope::default())
}

/// [`augment`] restricted to edits `scope` allows.
pub fn augment_scoped(
    g: &Graph,
    emb: &EmbeddingPair,
    part: &NodePartition,
    cfg: &AugmentConfig,
    scope: &EditScope,
) -> Result<(Graph, EdgeEditPlan)> {
    cfg.validate()?;
    Scorer::checked(emb, g)?;
    let removals = denoise_hubs_scoped(emb, g, part, cfg.hub_threshold, scope)?;
    let additions = discover_tails(tail_similarity_scoped(emb, g, part, cfg.chunk_rows, scope.clone())?, cfg.strategy);
    let plan = removals.merged(additions);
    let g_prime = g.apply_delta(&plan.to_delta())?;
    Ok((g_prime, plan))
}

/// Removes `floor(rate * |E|)` uniformly chosen edges.
pub fn random_drop_baseline(g: &Graph, rate: f64, seed: u64) -> Result<Graph> {
    if !(0.0..1.0).contains(&rate) {
        return Err(AugmentError::InvalidConfig(format!("drop rate {rate} must lie in [0, 1)")));
    }
    let edges: Vec<(usize, usize)> = g.edges().collect();
    let k = (rate * edges.len() as f64).floor() as usize;
    let drop: HashSet<usize> = sample(&mut seeded(seed, "random-drop"), edges.len(), k).into_iter().collect();
    let keep: Vec<(usize, usize)> =
        edges.into_iter().enumerate().filter(|(i, _)| !drop.contains(i)).map(|(_, e)| e).collect();
    Ok(g.with_edge_subset(&keep)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::plain;
    use crate::pagerank::PageRankVector;
    use ndarray::array;

    fn partition(hubs: Vec<usize>, tails: Vec<usize>) -> NodePartition {
        NodePartition {
            hubs,
            tails,
            hub_factor: 2.0,
            tail_fraction: 0.3,
            pagerank: PageRankVector {
                values: vec![],
                damping: 0.85,
                iterations_used: 0,
                residual: 0.0,
                converged: true,
            },
        }
    }

    fn uniform_emb(n: usize, classes: usize) -> EmbeddingPair {
        EmbeddingPair { z_link: Array2::zeros((n, 4)), z_label: Array2::zeros((n, classes)) }
    }

    #[test]
    fn hub_score_limits() {
        let g = plain(3, &[(0, 1), (0, 2)]);
        let emb = EmbeddingPair {
            z_link: array![[4.0, 0.0], [5.0, 0.0], [5.0, 0.0]],
            z_label: array![[40.0, 0.0], [40.0, 0.0], [0.0, 40.0]],
        };
        let s = hub_similarity(&emb, &g, 0).unwrap();
        assert_eq!(s.candidates, vec![1, 2]);
        assert!((s.scores[0] - sigmoid(20.0)).abs() < 1e-12 && s.scores[0] > 0.999);
        assert!(s.scores[1] < 1e-15);
    }

    #[test]
    fn uniform_logits_score() {
        let g = plain(2, &[(0, 1)]);
        let s = hub_similarity(&uniform_emb(2, 7), &g, 0).unwrap();
        assert!((s.scores[0] - 0.5 / 7.0).abs() < 1e-15);
        assert!((s.scores[0] - 0.0714).abs() < 1e-4);
    }

    #[test]
    fn isolated_hub_is_an_error() {
        let g = plain(2, &[]);
        assert!(matches!(hub_similarity(&uniform_emb(2, 2), &g, 0), Err(AugmentError::IsolatedHub(0))));
    }

    #[test]
    fn uniform_low_scores_keep_best_edge() {
        // hub 0 joined to a 5-cycle, every score 0.1 * 0.5
        let g = plain(6, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (1, 2), (2, 3), (3, 4), (4, 5), (5, 1)]);
        let emb = uniform_emb(6, 10);
        let plan = denoise_hubs(&emb, &g, &partition(vec![0], vec![]), 0.1).unwrap();
        let removed: Vec<_> = plan.removals().map(|e| (e.u, e.v)).collect();
        assert_eq!(removed, vec![(0, 2), (0, 3), (0, 4), (0, 5)]);
        assert_eq!(plan.additions().count(), 0);
        assert!(denoise_hubs(&emb, &g, &partition(vec![0], vec![]), 1e-9).unwrap().is_empty());
    }

    #[test]
    fn denoising_never_isolates_a_leaf() {
        let g = plain(4, &[(0, 1), (0, 2), (0, 3)]);
        let plan = denoise_hubs(&uniform_emb(4, 10), &g, &partition(vec![0], vec![]), 0.1).unwrap();
        assert!(plan.is_empty());
    }

    #[test]
    fn planted_noisy_leaf_scores_lowest() {
        let g = plain(6, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5)]);
        let mut z_label = Array2::zeros((6, 3));
        for v in 0..6 {
            z_label[[v, 0]] = 5.0;
        }
        z_label[[4, 0]] = 0.0;
        z_label[[4, 2]] = 5.0;
        let z_link = Array2::from_elem((6, 2), 0.5);
        let s = hub_similarity(&EmbeddingPair { z_link, z_label }, &g, 0).unwrap();
        assert_eq!(s.ranked().last().unwrap().0, 4);
    }

    #[test]
    fn threshold_above_max_adds_nothing() {
        let row = SimilarityScores { owner: 0, candidates: vec![1, 2], scores: vec![0.9, 0.3] };
        assert!(discover_tails([row], DiscoveryStrategy::Threshold { p: 0.999 }).is_empty());
    }

    #[test]
    fn top_q_picks_best_with_id_ties() {
        let row = SimilarityScores {
            owner: 0,
            candidates: (1..=10).collect(),
            scores: vec![0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6, 0.5, 0.05],
        };
        let plan = discover_tails([row], DiscoveryStrategy::TopQ { q: 3 });
        let added: Vec<_> = plan.additions().map(|e| e.v).collect();
        assert_eq!(added, vec![2, 4, 6]);
        let tied = SimilarityScores { owner: 0, candidates: vec![5, 3, 4], scores: vec![0.5; 3] };
        let plan = discover_tails([tied], DiscoveryStrategy::TopQ { q: 2 });
        assert_eq!(plan.additions().map(|e| e.v).collect::<Vec<_>>(), vec![3, 4]);
    }

    #[test]
    fn mutual_selection_emitted_once() {
        let a = SimilarityScores { owner: 1, candidates: vec![2], scores: vec![0.9] };
        let b = SimilarityScores { owner: 2, candidates: vec![1], scores: vec![0.9] };
        let plan = discover_tails([a, b], DiscoveryStrategy::Threshold { p: 0.5 });
        assert_eq!(plan.len(), 1);
    }

    #[test]
    fn chunking_is_transparent() {
        let g = plain(7, &[(0, 1), (1, 2), (2, 3), (3, 4), (5, 6)]);
        let mut k = 0.0;
        let emb = EmbeddingPair {
            z_link: Array2::from_shape_simple_fn((7, 3), || {
                k += 0.37;
                (k * 3.1f64).sin()
            }),
            z_label: Array2::from_shape_fn((7, 4), |(i, j)| ((i * 4 + j) as f64).cos()),
        };
        let part = partition(vec![], vec![0, 4, 5, 6]);
        let one: Vec<_> = tail_similarity_chunked(&emb, &g, &part, 1).unwrap().collect();
        let all: Vec<_> = tail_similarity_chunked(&emb, &g, &part, 4).unwrap().collect();
        let big: Vec<_> = tail_similarity_chunked(&emb, &g, &part, 100).unwrap().collect();
        assert_eq!(one, all);
        assert_eq!(one, big);
        assert_eq!(one[0].candidates, vec![2, 3, 4, 5, 6]);
    }

    #[test]
    fn empty_partition_is_identity() {
        let g = plain(4, &[(0, 1), (1, 2), (2, 3)]);
        let (h, plan) = augment(&g, &uniform_emb(4, 3), &partition(vec![], vec![]), &AugmentConfig::default()).unwrap();
        assert!(plan.is_empty());
        assert_eq!(h, g);
    }

    #[test]
    fn additions_and_removals_are_disjoint() {
        let g = plain(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (2, 3)]);
        let cfg = AugmentConfig { strategy: DiscoveryStrategy::TopQ { q: 1 }, ..AugmentConfig::default() };
        let (h, plan) = augment(&g, &uniform_emb(4, 10), &partition(vec![0], vec![3]), &cfg).unwrap();
        assert_eq!(h.num_edges(), g.num_edges() - plan.removals().count() + plan.additions().count());
        let adds: Vec<_> = plan.additions().map(|e| (e.u, e.v)).collect();
        assert_eq!(adds, vec![(3, 1)]);
        assert!(plan.removals().all(|e| g.has_edge(e.u, e.v)));
    }

    #[test]
    fn protected_pairs_are_untouched() {
        let g = plain(6, &[(0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (1, 2), (2, 3), (3, 4), (4, 5), (5, 1)]);
        let scope = EditScope::protecting(6, [0, 3, 4]);
        let plan = denoise_hubs_scoped(&uniform_emb(6, 10), &g, &partition(vec![0], vec![]), 0.1, &scope).unwrap();
        let removed: Vec<_> = plan.removals().map(|e| (e.u, e.v)).collect();
        assert_eq!(removed, vec![(0, 2), (0, 5)]);

        let g = plain(5, &[(0, 1)]);
        let scope = EditScope::protecting(5, [2, 3]);
        let rows: Vec<_> =
            tail_similarity_scoped(&uniform_emb(5, 2), &g, &partition(vec![], vec![2]), 8, scope).unwrap().collect();
        assert_eq!(rows[0].candidates, vec![0, 1, 4]);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            AugmentConfig { hub_threshold: 0.0, ..AugmentConfig::default() },
            AugmentConfig { strategy: DiscoveryStrategy::Threshold { p: 1.0 }, ..AugmentConfig::default() },
            AugmentConfig { strategy: DiscoveryStrategy::TopQ { q: 0 }, ..AugmentConfig::default() },
            AugmentConfig { chunk_rows: 0, ..AugmentConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(AugmentError::InvalidConfig(_))));
        }
    }

    #[test]
    fn plan_jsonl_roundtrip() {
        let plan = EdgeEditPlan {
            edits: vec![
                EdgeEdit { op: EditOp::Remove, u: 0, v: 3, score: 0.05 },
                EdgeEdit { op: EditOp::Add, u: 3, v: 1, score: 0.8125 },
            ],
        };
        assert!(plan.to_jsonl().starts_with(r#"{"op":"remove","u":0,"v":3,"score":0.05}"#));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plan.jsonl");
        plan.write_jsonl(&p).unwrap();
        assert_eq!(EdgeEditPlan::read_jsonl(&p).unwrap(), plan);
    }

    #[test]
    fn random_drop_counts_and_determinism() {
        let edges: Vec<(usize, usize)> = (0..100).map(|i| (i, (i + 1) % 101)).collect();
        let g = plain(101, &edges);
        assert_eq!(random_drop_baseline(&g, 0.0, 1).unwrap(), g);
        let a = random_drop_baseline(&g, 0.5, 1).unwrap();
        assert_eq!(a.num_edges(), 50);
        assert_eq!(a, random_drop_baseline(&g, 0.5, 1).unwrap());
        assert!(random_drop_baseline(&g, 1.0, 1).is_err());
    }
}
