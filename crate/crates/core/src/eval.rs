//! Experiment splits and metrics.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::negatives::{NegativeSampler, SamplingError};
use crate::pagerank::NodePartition;
use crate::rng::seeded;

pub const TAIL_LABELS_PER_CLASS: usize = 10;
pub const OVERALL_LABELS_PER_CLASS: usize = 20;
pub const OVERALL_VAL: usize = 500;
pub const OVERALL_TEST: usize = 1000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("the partition has no tail nodes")]
    NoTails,
    #[error("link split needs at least 10 edges, graph has {0}")]
    TooFewEdges(usize),
    #[error("empty input")]
    Empty,
    #[error("{pred} predictions for {truth} labels")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("label {label} outside 0..{num_classes}")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("AUC needs both positive and negative items")]
    SingleClass,
    #[error("split has no labeled {0} nodes")]
    EmptySet(&'static str),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    TailNc,
    OverallNc,
    LinkPred,
}

/// Node split for the classification tasks. `train` holds the labeled
/// training nodes; `unlabeled` the remaining training nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSplit {
    pub task: Task,
    pub seed: u64,
    pub train: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl NodeSplit {
    /// Labels visible to training: those of `train`, everything else `None`.
    pub fn training_labels(&self, labels: &[Option<usize>]) -> Vec<Option<usize>> {
        let mut out = vec![None; labels.len()];
        for &v in &self.train {
            out[v] = labels[v];
        }
        out
    }

    /// Validation and test nodes.
    pub fn held_out(&self) -> impl Iterator<Item = usize> + '_ {
        self.val.iter().chain(&self.test).copied()
    }

    /// Sets are pairwise disjoint and cover `0..num_nodes`.
    pub fn is_partition_of(&self, num_nodes: usize) -> bool {
        let mut seen = vec![false; num_nodes];
        for &v in self.train.iter().chain(&self.unlabeled).chain(&self.val).chain(&self.test) {
            if v >= num_nodes || seen[v] {
                return false;
            }
            seen[v] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Labeled nodes of `pool` grouped by class, each group shuffled.
fn shuffled_by_class(g: &Graph, pool: &[usize], rng: &mut impl rand::Rng) -> BTreeMap<usize, Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &v in pool {
        if let Some(c) = g.label(v) {
            by_class.entry(c).or_default().push(v);
        }
    }
    for nodes in by_class.values_mut() {
        nodes.shuffle(rng);
    }
    by_class
}

/// Picks `per_class` nodes of each class from `pool`, warning when a class
/// has fewer. Returns the picks (sorted) and the rest of the pool (sorted).
fn pick_per_class(g: &Graph, pool: &[usize], per_class: usize, rng: &mut impl rand::Rng) -> (Vec<usize>, Vec<usize>) {
    let mut picked = Vec::new();
    for (c, nodes) in shuffled_by_class(g, pool, rng) {
        if nodes.len() < per_class {
            log::warn!("class {c} has only {} training candidates, using all of them", nodes.len());
        }
        picked.extend(nodes.into_iter().take(per_class));
    }
    picked.sort_unstable();
    let chosen: HashSet<usize> = picked.iter().copied().collect();
    let rest = pool.iter().copied().filter(|v| !chosen.contains(v)).collect();
    (picked, rest)
}

/// Tails become validation and test nodes (2:1); `labels_per_class`
/// labeled nodes per class are kept among the other nodes.
pub fn make_tail_split(g: &Graph, part: &NodePartition, labels_per_class: usize, seed: u64) -> Result<NodeSplit> {
    if part.tails.is_empty() {
        return Err(EvalError::NoTails);
    }
    let mut rng = seeded(seed, "tail-split");
    let (mut labeled_tails, mut unlabeled): (Vec<usize>, Vec<usize>) =
        part.tails.iter().partition(|&&v| g.label(v).is_some());
    labeled_tails.shuffle(&mut rng);
    let n_val = labeled_tails.len() * 2 / 3;
    let mut val = labeled_tails[..n_val].to_vec();
    let mut test = labeled_tails[n_val..].to_vec();
    val.sort_unstable();
    test.sort_unstable();

    let pool: Vec<usize> = (0..g.num_nodes()).filter(|&v| !part.is_tail(v)).collect();
    let (train, rest) = pick_per_class(g, &pool, labels_per_class, &mut rng);
    unlabeled.extend(rest);
    unlabeled.sort_unstable();
    Ok(NodeSplit { task: Task::TailNc, seed, train, unlabeled, val, test })
}

/// `labels_per_class` training labels per class, then `num_val` and
/// `num_test` labeled nodes drawn from the rest. Small graphs get a third of
/// the remaining labeled nodes for validation and the rest (up to
/// `num_test`) for testing.
pub fn make_overall_split(
    g: &Graph,
    labels_per_class: usize,
    num_val: usize,
    num_test: usize,
    seed: u64,
) -> Result<NodeSplit> {
    let mut rng = seeded(seed, "overall-split");
    let all: Vec<usize> = (0..g.num_nodes()).collect();
    let (train, rest) = pick_per_class(g, &all, labels_per_class, &mut rng);
    let (mut labeled, mut unlabeled): (Vec<usize>, Vec<usize>) = rest.iter().partition(|&&v| g.label(v).is_some());
    labeled.shuffle(&mut rng);
    let n_val = num_val.min(labeled.len() / 3);
    let n_test = num_test.min(labeled.len() - n_val);
    let mut val = labeled[..n_val].to_vec();
    let mut test = labeled[n_val..n_val + n_test].to_vec();
    unlabeled.extend(&labeled[n_val + n_test..]);
    val.sort_unstable();
    test.sort_unstable();
    unlabeled.sort_unstable();
    if train.is_empty() {
        return Err(EvalError::EmptySet("training"));
    }
    if test.is_empty() {
        return Err(EvalError::EmptySet("test"));
    }
    Ok(NodeSplit { task: Task::OverallNc, seed, train, unlabeled, val, test })
}

/// Positive edges split 7:1:2 with fixed, equally sized negatives for
/// validation and test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSplit {
    pub seed: u64,
    pub train_pos: Vec<(usize, usize)>,
    pub val_pos: Vec<(usize, usize)>,
    pub val_neg: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
}

impl LinkSplit {
    /// The message-passing graph: all nodes, training edges only.
    pub fn train_graph(&self, g: &Graph) -> Graph {
        g.with_edge_subset(&self.train_pos).expect("training edges come from the graph")
    }

    /// Per-epoch negative sampler that avoids every positive of `g`.
    pub fn train_sampler(&self, g: &Graph) -> NegativeSampler {
        NegativeSampler::for_graph(g)
    }
}

pub fn make_link_split(g: &Graph, seed: u64) -> Result<LinkSplit> {
    let m = g.num_edges();
    if m < 10 {
        return Err(EvalError::TooFewEdges(m));
    }
    let mut rng = seeded(seed, "link-split");
    let mut edges: Vec<(usize, usize)> = g.edges().collect();
    edges.shuffle(&mut rng);
    let n_train = m * 7 / 10;
    let n_val = m / 10;
    let mut train_pos = edges[..n_train].to_vec();
    let mut val_pos = edges[n_train..n_train + n_val].to_vec();
    let mut test_pos = edges[n_train + n_val..].to_vec();
    train_pos.sort_unstable();
    val_pos.sort_unstable();
    test_pos.sort_unstable();
    let sampler = NegativeSampler::for_graph(g);
    let mut neg_rng = seeded(seed, "link-split-negatives");
    let val_neg = sampler.sample_distinct(val_pos.len(), &HashSet::new(), &mut neg_rng)?;
    let taken: HashSet<(usize, usize)> = val_neg.iter().copied().collect();
    let test_neg = sampler.sample_distinct(test_pos.len(), &taken, &mut neg_rng)?;
    Ok(LinkSplit { seed, train_pos, val_pos, val_neg, test_pos, test_neg })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub per_class: Vec<f64>,
}

pub fn f1_scores(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<F1Scores> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        for label in [p, t] {
            if label >= num_classes {
                return Err(EvalError::LabelOutOfRange { label, num_classes });
            }
        }
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let f1 = |tp: usize, fp: usize, fn_: usize| {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    };
    let per_class: Vec<f64> = (0..num_classes).map(|c| f1(tp[c], fp[c], fn_[c])).collect();
    let macro_f1 = per_class.iter().sum::<f64>() / num_classes as f64;
    let micro_f1 = f1(tp.iter().sum(), fp.iter().sum(), fn_.iter().sum());
    Ok(F1Scores { macro_f1, micro_f1, per_class })
}

/// Mann-Whitney AUC with average ranks for ties.
pub fn auc_score(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { pred: scores.len(), truth: labels.len() });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let rank = (i + j + 2) as f64 / 2.0;
        pos_rank_sum += rank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub auc: Option<f64>,
    pub per_class_f1: Vec<f64>,
    pub seed: u64,
    pub wall_clock_secs: f64,
}

impl MetricsReport {
    /// Copy with the wall-clock field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> MetricsReport {
        MetricsReport { wall_clock_secs: 0.0, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(MeanStd { mean, std })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.1}±{:.1}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: Vec<MetricsReport>,
    pub macro_f1: MeanStd,
    pub micro_f1: MeanStd,
    pub auc: Option<MeanStd>,
}

impl AggregateReport {
    pub fn from_runs(runs: Vec<MetricsReport>) -> Result<AggregateReport> {
        let col = |f: fn(&MetricsReport) -> f64| runs.iter().map(f).collect::<Vec<_>>();
        let macro_f1 = MeanStd::of(&col(|r| r.macro_f1)).ok_or(EvalError::Empty)?;
        let micro_f1 = MeanStd::of(&col(|r| r.micro_f1)).ok_or(EvalError::Empty)?;
        let aucs: Vec<f64> = runs.iter().filter_map(|r| r.auc).collect();
        let auc = if aucs.len() == runs.len() { MeanStd::of(&aucs) } else { None };
        Ok(AggregateReport { runs, macro_f1, micro_f1, auc })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::plain;
    use crate::pagerank::PageRankVector;
    use ndarray::Array2;

    fn labeled_ring(n: usize, classes: usize) -> Graph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let labels = (0..n).map(|v| Some(v % classes)).collect();
        Graph::from_edges(Array2::eye(n), labels, Some(classes), edges).unwrap().0
    }

    fn with_tails(tails: Vec<usize>) -> NodePartition {
        NodePartition {
            hubs: vec![],
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

    #[test]
    fn tail_split_sizes() {
        let g = labeled_ring(200, 7);
        let part = with_tails((0..30).collect());
        let a = make_tail_split(&g, &part, 10, 1).unwrap();
        assert_eq!((a.val.len(), a.test.len()), (20, 10));
        assert_eq!(a.train.len(), 70);
        assert!(a.is_partition_of(200));
        assert!(a.train.iter().all(|v| !part.is_tail(*v)));
        let b = make_tail_split(&g, &part, 10, 2).unwrap();
        assert_ne!(a.val, b.val);
        assert_eq!((b.val.len(), b.test.len(), b.train.len()), (20, 10, 70));
    }

    #[test]
    fn small_class_uses_everything() {
        let g = labeled_ring(12, 3);
        let part = with_tails(vec![0, 1, 2]);
        let s = make_tail_split(&g, &part, 10, 0).unwrap();
        assert_eq!(s.train.len(), 9);
        assert!(matches!(make_tail_split(&g, &with_tails(vec![]), 10, 0), Err(EvalError::NoTails)));
    }

    #[test]
    fn overall_split_is_disjoint() {
        let g = labeled_ring(300, 5);
        let s = make_overall_split(&g, 20, 500, 1000, 4).unwrap();
        assert_eq!(s.train.len(), 100);
        assert_eq!(s.val.len(), 66);
        assert_eq!(s.test.len(), 134);
        assert!(s.is_partition_of(300));
        let visible = s.training_labels(g.labels());
        assert!(s.held_out().all(|v| visible[v].is_none()));
    }

    #[test]
    fn link_split_ratios_and_negatives() {
        let edges: Vec<_> = (0..100).map(|i| (i, (i + 1) % 100)).collect();
        let g = plain(100, &edges);
        let s = make_link_split(&g, 3).unwrap();
        assert_eq!((s.train_pos.len(), s.val_pos.len(), s.test_pos.len()), (70, 10, 20));
        assert_eq!((s.val_neg.len(), s.test_neg.len()), (10, 20));
        assert!(s.val_neg.iter().chain(&s.test_neg).all(|&(u, v)| !g.has_edge(u, v)));
        assert_eq!(s, make_link_split(&g, 3).unwrap());
        assert_eq!(s.train_graph(&g).num_edges(), 70);
        assert!(matches!(make_link_split(&plain(5, &[(0, 1)]), 0), Err(EvalError::TooFewEdges(1))));
    }

    #[test]
    fn f1_hand_values() {
        let s = f1_scores(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((s.per_class[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.per_class[1] - 0.8).abs() < 1e-15);
        assert!((s.macro_f1 - 11.0 / 15.0).abs() < 1e-15);
        assert!((s.micro_f1 - 0.75).abs() < 1e-15);
        let one = f1_scores(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert!((one.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        let perfect = f1_scores(&[2, 0, 1], &[2, 0, 1], 3).unwrap();
        assert_eq!((perfect.macro_f1, perfect.micro_f1), (1.0, 1.0));
        assert_eq!(f1_scores(&[], &[], 2), Err(EvalError::Empty));
    }

    #[test]
    fn auc_hand_values() {
        assert_eq!(auc_score(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auc_score(&[0.5; 6], &[true, false, true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auc_score(&[0.1, 0.2, 0.9], &[false, false, true]).unwrap(), 1.0);
        assert_eq!(auc_score(&[0.1, 0.2], &[true, true]), Err(EvalError::SingleClass));
    }

    #[test]
    fn aggregation() {
        let run = |m: f64, seed| MetricsReport {
            macro_f1: m,
            micro_f1: m,
            auc: None,
            per_class_f1: vec![],
            seed,
            wall_clock_secs: 1.0,
        };
        let one = AggregateReport::from_runs(vec![run(0.8, 0)]).unwrap();
        assert_eq!(one.micro_f1.std, 0.0);
        let same = AggregateReport::from_runs((0..5).map(|s| run(0.7, s)).collect()).unwrap();
        assert_eq!(same.micro_f1.std, 0.0);
        let two = MeanStd::of(&[1.0, 3.0]).unwrap();
        assert_eq!((two.mean, two.std), (2.0, 2f64.sqrt()));
    }
}
