//! PageRank over undirected graphs and the hub/tail partition built on it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::rng::seeded;

pub const DEFAULT_DAMPING: f64 = 0.85;
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 200;
pub const DEFAULT_HUB_FACTOR: f64 = 2.0;
pub const DEFAULT_TAIL_PERCENT: f64 = 30.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SamplerError {
    #[error("pagerank of an empty graph")]
    EmptyGraph,
    #[error("damping must lie in (0, 1), got {0}")]
    InvalidDamping(f64),
    #[error("hub factor K must be >= 1, got {0}")]
    InvalidHubFactor(f64),
    #[error("tail percentage M must lie in (0, 100], got {0}")]
    InvalidTailPercent(f64),
    #[error("every node is a hub at K = {0}")]
    AllHubs(f64),
    #[error("M = {percent}% of {remaining} non-hub nodes selects no tails")]
    NoTails { percent: f64, remaining: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageRankVector {
    pub values: Vec<f64>,
    pub damping: f64,
    pub iterations_used: usize,
    /// L1 change of the final iteration.
    pub residual: f64,
    pub converged: bool,
}

impl PageRankVector {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Power iteration with uniform teleport; dangling nodes spread their mass
/// uniformly. Each undirected edge acts as two directed edges.
///
/// Running out of iterations is not an error: the result carries
/// `converged = false` and the last residual.
pub fn pagerank(g: &Graph, damping: f64, tol: f64, max_iter: usize) -> Result<PageRankVector, SamplerError> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(SamplerError::EmptyGraph);
    }
    if !(damping > 0.0 && damping < 1.0) {
        return Err(SamplerError::InvalidDamping(damping));
    }
    let inv_n = 1.0 / n as f64;
    let teleport = (1.0 - damping) * inv_n;
    let (indptr, indices) = g.csr();
    let degree: Vec<f64> = (0..n).map(|v| (indptr[v + 1] - indptr[v]) as f64).collect();

    let mut rank = vec![inv_n; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let dangling: f64 = (0..n).filter(|&v| degree[v] == 0.0).map(|v| rank[v]).sum();
        let base = teleport + damping * dangling * inv_n;
        // Pull form: node v gathers from its neighbors in ascending id order,
        // so the reduction order is fixed.
        for v in 0..n {
            let mut acc = 0.0;
            for &u in &indices[indptr[v]..indptr[v + 1]] {
                acc += rank[u] / degree[u];
            }
            next[v] = base + damping * acc;
        }
        residual = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if residual < tol {
            break;
        }
    }
    let converged = residual < tol;
    if !converged {
        log::warn!("pagerank stopped after {iterations} iterations with residual {residual:e}");
    }
    // Renormalize away the rounding drift of the iteration.
    let total: f64 = rank.iter().sum();
    rank.iter_mut().for_each(|r| *r /= total);
    Ok(PageRankVector { values: rank, damping, iterations_used: iterations, residual, converged })
}

/// How tails are drawn from the non-hub nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailPolicy {
    /// The lowest-PageRank nodes, ties by ascending id.
    #[default]
    Lowest,
    /// Weighted sampling without replacement, weight `1 / PR`.
    InversePagerank { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodePartition {
    pub hubs: Vec<usize>,
    pub tails: Vec<usize>,
    pub hub_factor: f64,
    /// `M / 100`.
    pub tail_fraction: f64,
    pub pagerank: PageRankVector,
}

impl NodePartition {
    pub fn is_hub(&self, v: usize) -> bool {
        self.hubs.binary_search(&v).is_ok()
    }

    pub fn is_tail(&self, v: usize) -> bool {
        self.tails.binary_search(&v).is_ok()
    }
}

/// Hubs are nodes with `PR >= K * mean(PR)`; tails are `floor(M% * (|V| - |hubs|))`
/// non-hubs picked by `policy`.
pub fn partition_nodes(
    pr: &PageRankVector,
    hub_factor: f64,
    tail_percent: f64,
    policy: TailPolicy,
) -> Result<NodePartition, SamplerError> {
    if !(hub_factor >= 1.0) {
        return Err(SamplerError::InvalidHubFactor(hub_factor));
    }
    if !(tail_percent > 0.0 && tail_percent <= 100.0) {
        return Err(SamplerError::InvalidTailPercent(tail_percent));
    }
    let n = pr.values.len();
    let cut = hub_factor * pr.mean();
    let hubs: Vec<usize> = (0..n).filter(|&v| pr.values[v] >= cut).collect();
    if hubs.len() == n {
        return Err(SamplerError::AllHubs(hub_factor));
    }
    let mut rest: Vec<usize> = (0..n).filter(|&v| pr.values[v] < cut).collect();
    let remaining = rest.len();
    let count = (tail_percent / 100.0 * remaining as f64).floor() as usize;
    if count == 0 {
        return Err(SamplerError::NoTails { percent: tail_percent, remaining });
    }
    let mut tails: Vec<usize> = match policy {
        TailPolicy::Lowest => {
            rest.sort_by(|&a, &b| pr.values[a].total_cmp(&pr.values[b]).then(a.cmp(&b)));
            rest.truncate(count);
            rest
        }
        TailPolicy::InversePagerank { seed } => {
            // Efraimidis–Spirakis keys u^(1/w) with w = 1/PR, i.e. u^PR.
            let mut rng = seeded(seed, "tail-sampling");
            let mut keyed: Vec<(f64, usize)> = rest.iter().map(|&v| (rng.gen::<f64>().powf(pr.values[v]), v)).collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            keyed.into_iter().take(count).map(|(_, v)| v).collect()
        }
    };
    tails.sort_unstable();
    Ok(NodePartition { hubs, tails, hub_factor, tail_fraction: tail_percent / 100.0, pagerank: pr.clone() })
}

/// Options shared by every PageRank-based sampling call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub hub_factor: f64,
    pub tail_percent: f64,
    pub policy: TailPolicy,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            damping: DEFAULT_DAMPING,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            hub_factor: DEFAULT_HUB_FACTOR,
            tail_percent: DEFAULT_TAIL_PERCENT,
            policy: TailPolicy::Lowest,
        }
    }
}

/// PageRank followed by [`partition_nodes`].
pub fn sample_nodes(g: &Graph, opts: &SamplerOptions) -> Result<NodePartition, SamplerError> {
    let pr = pagerank(g, opts.damping, opts.tol, opts.max_iter)?;
    partition_nodes(&pr, opts.hub_factor, opts.tail_percent, opts.policy)
}

/// Recomputes the partition on an edited graph with the same K and M.
pub fn resample_tails(g_prime: &Graph, opts: &SamplerOptions) -> Result<NodePartition, SamplerError> {
    sample_nodes(g_prime, opts)
}
