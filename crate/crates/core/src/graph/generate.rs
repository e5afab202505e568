use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, GraphError, Result};
use crate::rng::seeded;

/// Parameters of the synthetic preferential-attachment generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerlawSpec {
    pub n: usize,
    /// Edges added by every new node.
    pub m: usize,
    pub d_x: usize,
    pub num_classes: usize,
    pub seed: u64,
    /// Probability that an attachment is drawn from the new node's own class.
    #[serde(default = "default_homophily")]
    pub homophily: f64,
    /// Probability that an active feature falls in the class's block.
    #[serde(default = "default_signal")]
    pub feature_signal: f64,
    /// Active (nonzero) features per node.
    #[serde(default = "default_words")]
    pub words_per_node: usize,
}

fn default_homophily() -> f64 {
    0.8
}
fn default_signal() -> f64 {
    0.7
}
fn default_words() -> usize {
    8
}

impl PowerlawSpec {
    pub fn new(n: usize, m: usize, d_x: usize, num_classes: usize, seed: u64) -> Self {
        PowerlawSpec {
            n,
            m,
            d_x,
            num_classes,
            seed,
            homophily: default_homophily(),
            feature_signal: default_signal(),
            words_per_node: default_words(),
        }
    }

    /// Builds the graph. Nodes `0..=m` form a clique; each later node attaches
    /// to `m` distinct earlier nodes chosen with probability proportional to
    /// degree, so the edge count is `m(m+1)/2 + m(n-m-1)`.
    pub fn generate(&self) -> Result<Graph> {
        let PowerlawSpec { n, m, d_x, num_classes, .. } = *self;
        // The seed clique holds m + 1 nodes; at least one node must attach.
        if m < 1 || n <= m + 1 {
            return Err(GraphError::InvalidGenerator(format!("need n > m + 1 and m >= 1, got n={n}, m={m}")));
        }
        if d_x < 1 || num_classes < 1 {
            return Err(GraphError::InvalidGenerator("need d_x >= 1 and num_classes >= 1".into()));
        }
        let mut rng = seeded(self.seed, "powerlaw");
        let classes: Vec<usize> = (0..n).map(|_| rng.gen_range(0..num_classes)).collect();

        // Each node appears once per incident edge endpoint.
        let mut pool: Vec<usize> = Vec::new();
        let mut class_pool: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
        let mut edges = Vec::with_capacity(m * n);
        for u in 0..=m {
            for v in u + 1..=m {
                edges.push((u, v));
                for x in [u, v] {
                    pool.push(x);
                    class_pool[classes[x]].push(x);
                }
            }
        }
        for v in m + 1..n {
            let c = classes[v];
            let mut chosen: Vec<usize> = Vec::with_capacity(m);
            let mut attempts = 0usize;
            while chosen.len() < m {
                attempts += 1;
                let own = &class_pool[c];
                let from_own = attempts < 64 * m && !own.is_empty() && rng.gen::<f64>() < self.homophily;
                let src = if from_own { own } else { &pool };
                let t = src[rng.gen_range(0..src.len())];
                if !chosen.contains(&t) {
                    chosen.push(t);
                }
            }
            for t in chosen {
                edges.push((t, v));
                for x in [t, v] {
                    pool.push(x);
                    class_pool[classes[x]].push(x);
                }
            }
        }

        let block = (d_x / num_classes).max(1);
        let mut features = Array2::zeros((n, d_x));
        for v in 0..n {
            let start = (classes[v] * block).min(d_x - 1);
            let end = (start + block).min(d_x);
            for _ in 0..self.words_per_node {
                let j = if rng.gen::<f64>() < self.feature_signal {
                    rng.gen_range(start..end)
                } else {
                    rng.gen_range(0..d_x)
                };
                features[[v, j]] = 1.0;
            }
        }
        let labels = classes.into_iter().map(Some).collect();
        let (g, _) = Graph::from_edges(features, labels, Some(num_classes), edges)?;
        Ok(g)
    }
}

/// Seeded preferential-attachment graph with planted classes.
pub fn generate_powerlaw(n: usize, m: usize, d_x: usize, num_classes: usize, seed: u64) -> Result<Graph> {
    PowerlawSpec::new(n, m, d_x, num_classes, seed).generate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::degree_stats;

    #[test]
    fn exact_edge_count_and_skew() {
        let g = generate_powerlaw(100, 2, 16, 3, 7).unwrap();
        assert_eq!(g.num_nodes(), 100);
        assert_eq!(g.num_edges(), 2 * (100 - 3) + 3);
        let s = degree_stats(&g);
        assert!(s.max as f64 >= 3.0 * s.median, "max {} median {}", s.max, s.median);
        assert!(g.check_invariants());
    }

    #[test]
    fn rejects_n_not_above_m() {
        assert!(generate_powerlaw(6, 4, 4, 2, 0).is_ok());
        assert!(matches!(generate_powerlaw(5, 4, 4, 2, 0), Err(GraphError::InvalidGenerator(_))));
        assert!(matches!(generate_powerlaw(4, 4, 4, 2, 0), Err(GraphError::InvalidGenerator(_))));
        assert!(matches!(generate_powerlaw(3, 4, 4, 2, 0), Err(GraphError::InvalidGenerator(_))));
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_powerlaw(200, 3, 20, 4, 11).unwrap();
        let b = generate_powerlaw(200, 3, 20, 4, 11).unwrap();
        let c = generate_powerlaw(200, 3, 20, 4, 12).unwrap();
        assert_eq!(a.edges().collect::<Vec<_>>(), b.edges().collect::<Vec<_>>());
        assert_eq!(a, b);
        assert_ne!(a.edges().collect::<Vec<_>>(), c.edges().collect::<Vec<_>>());
    }
}
