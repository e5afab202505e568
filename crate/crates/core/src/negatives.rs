//! Uniform sampling of unconnected node pairs.

use std::collections::HashSet;

use rand::Rng;

use crate::graph::Graph;

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("cannot draw {requested} negative pairs: only {available} unconnected pairs exist")]
pub struct SamplingError {
    pub requested: usize,
    pub available: usize,
}

/// Draws node pairs that are not in a forbidden (positive) set.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    num_nodes: usize,
    forbidden: HashSet<(usize, usize)>,
}

fn key(u: usize, v: usize) -> (usize, usize) {
    if u < v {
        (u, v)
    } else {
        (v, u)
    }
}

impl NegativeSampler {
    pub fn new(num_nodes: usize, forbidden: impl IntoIterator<Item = (usize, usize)>) -> Self {
        NegativeSampler { num_nodes, forbidden: forbidden.into_iter().map(|(u, v)| key(u, v)).collect() }
    }

    /// Forbids exactly the edges of `g`.
    pub fn for_graph(g: &Graph) -> Self {
        Self::new(g.num_nodes(), g.edges())
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn is_forbidden(&self, u: usize, v: usize) -> bool {
        u == v || self.forbidden.contains(&key(u, v))
    }

    fn available(&self) -> usize {
        let n = self.num_nodes;
        (n * n.saturating_sub(1) / 2).saturating_sub(self.forbidden.len())
    }

    /// `count` pairs drawn uniformly with replacement, each as `(min, max)`.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>, SamplingError> {
        if count > 0 && self.available() == 0 {
            return Err(SamplingError { requested: count, available: 0 });
        }
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let u = rng.gen_range(0..self.num_nodes);
            let v = rng.gen_range(0..self.num_nodes);
            if !self.is_forbidden(u, v) {
                out.push(key(u, v));
            }
        }
        Ok(out)
    }

    /// `count` distinct pairs, none of which is in `exclude`.
    pub fn sample_distinct(
        &self,
        count: usize,
        exclude: &HashSet<(usize, usize)>,
        rng: &mut impl Rng,
    ) -> Result<Vec<(usize, usize)>, SamplingError> {
        let available = self.available().saturating_sub(exclude.len());
        if count > available {
            return Err(SamplingError { requested: count, available });
        }
        let mut seen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let u = rng.gen_range(0..self.num_nodes);
            let v = rng.gen_range(0..self.num_nodes);
            let k = key(u, v);
            if !self.is_forbidden(u, v) && !exclude.contains(&k) && seen.insert(k) {
                out.push(k);
            }
        }
        Ok(out)
    }
}
