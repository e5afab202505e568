//! Oracles and invariant checkers shared by the integration suites and the
//! acceptance target.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;
use saug_core::augment::{denoise_hubs, discover_tails, tail_similarity_chunked, DiscoveryStrategy, EditOp, Scorer};
use saug_core::engine::{
    classifier_loss, link_predictor_loss, Activation, Aggregator, EmbeddingPair, FeatureInput, GnnModel, GraphOps, Tape,
};
use saug_core::graph::Graph;
use saug_core::pagerank::NodePartition;
use saug_core::pseudo::{generate_pseudo_neighbors, GenConfig};
use saug_core::rng::seeded;

/// Erdős–Rényi graph with uniform features in [-1, 1) and cyclic labels.
pub fn random_graph(n: usize, d: usize, classes: usize, p: f64, seed: u64) -> Graph {
    let mut rng = seeded(seed, "fixture");
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let x = Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0));
    let labels = (0..n).map(|v| Some(v % classes)).collect();
    Graph::from_edges(x, labels, Some(classes), edges).unwrap().0
}

pub fn random_embeddings(n: usize, seed: u64) -> EmbeddingPair {
    let mut rng = seeded(seed, "embeddings");
    EmbeddingPair {
        z_link: Array2::from_shape_fn((n, 4), |_| rng.gen_range(-1.5..1.5)),
        z_label: Array2::from_shape_fn((n, 3), |_| rng.gen_range(-3.0..3.0)),
    }
}

/// PageRank from a dense LU solve of
/// `(I - ξ P - ξ/n 1 dᵀ) r = (1 - ξ)/n 1`, where `P[v][u] = 1/deg(u)` for
/// each edge and `d` marks dangling nodes.
pub fn pagerank_oracle(g: &Graph, damping: f64) -> Vec<f64> {
    let n = g.num_nodes();
    let mut m = DMatrix::<f64>::identity(n, n);
    for u in 0..n {
        let deg = g.degree(u);
        if deg == 0 {
            for v in 0..n {
                m[(v, u)] -= damping / n as f64;
            }
        } else {
            for &v in g.neighbors(u) {
                m[(v, u)] -= damping / deg as f64;
            }
        }
    }
    let rhs = DVector::from_element(n, (1.0 - damping) / n as f64);
    m.lu().solve(&rhs).expect("system is nonsingular for damping < 1").iter().copied().collect()
}

#[derive(Debug, Clone, Copy)]
pub enum Loss {
    Link,
    Label,
}

/// Largest relative error between backpropagated and central-difference
/// gradients over every parameter of a fresh two-layer model.
pub fn gradient_check(aggregator: Aggregator, loss: Loss, seed: u64) -> f64 {
    let g = random_graph(9, 4, 3, 0.35, seed);
    let ops = GraphOps::new(&g);
    let pos: Vec<_> = g.edges().take(6).collect();
    let neg: Vec<_> =
        (0..9).flat_map(|u| (u + 1..9).map(move |v| (u, v))).filter(|&(u, v)| !g.has_edge(u, v)).take(6).collect();
    let mask = [0, 2, 3, 5, 7];
    let eval = |model: &GnnModel| -> (f64, Vec<Array2<f64>>) {
        let tape = Tape::new();
        let params = model.bind(&tape);
        let x = FeatureInput::Dense(tape.constant(g.features().clone()));
        let z = model.forward(&params, Some(&ops), x, None).unwrap();
        let l = match loss {
            Loss::Link => link_predictor_loss(&z, &pos, &neg, &params, 1e-4),
            Loss::Label => classifier_loss(&z, g.labels(), &mask, &params, 1e-4),
        }
        .unwrap();
        let value = l.value()[[0, 0]];
        let grads = tape.backward(&l).unwrap();
        let out = params
            .iter()
            .map(|p| grads.get(p).cloned().unwrap_or_else(|| Array2::zeros(p.value().raw_dim())))
            .collect();
        (value, out)
    };

    let mut model = GnnModel::stack(aggregator, &[4, 5, 3], Activation::Relu, 0.0, &mut seeded(seed, "init")).unwrap();
    let (_, analytic) = eval(&model);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..model.params().len() {
        for idx in 0..model.params()[k].len() {
            let orig = model.params()[k].as_slice().unwrap()[idx];
            model.params_mut()[k].as_slice_mut().unwrap()[idx] = orig + h;
            let up = eval(&model).0;
            model.params_mut()[k].as_slice_mut().unwrap()[idx] = orig - h;
            let down = eval(&model).0;
            model.params_mut()[k].as_slice_mut().unwrap()[idx] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[k].as_slice().unwrap()[idx];
            // Difference noise is near 1e-10, so tiny gradients are compared
            // against a 1e-6 floor.
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

fn key(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

/// Checks every structural rule of hub denoising and tail discovery on one
/// graph. Returns the first violation.
pub fn check_augmentation(
    g: &Graph,
    emb: &EmbeddingPair,
    part: &NodePartition,
    l: f64,
    strategy: DiscoveryStrategy,
) -> Result<(), String> {
    let removals = denoise_hubs(emb, g, part, l).map_err(|e| e.to_string())?;
    let dense_rows: Vec<_> = tail_similarity_chunked(emb, g, part, usize::MAX).map_err(|e| e.to_string())?.collect();
    let additions = discover_tails(dense_rows.clone(), strategy);
    let plan = removals.clone().merged(additions.clone());
    let g_prime = g.apply_delta(&plan.to_delta()).map_err(|e| e.to_string())?;

    let n_rem = plan.removals().count();
    let n_add = plan.additions().count();
    if g_prime.num_edges() != g.num_edges() - n_rem + n_add {
        return Err(format!("edge count {} != {} - {n_rem} + {n_add}", g_prime.num_edges(), g.num_edges()));
    }
    let removed: HashSet<_> = plan.removals().map(|e| key(e.u, e.v)).collect();
    let added: HashSet<_> = plan.additions().map(|e| key(e.u, e.v)).collect();
    if removed.len() != n_rem || added.len() != n_add {
        return Err("duplicate edits in plan".into());
    }
    for &(u, v) in &removed {
        if !g.has_edge(u, v) {
            return Err(format!("removed non-edge ({u},{v})"));
        }
        if !part.is_hub(u) && !part.is_hub(v) {
            return Err(format!("removed ({u},{v}) touches no hub"));
        }
    }
    for &(u, v) in &added {
        if u == v || g.has_edge(u, v) {
            return Err(format!("added self-loop or existing edge ({u},{v})"));
        }
        if !part.is_tail(u) && !part.is_tail(v) {
            return Err(format!("added ({u},{v}) touches no tail"));
        }
    }
    let denoised = g.apply_delta(&removals.to_delta()).map_err(|e| e.to_string())?;
    for v in 0..g.num_nodes() {
        if g.degree(v) > 0 && denoised.degree(v) == 0 {
            return Err(format!("denoising isolated node {v}"));
        }
    }

    // Chunking must not change a single score, and scores equal the
    // pairwise scorer.
    let scorer = Scorer::new(emb);
    for chunk in [1, 3] {
        let rows: Vec<_> = tail_similarity_chunked(emb, g, part, chunk).map_err(|e| e.to_string())?.collect();
        if rows.len() != dense_rows.len() {
            return Err("chunked stream lost rows".into());
        }
        for (a, b) in rows.iter().zip(&dense_rows) {
            if a.owner != b.owner || a.candidates != b.candidates {
                return Err(format!("chunk {chunk}: candidate sets differ for {}", a.owner));
            }
            for ((&j, &x), &y) in a.candidates.iter().zip(&a.scores).zip(&b.scores) {
                if (x - y).abs() > 1e-12 || (x - scorer.score(a.owner, j)).abs() > 1e-12 {
                    return Err(format!("chunk {chunk}: score mismatch at ({}, {j})", a.owner));
                }
            }
        }
    }

    if let DiscoveryStrategy::TopQ { q } = strategy {
        let mut incident: HashMap<usize, BTreeSet<usize>> = HashMap::new();
        for &(u, v) in &added {
            incident.entry(u).or_default().insert(v);
            incident.entry(v).or_default().insert(u);
        }
        let mut proposals = BTreeSet::new();
        for row in &dense_rows {
            let picks: Vec<usize> = row.ranked().into_iter().take(q).map(|(j, _)| j).collect();
            if picks.len() != q.min(row.candidates.len()) {
                return Err(format!(
                    "tail {} picked {} of {} candidates",
                    row.owner,
                    picks.len(),
                    row.candidates.len()
                ));
            }
            let have = incident.get(&row.owner).cloned().unwrap_or_default();
            if !picks.iter().all(|j| have.contains(j)) {
                return Err(format!("tail {} is missing one of its top-{q} edges", row.owner));
            }
            proposals.extend(picks.iter().map(|&j| key(row.owner, j)));
        }
        if proposals.len() != n_add {
            return Err(format!("{n_add} additions for {} distinct proposals", proposals.len()));
        }
    }
    if plan.edits.iter().any(|e| (e.op == EditOp::Remove) != removed.contains(&key(e.u, e.v))) {
        return Err("edit op does not match its edge".into());
    }
    Ok(())
}

/// Pseudo nodes hang off resampled tails by one edge, carry the pseudo
/// flag, and stripping them restores `g_prime`.
pub fn check_pseudo(g_prime: &Graph, tails: &[usize], cfg: &GenConfig) -> Result<(), String> {
    let (tilde, manifest, _, _) = generate_pseudo_neighbors(g_prime, tails, cfg).map_err(|e| e.to_string())?;
    let n = g_prime.num_nodes();
    let tail_set: HashSet<usize> = tails.iter().copied().collect();
    if tilde.num_nodes() != n + manifest.len() {
        return Err("node count does not match the manifest".into());
    }
    for v in 0..n {
        if !tilde.is_real(v) {
            return Err(format!("real node {v} flagged pseudo"));
        }
    }
    for e in &manifest {
        if tilde.is_real(e.pseudo_id) {
            return Err(format!("pseudo node {} flagged real", e.pseudo_id));
        }
        if tilde.neighbors(e.pseudo_id) != [e.tail_id] {
            return Err(format!("pseudo node {} is not a leaf on its tail", e.pseudo_id));
        }
        if !tail_set.contains(&e.tail_id) {
            return Err(format!("pseudo node attached to non-tail {}", e.tail_id));
        }
        if !g_prime.has_edge(e.tail_id, e.source_neighbor_id) {
            return Err(format!("source {} is not a neighbor of {}", e.source_neighbor_id, e.tail_id));
        }
    }
    let stripped = tilde.strip_pseudo().map_err(|e| e.to_string())?;
    if &stripped != g_prime {
        return Err("stripping pseudo nodes does not recover the input".into());
    }
    Ok(())
}
