//! Pseudo-neighbor generation for tail nodes.
//!
//! A dense generator maps a fixed noise vector per tail to a feature row. A
//! two-layer GCN discriminator, run on the graph with the pseudo nodes
//! attached, predicts class logits plus one real/pseudo logit.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::rc::Rc;

use ndarray::{Array2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::sparse::CsrMatrix;
use crate::engine::{
    l2_penalty, Activation, Adam, Aggregator, EngineError, FeatureInput, GnnModel, GraphOps, SparseConst, Tape, Tensor,
};
use crate::graph::{Graph, GraphDelta, GraphError, NewNode};
use crate::rng::{seeded, StreamRng};

#[derive(Debug, thiserror::Error)]
pub enum PseudoError {
    #[error("no tail has a neighbor to imitate")]
    EmptyTargets,
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("non-finite {which} loss at epoch {epoch}")]
    NonFiniteLoss { which: &'static str, epoch: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, PseudoError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub noise_dim: usize,
    pub gen_hidden: usize,
    /// Dense layers in the generator.
    pub gen_layers: usize,
    pub disc_hidden: usize,
    /// Generator weight penalty.
    pub alpha: f64,
    /// Discriminator weight penalty.
    pub beta: f64,
    /// Discriminator updates per generator update.
    pub d_steps_per_g: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Weight of the adversarial term in the generator loss.
    pub adversarial_weight: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            noise_dim: 32,
            gen_hidden: 64,
            gen_layers: 2,
            disc_hidden: 32,
            alpha: 1e-4,
            beta: 1e-4,
            d_steps_per_g: 2,
            epochs: 300,
            lr: 0.01,
            adversarial_weight: 1.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("noise_dim", self.noise_dim),
            ("gen_hidden", self.gen_hidden),
            ("gen_layers", self.gen_layers),
            ("disc_hidden", self.disc_hidden),
            ("d_steps_per_g", self.d_steps_per_g),
            ("epochs", self.epochs),
        ];
        for (name, c) in counts {
            if c == 0 {
                return Err(PseudoError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        for (name, x) in [("alpha", self.alpha), ("beta", self.beta), ("adversarial_weight", self.adversarial_weight)] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(PseudoError::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(PseudoError::InvalidConfig("lr must be > 0".into()));
        }
        Ok(())
    }

    fn generator_dims(&self, d_x: usize) -> Vec<usize> {
        let mut dims = vec![self.noise_dim];
        dims.extend(std::iter::repeat_n(self.gen_hidden, self.gen_layers - 1));
        dims.push(d_x);
        dims
    }
}

/// Each tail paired with its most feature-similar neighbor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarTargets {
    /// `(tail, neighbor)`.
    pub pairs: Vec<(usize, usize)>,
    pub target_features: Array2<f64>,
    pub target_labels: Vec<Option<usize>>,
    /// Tails without neighbors.
    pub skipped: Vec<usize>,
}

impl SimilarTargets {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

pub fn select_similar_neighbors(g_prime: &Graph, tails: &[usize]) -> SimilarTargets {
    let x = g_prime.features();
    let mut pairs = Vec::with_capacity(tails.len());
    let mut skipped = Vec::new();
    for &t in tails {
        let mut best: Option<(usize, f64)> = None;
        for &j in g_prime.neighbors(t) {
            let c = cosine(x.row(t), x.row(j));
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((j, c));
            }
        }
        match best {
            Some((j, _)) => pairs.push((t, j)),
            None => {
                log::warn!("tail {t} has no neighbors; it gets no pseudo node");
                skipped.push(t);
            }
        }
    }
    let rows: Vec<usize> = pairs.iter().map(|&(_, j)| j).collect();
    SimilarTargets {
        target_features: x.select(Axis(0), &rows),
        target_labels: rows.iter().map(|&j| g_prime.label(j)).collect(),
        pairs,
        skipped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenEpoch {
    pub epoch: usize,
    pub feature_loss: f64,
    pub generator_loss: f64,
    pub discriminator_loss: f64,
}

/// Trained generator and discriminator with the per-tail noise they saw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    pub generator: GnnModel,
    pub discriminator: GnnModel,
    /// One row per target pair.
    pub noise: Array2<f64>,
    pub feature_min: Vec<f64>,
    pub feature_max: Vec<f64>,
}

impl GenerativeModel {
    /// Raw generator output for `noise`, one row per noise row.
    pub fn generate(&self, noise: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.generator.infer(None, noise)?)
    }

    /// Generator output clamped to the real feature range.
    pub fn generate_clamped(&self, noise: &Array2<f64>) -> Result<Array2<f64>> {
        let mut x = self.generate(noise)?;
        for mut row in x.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = v.clamp(self.feature_min[k], self.feature_max[k]);
            }
        }
        Ok(x)
    }
}

pub fn sample_noise(rows: usize, dim: usize, rng: &mut StreamRng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, dim), || StandardNormal.sample(rng))
}

/// Structure of the graph with one pseudo node per target pair appended.
fn pseudo_structure(g_prime: &Graph, targets: &SimilarTargets) -> Result<Graph> {
    let d_x = g_prime.feature_dim();
    let n = g_prime.num_nodes();
    let delta = GraphDelta {
        added_nodes: targets
            .target_labels
            .iter()
            .map(|&label| NewNode { features: vec![0.0; d_x], label, real: false })
            .collect(),
        added_edges: targets.pairs.iter().enumerate().map(|(k, &(t, _))| (n + k, t)).collect(),
        ..GraphDelta::default()
    };
    Ok(g_prime.apply_delta(&delta)?)
}

struct DiscSetup {
    ops: GraphOps,
    real_x: SparseConst,
    n_real: usize,
    n_pseudo: usize,
    num_classes: usize,
    class_targets: Rc<Vec<(usize, usize)>>,
    realness: Rc<Vec<f64>>,
    realness_weights: Rc<Vec<f64>>,
}

impl DiscSetup {
    fn new(g_prime: &Graph, tilde: &Graph) -> Self {
        let n_real = g_prime.num_nodes();
        let n_pseudo = tilde.num_nodes() - n_real;
        let class_targets = (0..tilde.num_nodes()).filter_map(|v| tilde.label(v).map(|c| (v, c))).collect();
        let realness = (0..tilde.num_nodes()).map(|v| if v < n_real { 1.0 } else { 0.0 }).collect();
        // Real and pseudo nodes carry equal total weight.
        let realness_weights = (0..tilde.num_nodes())
            .map(|v| if v < n_real { 0.5 / n_real as f64 } else { 0.5 / n_pseudo as f64 })
            .collect();
        DiscSetup {
            ops: GraphOps::new(tilde),
            real_x: SparseConst::new(CsrMatrix::from_dense(g_prime.features())),
            n_real,
            n_pseudo,
            num_classes: g_prime.num_classes(),
            class_targets: Rc::new(class_targets),
            realness: Rc::new(realness),
            realness_weights: Rc::new(realness_weights),
        }
    }

    fn forward<'t>(&self, d: &GnnModel, params: &[Tensor<'t>], x_gen: Tensor<'t>) -> Result<Tensor<'t>> {
        Ok(d.forward(params, Some(&self.ops), FeatureInput::Stacked(self.real_x.clone(), x_gen), None)?)
    }

    fn loss<'t>(&self, out: &Tensor<'t>) -> Tensor<'t> {
        let c = self.num_classes;
        let real_logit = out.slice_cols(c, c + 1);
        let bce = real_logit.bce_with_logits(self.realness.clone(), self.realness_weights.clone());
        if self.class_targets.is_empty() {
            bce
        } else {
            out.slice_cols(0, c).softmax_cross_entropy(self.class_targets.clone()).add(&bce)
        }
    }
}

/// Alternates `d_steps_per_g` discriminator updates with one generator
/// update per epoch.
pub fn train_generative(
    g_prime: &Graph,
    targets: &SimilarTargets,
    cfg: &GenConfig,
) -> Result<(GenerativeModel, Vec<GenEpoch>)> {
    cfg.validate()?;
    if targets.is_empty() {
        return Err(PseudoError::EmptyTargets);
    }
    let d_x = g_prime.feature_dim();
    let n_t = targets.len();
    let mut generator = GnnModel::stack(
        Aggregator::Dense,
        &cfg.generator_dims(d_x),
        Activation::Relu,
        0.0,
        &mut seeded(cfg.seed, "generator-init"),
    )?;
    let mut discriminator = GnnModel::stack(
        Aggregator::Gcn,
        &[d_x, cfg.disc_hidden, g_prime.num_classes() + 1],
        Activation::Relu,
        0.0,
        &mut seeded(cfg.seed, "discriminator-init"),
    )?;
    let noise = sample_noise(n_t, cfg.noise_dim, &mut seeded(cfg.seed, "generator-noise"));
    let tilde = pseudo_structure(g_prime, targets)?;
    let setup = DiscSetup::new(g_prime, &tilde);
    let mut opt_g = Adam::new(cfg.lr, 0.0);
    let mut opt_d = Adam::new(cfg.lr, 0.0);
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut d_loss = f64::NAN;
        for _ in 0..cfg.d_steps_per_g {
            let tape = Tape::new();
            let gp = generator.bind_frozen(&tape);
            let x_gen = generator.forward(&gp, None, FeatureInput::Dense(tape.constant(noise.clone())), None)?;
            let detached = x_gen.value().clone();
            let x_gen = tape.constant(detached);
            let dp = discriminator.bind(&tape);
            let out = setup.forward(&discriminator, &dp, x_gen)?;
            let mut loss = setup.loss(&out);
            if let Some(p) = l2_penalty(&dp).filter(|_| cfg.beta > 0.0) {
                loss = loss.add(&p.scale(cfg.beta));
            }
            d_loss = loss.item();
            if !d_loss.is_finite() {
                return Err(PseudoError::NonFiniteLoss { which: "discriminator", epoch });
            }
            let grads = tape.backward(&loss)?;
            let grads: Vec<_> = dp.iter().map(|p| grads.get_or_zeros(p)).collect();
            opt_d.step(discriminator.params_mut(), &grads);
        }

        let tape = Tape::new();
        let gp = generator.bind(&tape);
        let x_gen = generator.forward(&gp, None, FeatureInput::Dense(tape.constant(noise.clone())), None)?;
        let feature = x_gen.sub(&tape.constant(targets.target_features.clone())).squared_sum().scale(1.0 / n_t as f64);
        let mut loss = feature;
        if cfg.alpha > 0.0 {
            loss = loss.add(&l2_penalty(&gp).expect("generator has parameters").scale(cfg.alpha));
        }
        if cfg.adversarial_weight > 0.0 {
            let dp = discriminator.bind_frozen(&tape);
            let out = setup.forward(&discriminator, &dp, x_gen)?;
            let c = setup.num_classes;
            let fooled = out
                .slice_rows(setup.n_real, setup.n_real + setup.n_pseudo)
                .slice_cols(c, c + 1)
                .bce_with_logits(Rc::new(vec![1.0; n_t]), Rc::new(vec![1.0 / n_t as f64; n_t]));
            loss = loss.add(&fooled.scale(cfg.adversarial_weight));
        }
        let g_loss = loss.item();
        if !g_loss.is_finite() {
            return Err(PseudoError::NonFiniteLoss { which: "generator", epoch });
        }
        let feature_loss = feature.item();
        let grads = tape.backward(&loss)?;
        let grads: Vec<_> = gp.iter().map(|p| grads.get_or_zeros(p)).collect();
        opt_g.step(generator.params_mut(), &grads);
        trace.push(GenEpoch { epoch, feature_loss, generator_loss: g_loss, discriminator_loss: d_loss });
    }

    let x = g_prime.features();
    let feature_min = x.fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b)).to_vec();
    let feature_max = x.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b)).to_vec();
    Ok((GenerativeModel { generator, discriminator, noise, feature_min, feature_max }, trace))
}

/// Balanced real/pseudo accuracy of the discriminator when the pseudo
/// features come from `noise`.
pub fn discriminator_accuracy(
    model: &GenerativeModel,
    g_prime: &Graph,
    targets: &SimilarTargets,
    noise: &Array2<f64>,
) -> Result<f64> {
    if noise.nrows() != targets.len() {
        return Err(PseudoError::InvalidConfig(format!("{} noise rows for {} targets", noise.nrows(), targets.len())));
    }
    let tilde = pseudo_structure(g_prime, targets)?;
    let setup = DiscSetup::new(g_prime, &tilde);
    let tape = Tape::new();
    let x_gen = tape.constant(model.generate(noise)?);
    let dp = model.discriminator.bind_frozen(&tape);
    let out = setup.forward(&model.discriminator, &dp, x_gen)?;
    let out = out.value();
    let c = setup.num_classes;
    let real_ok = (0..setup.n_real).filter(|&v| out[[v, c]] > 0.0).count() as f64 / setup.n_real as f64;
    let pseudo_ok =
        (setup.n_real..tilde.num_nodes()).filter(|&v| out[[v, c]] <= 0.0).count() as f64 / setup.n_pseudo as f64;
    Ok(0.5 * (real_ok + pseudo_ok))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pseudo_id: usize,
    pub tail_id: usize,
    pub source_neighbor_id: usize,
    pub label: Option<usize>,
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let io = |e: std::io::Error| PseudoError::Io { path: path.display().to_string(), message: e.to_string() };
    let mut f = fs::File::create(path).map_err(io)?;
    for e in entries {
        writeln!(f, "{}", serde_json::to_string(e).expect("entry serializes")).map_err(io)?;
    }
    Ok(())
}

/// Appends one pseudo node per target pair, each joined only to its tail.
/// The generator input for pair `k` is row `k` of the training noise.
pub fn inject_pseudo_nodes(
    g_prime: &Graph,
    model: &GenerativeModel,
    targets: &SimilarTargets,
) -> Result<(Graph, Vec<ManifestEntry>)> {
    if targets.is_empty() {
        return Ok((g_prime.clone(), Vec::new()));
    }
    let x = model.generate_clamped(&model.noise)?;
    let n = g_prime.num_nodes();
    let mut delta = GraphDelta::default();
    let mut manifest = Vec::with_capacity(targets.len());
    for (k, (&(t, j), &label)) in targets.pairs.iter().zip(&targets.target_labels).enumerate() {
        delta.added_nodes.push(NewNode { features: x.row(k).to_vec(), label, real: false });
        delta.added_edges.push((n + k, t));
        manifest.push(ManifestEntry { pseudo_id: n + k, tail_id: t, source_neighbor_id: j, label });
    }
    Ok((g_prime.apply_delta(&delta)?, manifest))
}

/// Selects targets, trains the generative module and injects the pseudo
/// nodes. Returns the graph unchanged when no tail has a neighbor.
pub fn generate_pseudo_neighbors(
    g_prime: &Graph,
    tails: &[usize],
    cfg: &GenConfig,
) -> Result<(Graph, Vec<ManifestEntry>, Option<GenerativeModel>, Vec<GenEpoch>)> {
    let targets = select_similar_neighbors(g_prime, tails);
    if targets.is_empty() {
        return Ok((g_prime.clone(), Vec::new(), None, Vec::new()));
    }
    let (model, trace) = train_generative(g_prime, &targets, cfg)?;
    let (tilde, manifest) = inject_pseudo_nodes(g_prime, &model, &targets)?;
    Ok((tilde, manifest, Some(model), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::plain;
    use ndarray::array;

    fn graph_with(x: Array2<f64>, labels: Vec<Option<usize>>, edges: &[(usize, usize)]) -> Graph {
        Graph::from_edges(x, labels, None, edges.iter().copied()).unwrap().0
    }

    #[test]
    fn singleton_and_orthogonal_choice() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.3, 0.3]];
        let g = graph_with(x, vec![Some(0), Some(1), Some(0), None], &[(0, 1), (0, 2), (3, 1)]);
        let t = select_similar_neighbors(&g, &[0, 3]);
        assert_eq!(t.pairs, vec![(0, 2), (3, 1)]);
        assert_eq!(t.target_labels, vec![Some(0), Some(1)]);
        assert_eq!(t.target_features.row(0).to_vec(), vec![1.0, 0.0]);
    }

    #[test]
    fn zero_rows_tie_to_lowest_id() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let g = graph_with(x, vec![Some(0); 3], &[(0, 2), (0, 1)]);
        assert_eq!(select_similar_neighbors(&g, &[0]).pairs, vec![(0, 1)]);
    }

    #[test]
    fn isolated_tails_are_skipped() {
        let g = plain(3, &[(0, 1)]);
        let t = select_similar_neighbors(&g, &[2, 0]);
        assert_eq!(t.skipped, vec![2]);
        assert_eq!(t.pairs, vec![(0, 1)]);
    }

    fn small_graph() -> Graph {
        let x = Array2::from_shape_fn((6, 3), |(i, j)| ((i + 2 * j) % 4) as f64 / 4.0);
        let labels = vec![Some(0), Some(1), Some(0), Some(1), Some(0), None];
        graph_with(x, labels, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (1, 4)])
    }

    fn small_cfg(epochs: usize) -> GenConfig {
        GenConfig { noise_dim: 4, gen_hidden: 8, disc_hidden: 8, epochs, ..GenConfig::default() }
    }

    #[test]
    fn injection_contract() {
        let g = small_graph();
        let (tilde, manifest, model, trace) = generate_pseudo_neighbors(&g, &[0, 3, 5], &small_cfg(5)).unwrap();
        assert!(model.is_some());
        assert_eq!(trace.len(), 5);
        assert_eq!(tilde.num_nodes(), g.num_nodes() + 3);
        assert_eq!(tilde.num_edges(), g.num_edges() + 3);
        assert_eq!(tilde.pseudo_flags().iter().filter(|&&r| !r).count(), 3);
        for e in &manifest {
            assert_eq!(tilde.neighbors(e.pseudo_id), &[e.tail_id]);
            assert_eq!(tilde.label(e.pseudo_id), e.label);
        }
        assert_eq!(tilde.strip_pseudo().unwrap(), g);
        let m = model.unwrap();
        for row in tilde.features().rows().into_iter().skip(g.num_nodes()) {
            for (k, v) in row.iter().enumerate() {
                assert!(*v >= m.feature_min[k] && *v <= m.feature_max[k]);
            }
        }
    }

    #[test]
    fn no_tails_is_identity() {
        let g = small_graph();
        let (tilde, manifest, model, _) = generate_pseudo_neighbors(&g, &[], &small_cfg(3)).unwrap();
        assert_eq!(tilde, g);
        assert!(manifest.is_empty() && model.is_none());
    }

    #[test]
    fn feature_matching_alone_fits_the_target() {
        let g = small_graph();
        let t = select_similar_neighbors(&g, &[0]);
        let cfg = GenConfig { adversarial_weight: 0.0, alpha: 0.0, ..small_cfg(500) };
        let (m, _) = train_generative(&g, &t, &cfg).unwrap();
        let out = m.generate(&m.noise).unwrap();
        let l2 = (&out - &t.target_features).mapv(|v| v * v).sum().sqrt();
        assert!(l2 < 1e-2, "{l2}");
    }

    #[test]
    fn heavy_penalty_shrinks_weights() {
        let g = small_graph();
        let t = select_similar_neighbors(&g, &[0, 3]);
        let cfg = GenConfig { alpha: 1e6, adversarial_weight: 0.0, ..small_cfg(300) };
        let (m, _) = train_generative(&g, &t, &cfg).unwrap();
        let max_w = m.generator.params().iter().flat_map(|p| p.iter()).fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(max_w < 1e-2, "{max_w}");
    }

    #[test]
    fn deterministic_for_seed() {
        let g = small_graph();
        let a = generate_pseudo_neighbors(&g, &[0, 3], &small_cfg(10)).unwrap();
        let b = generate_pseudo_neighbors(&g, &[0, 3], &small_cfg(10)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.2, b.2);
    }

    #[test]
    fn config_checks() {
        assert!(GenConfig { d_steps_per_g: 0, ..GenConfig::default() }.validate().is_err());
        assert!(GenConfig { alpha: -1.0, ..GenConfig::default() }.validate().is_err());
        let g = small_graph();
        let empty = select_similar_neighbors(&g, &[]);
        assert!(matches!(train_generative(&g, &empty, &GenConfig::default()), Err(PseudoError::EmptyTargets)));
    }

    #[test]
    fn output_shape_follows_batch() {
        let g = small_graph();
        let t = select_similar_neighbors(&g, &[0]);
        let (m, _) = train_generative(&g, &t, &small_cfg(2)).unwrap();
        for rows in [1, 5] {
            let z = sample_noise(rows, 4, &mut seeded(0, "z"));
            assert_eq!(m.generate(&z).unwrap().dim(), (rows, 3));
        }
    }
}
