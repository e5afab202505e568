//! End-to-end orchestration.
//!
//! Each stage reads what it needs from the run directory and writes its own
//! artifacts there, so any stage can be rerun on its own. [`run_seed`] chains
//! the stages in memory and writes the same files along the way.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::augment::{
    denoise_hubs_scoped, discover_tails, tail_similarity_scoped, DiscoveryStrategy, EdgeEditPlan, EditScope,
};
use crate::config::{DataSource, RunConfig};
use crate::engine::{
    load_checkpoint, predict_labels, pretrain_encoders, save_checkpoint, sigmoid, train_link_predictor,
    train_node_classifier, CsrMatrix, EmbeddingPair, GnnModel, GraphOps, LinkTrainData, SparseConst, TrainOutcome,
};
use crate::eval::{
    auc_score, f1_scores, make_link_split, make_overall_split, make_tail_split, AggregateReport, LinkSplit,
    MetricsReport, NodeSplit, Task,
};
use crate::graph::{load_graph_dir, save_graph_dir, Graph, LoadOptions};
use crate::negatives::NegativeSampler;
use crate::pagerank::{resample_tails, sample_nodes, NodePartition, PageRankVector};
use crate::pseudo::{generate_pseudo_neighbors, write_manifest, GenConfig, GenEpoch, GenerativeModel, ManifestEntry};
use crate::rng::derive_seed;

pub const RUN_ROOT_ENV: &str = "SAUG_RUN_ROOT";
pub const DEFAULT_RUN_ROOT: &str = "runs";

pub const CONFIG_FILE: &str = "config.toml";
pub const PAGERANK_FILE: &str = "pagerank.json";
pub const PARTITION_FILE: &str = "partition.json";
pub const SPLIT_FILE: &str = "split.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.json";
pub const PLAN_FILE: &str = "plan.jsonl";
pub const GRAPH_PRIME_DIR: &str = "graph_prime";
pub const RESAMPLED_FILE: &str = "partition_resampled.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const GENERATOR_FILE: &str = "generator.json";
pub const GEN_TRACE_FILE: &str = "generator_trace.csv";
pub const GRAPH_TILDE_DIR: &str = "graph_tilde";
pub const MODEL_FILE: &str = "model.json";
pub const TRAIN_TRACE_FILE: &str = "train_trace.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Load,
    Sample,
    Pretrain,
    Augment,
    Generate,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Config,
        Stage::Load,
        Stage::Sample,
        Stage::Pretrain,
        Stage::Augment,
        Stage::Generate,
        Stage::Train,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Sample => "sample",
            Stage::Pretrain => "pretrain",
            Stage::Augment => "augment",
            Stage::Generate => "generate",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for PipelineError {}

pub type Result<T> = std::result::Result<T, PipelineError>;

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T>;
}

impl<T, E: fmt::Display> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: Stage) -> Result<T> {
        self.map_err(|e| PipelineError { stage, message: e.to_string() })
    }
}

/// Root for run directories: `$SAUG_RUN_ROOT`, else `runs`.
pub fn run_root_from_env() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT))
}

/// One seed's artifact directory, `<root>/<hash16>-s<seed>`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path, cfg: &RunConfig, seed: u64) -> Self {
        RunDir { path: root.join(format!("{}-s{seed}", &cfg.config_hash()[..16])) }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn create(&self, stage: Stage) -> Result<()> {
        fs::create_dir_all(&self.path).map_err(|e| io_error(stage, &self.path, e))
    }

    pub fn write_text(&self, name: &str, text: &str, stage: Stage) -> Result<()> {
        let path = self.file(name);
        fs::write(&path, text).map_err(|e| io_error(stage, &path, e))
    }

    pub fn read_text(&self, name: &str, stage: Stage) -> Result<String> {
        let path = self.file(name);
        fs::read_to_string(&path).map_err(|e| io_error(stage, &path, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T, stage: Stage) -> Result<()> {
        let text = serde_json::to_string_pretty(value).at(stage)?;
        self.write_text(name, &text, stage)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, stage: Stage) -> Result<T> {
        let text = self.read_text(name, stage)?;
        serde_json::from_str(&text).map_err(|e| PipelineError { stage, message: format!("{name}: {e}") })
    }

    pub fn exists(&self, name: &str) -> bool {
        self.file(name).exists()
    }
}

fn io_error(stage: Stage, path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError { stage, message: format!("{}: {e}", path.display()) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Split {
    Node(NodeSplit),
    Link(LinkSplit),
}

impl Split {
    pub fn as_node(&self) -> Option<&NodeSplit> {
        match self {
            Split::Node(s) => Some(s),
            Split::Link(_) => None,
        }
    }

    pub fn as_link(&self) -> Option<&LinkSplit> {
        match self {
            Split::Link(s) => Some(s),
            Split::Node(_) => None,
        }
    }
}

/// Output of the sampling stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub partition: NodePartition,
    pub split: Split,
}

/// Output of the generation stage.
#[derive(Debug, Clone)]
pub struct Generated {
    pub resampled: NodePartition,
    pub manifest: Vec<ManifestEntry>,
    pub model: Option<GenerativeModel>,
    pub trace: Vec<GenEpoch>,
    pub g_tilde: Graph,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub hubs: usize,
    pub tails: usize,
    pub edges_removed: usize,
    pub edges_added: usize,
    pub resampled_tails: usize,
    pub pseudo_nodes: usize,
    pub edges_prime: usize,
    pub edges_tilde: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub task: Task,
    pub metrics: MetricsReport,
    pub stats: RunStats,
    /// Seconds per stage.
    pub timing: BTreeMap<String, f64>,
}

impl RunReport {
    /// Copy with every wall-clock field zeroed.
    pub fn without_timing(&self) -> RunReport {
        RunReport {
            metrics: self.metrics.without_timing(),
            timing: self.timing.keys().map(|k| (k.clone(), 0.0)).collect(),
            ..self.clone()
        }
    }
}

pub fn load_input(cfg: &RunConfig) -> Result<Graph> {
    match &cfg.data {
        DataSource::Dir { path, l1_normalize } => {
            let (g, report) = load_graph_dir(path, LoadOptions { l1_normalize: *l1_normalize }).at(Stage::Load)?;
            log::info!(
                "loaded {}: {} nodes, {} edges ({} edge lines)",
                path.display(),
                g.num_nodes(),
                g.num_edges(),
                report.edge_lines
            );
            Ok(g)
        }
        DataSource::Synthetic(spec) => spec.generate().at(Stage::Load),
    }
}

/// The graph augmentation works on: the input itself for node tasks, its
/// training edges for link prediction.
pub fn base_graph<'g>(g: &'g Graph, split: &Split) -> Cow<'g, Graph> {
    match split {
        Split::Node(_) => Cow::Borrowed(g),
        Split::Link(s) => Cow::Owned(s.train_graph(g)),
    }
}

pub fn sample_stage(cfg: &RunConfig, seed: u64, g: &Graph) -> Result<Sampled> {
    let s = Stage::Sample;
    let (partition, split) = match cfg.task {
        Task::TailNc => {
            let part = sample_nodes(g, &cfg.sampler).at(s)?;
            let split = make_tail_split(g, &part, cfg.split.tail_labels_per_class, seed).at(s)?;
            (part, Split::Node(split))
        }
        Task::OverallNc => {
            let part = sample_nodes(g, &cfg.sampler).at(s)?;
            let sp = &cfg.split;
            let split =
                make_overall_split(g, sp.overall_labels_per_class, sp.overall_val, sp.overall_test, seed).at(s)?;
            (part, Split::Node(split))
        }
        Task::LinkPred => {
            let split = make_link_split(g, seed).at(s)?;
            let part = sample_nodes(&split.train_graph(g), &cfg.sampler).at(s)?;
            (part, Split::Link(split))
        }
    };
    Ok(Sampled { partition, split })
}

/// Pretrains both encoders on the base graph. `None` when neither
/// augmentation step is enabled.
pub fn pretrain_stage(cfg: &RunConfig, seed: u64, base: &Graph, split: &Split) -> Result<Option<EmbeddingPair>> {
    if !cfg.needs_embeddings() {
        return Ok(None);
    }
    let labels = base.labels();
    let emb = match split {
        Split::Node(ns) => pretrain_encoders(
            base,
            labels,
            &ns.train,
            Some(&ns.val),
            &cfg.link_config(),
            &cfg.classifier_config(),
            seed,
        ),
        Split::Link(_) => {
            let labeled: Vec<usize> = (0..base.num_nodes()).filter(|&v| labels[v].is_some()).collect();
            pretrain_encoders(base, labels, &labeled, None, &cfg.link_config(), &cfg.classifier_config(), seed)
        }
    };
    emb.map(Some).at(Stage::Pretrain)
}

pub fn augment_stage(
    cfg: &RunConfig,
    base: &Graph,
    sampled: &Sampled,
    emb: Option<&EmbeddingPair>,
) -> Result<(Graph, EdgeEditPlan)> {
    let s = Stage::Augment;
    let Some(emb) = emb else {
        return Ok((base.clone(), EdgeEditPlan::default()));
    };
    cfg.augment.validate().at(s)?;
    let scope = match &sampled.split {
        Split::Node(ns) if cfg.split.protect_held_out => EditScope::protecting(base.num_nodes(), ns.held_out()),
        _ => EditScope::default(),
    };
    let part = &sampled.partition;
    let removals = if cfg.enable_denoise {
        denoise_hubs_scoped(emb, base, part, cfg.augment.hub_threshold, &scope).at(s)?
    } else {
        EdgeEditPlan::default()
    };
    let additions = if cfg.enable_discover {
        let stream = tail_similarity_scoped(emb, base, part, cfg.augment.chunk_rows, scope).at(s)?;
        discover_tails(stream, cfg.augment.strategy)
    } else {
        EdgeEditPlan::default()
    };
    let plan = removals.merged(additions);
    let g_prime = base.apply_delta(&plan.to_delta()).at(s)?;
    Ok((g_prime, plan))
}

/// Resamples tails on `g_prime` and attaches pseudo neighbors. Pseudo labels
/// only come from labels the training split exposes.
pub fn generate_stage(cfg: &RunConfig, seed: u64, g_prime: &Graph, split: &Split) -> Result<Generated> {
    let s = Stage::Generate;
    let resampled = resample_tails(g_prime, &cfg.sampler).at(s)?;
    if !cfg.enable_generate {
        return Ok(Generated {
            resampled,
            manifest: Vec::new(),
            model: None,
            trace: Vec::new(),
            g_tilde: g_prime.clone(),
        });
    }
    let view = match split {
        Split::Node(ns) => g_prime.with_labels(ns.training_labels(g_prime.labels())).at(s)?,
        Split::Link(_) => g_prime.clone(),
    };
    let gen_cfg =
        GenConfig { seed: derive_seed(seed, "generator").wrapping_add(cfg.generator.seed), ..cfg.generator.clone() };
    let (tilde_view, manifest, model, trace) = generate_pseudo_neighbors(&view, &resampled.tails, &gen_cfg).at(s)?;
    let mut labels = g_prime.labels().to_vec();
    labels.extend_from_slice(&tilde_view.labels()[g_prime.num_nodes()..]);
    let g_tilde = tilde_view.with_labels(labels).at(s)?;
    Ok(Generated { resampled, manifest, model, trace, g_tilde })
}

/// Training mask on the augmented graph: the labeled split nodes, plus
/// labeled pseudo nodes when enabled.
pub fn training_mask(cfg: &RunConfig, g_tilde: &Graph, split: &NodeSplit) -> Vec<usize> {
    let mut mask = split.train.clone();
    if cfg.train_on_pseudo_labels {
        mask.extend((0..g_tilde.num_nodes()).filter(|&v| !g_tilde.is_real(v) && g_tilde.label(v).is_some()));
    }
    mask
}

pub fn train_stage(cfg: &RunConfig, seed: u64, g_tilde: &Graph, split: &Split) -> Result<(GnnModel, TrainOutcome)> {
    let s = Stage::Train;
    match split {
        Split::Node(ns) => {
            let mask = training_mask(cfg, g_tilde, ns);
            train_node_classifier(g_tilde, g_tilde.labels(), &mask, Some(&ns.val), &cfg.classifier_config(), seed).at(s)
        }
        Split::Link(ls) => {
            let data = LinkTrainData {
                positives: g_tilde.edges().collect(),
                sampler: NegativeSampler::for_graph(g_tilde),
                validation: Some((ls.val_pos.clone(), ls.val_neg.clone())),
            };
            train_link_predictor(g_tilde, &data, &cfg.link_config(), seed).at(s)
        }
    }
}

fn model_output(model: &GnnModel, g: &Graph) -> Result<ndarray::Array2<f64>> {
    let x = SparseConst::new(CsrMatrix::from_dense(g.features()));
    model.infer_sparse(Some(&GraphOps::new(g)), &x).at(Stage::Eval)
}

/// Test-set metrics for the trained model on `g_tilde`.
pub fn eval_stage(seed: u64, model: &GnnModel, g_tilde: &Graph, split: &Split) -> Result<MetricsReport> {
    let s = Stage::Eval;
    let out = model_output(model, g_tilde)?;
    let (f1, auc) = match split {
        Split::Node(ns) => {
            let pred = predict_labels(&out);
            let mut p = Vec::with_capacity(ns.test.len());
            let mut t = Vec::with_capacity(ns.test.len());
            for &v in &ns.test {
                if let Some(c) = g_tilde.label(v) {
                    p.push(pred[v]);
                    t.push(c);
                }
            }
            (f1_scores(&p, &t, g_tilde.num_classes()).at(s)?, None)
        }
        Split::Link(ls) => {
            let score = |&(i, j): &(usize, usize)| sigmoid(out.row(i).dot(&out.row(j)));
            let scores: Vec<f64> = ls.test_pos.iter().chain(&ls.test_neg).map(score).collect();
            let truth: Vec<bool> = (0..scores.len()).map(|k| k < ls.test_pos.len()).collect();
            let auc = auc_score(&scores, &truth).at(s)?;
            let pred: Vec<usize> = scores.iter().map(|&x| usize::from(x >= 0.5)).collect();
            let truth: Vec<usize> = truth.into_iter().map(usize::from).collect();
            (f1_scores(&pred, &truth, 2).at(s)?, Some(auc))
        }
    };
    Ok(MetricsReport {
        macro_f1: f1.macro_f1,
        micro_f1: f1.micro_f1,
        auc,
        per_class_f1: f1.per_class,
        seed,
        wall_clock_secs: 0.0,
    })
}

fn stats(
    g: &Graph,
    sampled: &Sampled,
    plan: &EdgeEditPlan,
    g_prime: &Graph,
    resampled: &NodePartition,
    g_tilde: &Graph,
) -> RunStats {
    RunStats {
        num_nodes: g.num_nodes(),
        num_edges: g.num_edges(),
        hubs: sampled.partition.hubs.len(),
        tails: sampled.partition.tails.len(),
        edges_removed: plan.removals().count(),
        edges_added: plan.additions().count(),
        resampled_tails: resampled.tails.len(),
        pseudo_nodes: g_tilde.num_pseudo(),
        edges_prime: g_prime.num_edges(),
        edges_tilde: g_tilde.num_edges(),
    }
}

// Artifact writers and readers shared by the pipeline and single-stage runs.

fn save_sampled(dir: &RunDir, sampled: &Sampled) -> Result<()> {
    let s = Stage::Sample;
    dir.write_json(PAGERANK_FILE, &sampled.partition.pagerank, s)?;
    dir.write_json(PARTITION_FILE, &sampled.partition, s)?;
    dir.write_json(SPLIT_FILE, &sampled.split, s)
}

fn load_sampled(dir: &RunDir, stage: Stage) -> Result<Sampled> {
    Ok(Sampled { partition: dir.read_json(PARTITION_FILE, stage)?, split: dir.read_json(SPLIT_FILE, stage)? })
}

fn save_augmented(dir: &RunDir, g_prime: &Graph, plan: &EdgeEditPlan) -> Result<()> {
    let s = Stage::Augment;
    plan.write_jsonl(&dir.file(PLAN_FILE)).at(s)?;
    save_graph_dir(g_prime, &dir.file(GRAPH_PRIME_DIR)).at(s)
}

fn load_graph_artifact(dir: &RunDir, name: &str, stage: Stage) -> Result<Graph> {
    load_graph_dir(&dir.file(name), LoadOptions { l1_normalize: false }).map(|(g, _)| g).at(stage)
}

fn save_generated(dir: &RunDir, gen: &Generated) -> Result<()> {
    let s = Stage::Generate;
    dir.write_json(RESAMPLED_FILE, &gen.resampled, s)?;
    write_manifest(&gen.manifest, &dir.file(MANIFEST_FILE)).at(s)?;
    if let Some(model) = &gen.model {
        dir.write_json(GENERATOR_FILE, model, s)?;
    }
    let mut csv = String::from("epoch,feature_loss,generator_loss,discriminator_loss\n");
    for e in &gen.trace {
        csv.push_str(&format!("{},{},{},{}\n", e.epoch, e.feature_loss, e.generator_loss, e.discriminator_loss));
    }
    dir.write_text(GEN_TRACE_FILE, &csv, s)?;
    save_graph_dir(&gen.g_tilde, &dir.file(GRAPH_TILDE_DIR)).at(s)
}

fn save_trained(dir: &RunDir, model: &GnnModel, outcome: &TrainOutcome) -> Result<()> {
    save_checkpoint(model, &dir.file(MODEL_FILE)).at(Stage::Train)?;
    dir.write_text(TRAIN_TRACE_FILE, &outcome.to_csv(), Stage::Train)
}

fn timed<T>(timing: &mut BTreeMap<String, f64>, stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    timing.insert(stage.name().to_string(), start.elapsed().as_secs_f64());
    out
}

/// All stages for one seed. Artifacts land in `RunDir::new(root, cfg, seed)`.
pub fn run_seed(cfg: &RunConfig, seed: u64, root: &Path) -> Result<RunReport> {
    let start = Instant::now();
    cfg.validate().at(Stage::Config)?;
    let dir = RunDir::new(root, cfg, seed);
    dir.create(Stage::Config)?;
    dir.write_text(CONFIG_FILE, &cfg.to_toml_string(), Stage::Config)?;
    let mut timing = BTreeMap::new();

    let g = timed(&mut timing, Stage::Load, || load_input(cfg))?;
    let sampled = timed(&mut timing, Stage::Sample, || {
        let s = sample_stage(cfg, seed, &g)?;
        save_sampled(&dir, &s)?;
        Ok(s)
    })?;
    let base = base_graph(&g, &sampled.split);
    let emb = timed(&mut timing, Stage::Pretrain, || {
        let emb = pretrain_stage(cfg, seed, &base, &sampled.split)?;
        if let Some(e) = &emb {
            dir.write_json(EMBEDDINGS_FILE, e, Stage::Pretrain)?;
        }
        Ok(emb)
    })?;
    let (g_prime, plan) = timed(&mut timing, Stage::Augment, || {
        let out = augment_stage(cfg, &base, &sampled, emb.as_ref())?;
        save_augmented(&dir, &out.0, &out.1)?;
        Ok(out)
    })?;
    let gen = timed(&mut timing, Stage::Generate, || {
        let gen = generate_stage(cfg, seed, &g_prime, &sampled.split)?;
        save_generated(&dir, &gen)?;
        Ok(gen)
    })?;
    let (model, _) = timed(&mut timing, Stage::Train, || {
        let out = train_stage(cfg, seed, &gen.g_tilde, &sampled.split)?;
        save_trained(&dir, &out.0, &out.1)?;
        Ok(out)
    })?;
    let mut metrics = timed(&mut timing, Stage::Eval, || eval_stage(seed, &model, &gen.g_tilde, &sampled.split))?;
    metrics.wall_clock_secs = start.elapsed().as_secs_f64();
    let report = RunReport {
        config: cfg.clone(),
        config_hash: cfg.config_hash(),
        seed,
        task: cfg.task,
        metrics,
        stats: stats(&base, &sampled, &plan, &g_prime, &gen.resampled, &gen.g_tilde),
        timing,
    };
    dir.write_json(REPORT_FILE, &report, Stage::Eval)?;
    Ok(report)
}

/// Reruns one stage from the artifacts of the stages before it.
pub fn run_stage(cfg: &RunConfig, seed: u64, root: &Path, stage: Stage) -> Result<RunDir> {
    cfg.validate().at(Stage::Config)?;
    let dir = RunDir::new(root, cfg, seed);
    dir.create(stage)?;
    dir.write_text(CONFIG_FILE, &cfg.to_toml_string(), Stage::Config)?;
    match stage {
        Stage::Config => {}
        Stage::Load => {
            load_input(cfg)?;
        }
        Stage::Sample => {
            let g = load_input(cfg)?;
            save_sampled(&dir, &sample_stage(cfg, seed, &g)?)?;
        }
        Stage::Pretrain => {
            let g = load_input(cfg)?;
            let sampled = load_sampled(&dir, stage)?;
            if let Some(e) = pretrain_stage(cfg, seed, &base_graph(&g, &sampled.split), &sampled.split)? {
                dir.write_json(EMBEDDINGS_FILE, &e, stage)?;
            }
        }
        Stage::Augment => {
            let g = load_input(cfg)?;
            let sampled = load_sampled(&dir, stage)?;
            let emb: Option<EmbeddingPair> =
                if cfg.needs_embeddings() { Some(dir.read_json(EMBEDDINGS_FILE, stage)?) } else { None };
            let (g_prime, plan) = augment_stage(cfg, &base_graph(&g, &sampled.split), &sampled, emb.as_ref())?;
            save_augmented(&dir, &g_prime, &plan)?;
        }
        Stage::Generate => {
            let sampled = load_sampled(&dir, stage)?;
            let g_prime = load_graph_artifact(&dir, GRAPH_PRIME_DIR, stage)?;
            save_generated(&dir, &generate_stage(cfg, seed, &g_prime, &sampled.split)?)?;
        }
        Stage::Train => {
            let sampled = load_sampled(&dir, stage)?;
            let g_tilde = load_graph_artifact(&dir, GRAPH_TILDE_DIR, stage)?;
            let (model, outcome) = train_stage(cfg, seed, &g_tilde, &sampled.split)?;
            save_trained(&dir, &model, &outcome)?;
        }
        Stage::Eval => {
            let sampled = load_sampled(&dir, stage)?;
            let g_tilde = load_graph_artifact(&dir, GRAPH_TILDE_DIR, stage)?;
            let model = load_checkpoint(&dir.file(MODEL_FILE)).at(stage)?;
            let metrics = eval_stage(seed, &model, &g_tilde, &sampled.split)?;
            dir.write_json("metrics.json", &metrics, stage)?;
        }
    }
    Ok(dir)
}

/// PageRank of the configured input graph (the training graph for link
/// prediction is not involved).
pub fn input_pagerank(cfg: &RunConfig) -> Result<PageRankVector> {
    let g = load_input(cfg)?;
    let o = &cfg.sampler;
    crate::pagerank::pagerank(&g, o.damping, o.tol, o.max_iter).at(Stage::Sample)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub aggregate: AggregateReport,
    pub runs: Vec<RunReport>,
}

/// Runs every configured seed, one thread per seed, and aggregates.
pub fn run_pipeline(cfg: &RunConfig, root: &Path) -> Result<ExperimentReport> {
    cfg.validate().at(Stage::Config)?;
    let results: Vec<Result<RunReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cfg.seeds.iter().map(|&seed| scope.spawn(move || run_seed(cfg, seed, root))).collect();
        handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let aggregate = AggregateReport::from_runs(runs.iter().map(|r| r.metrics.clone()).collect()).at(Stage::Eval)?;
    let report = ExperimentReport { config_hash: cfg.config_hash(), aggregate, runs };
    let path = root.join(format!("{}-summary.json", &report.config_hash[..16]));
    let text = serde_json::to_string_pretty(&report).at(Stage::Eval)?;
    fs::write(&path, text).map_err(|e| io_error(Stage::Eval, &path, e))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    K,
    M,
    L,
    P,
    Q,
}

impl std::str::FromStr for SweepAxis {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(SweepAxis::K),
            "M" | "m" => Ok(SweepAxis::M),
            "L" | "l" => Ok(SweepAxis::L),
            "P" | "p" => Ok(SweepAxis::P),
            "Q" | "q" => Ok(SweepAxis::Q),
            other => Err(PipelineError { stage: Stage::Config, message: format!("unknown sweep axis {other:?}") }),
        }
    }
}

impl SweepAxis {
    /// `cfg` with this axis set to `value`.
    pub fn apply(self, cfg: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = cfg.clone();
        match self {
            SweepAxis::K => c.sampler.hub_factor = value,
            SweepAxis::M => c.sampler.tail_percent = value,
            SweepAxis::L => c.augment.hub_threshold = value,
            SweepAxis::P => c.augment.strategy = DiscoveryStrategy::Threshold { p: value },
            SweepAxis::Q => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(PipelineError {
                        stage: Stage::Config,
                        message: format!("Q must be a whole number, got {value}"),
                    });
                }
                c.augment.strategy = DiscoveryStrategy::TopQ { q: value as usize };
            }
        }
        c.validate().at(Stage::Config)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub auc: Option<f64>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,seed,macro,micro,auc\n");
    for r in rows {
        let auc = r.auc.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", r.value, r.seed, r.macro_f1, r.micro_f1, auc));
    }
    out
}

/// One pipeline run per value and seed.
pub fn sweep(cfg: &RunConfig, axis: SweepAxis, values: &[f64], root: &Path) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(PipelineError { stage: Stage::Config, message: "sweep needs at least one value".into() });
    }
    let configs = values.iter().map(|&v| axis.apply(cfg, v)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (&value, c) in values.iter().zip(&configs) {
        for run in run_pipeline(c, root)?.runs {
            rows.push(SweepRow {
                value,
                seed: run.seed,
                macro_f1: run.metrics.macro_f1,
                micro_f1: run.metrics.micro_f1,
                auc: run.metrics.auc,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::EditOp;
    use crate::engine::EncoderConfig;
    use crate::graph::PowerlawSpec;

    fn tiny(task: Task) -> RunConfig {
        let enc = |base: EncoderConfig| EncoderConfig { epochs: 15, patience: 0, ..base };
        RunConfig {
            task,
            seeds: vec![3],
            data: DataSource::Synthetic(PowerlawSpec::new(80, 2, 12, 3, 1)),
            classifier: enc(EncoderConfig::label_classifier()),
            link_predictor: enc(EncoderConfig::link_predictor()),
            generator: GenConfig { noise_dim: 4, gen_hidden: 8, disc_hidden: 8, epochs: 5, ..GenConfig::default() },
            split: crate::config::SplitConfig {
                overall_labels_per_class: 5,
                overall_val: 20,
                overall_test: 30,
                ..Default::default()
            },
            ..RunConfig::default()
        }
    }

    #[test]
    fn tail_run_writes_every_artifact() {
        let root = tempfile::tempdir().unwrap();
        let cfg = tiny(Task::TailNc);
        let report = run_seed(&cfg, 3, root.path()).unwrap();
        let dir = RunDir::new(root.path(), &cfg, 3);
        for f in [
            CONFIG_FILE,
            PAGERANK_FILE,
            PARTITION_FILE,
            SPLIT_FILE,
            EMBEDDINGS_FILE,
            PLAN_FILE,
            GRAPH_PRIME_DIR,
            RESAMPLED_FILE,
            MANIFEST_FILE,
            GENERATOR_FILE,
            GRAPH_TILDE_DIR,
            MODEL_FILE,
            TRAIN_TRACE_FILE,
            REPORT_FILE,
        ] {
            assert!(dir.exists(f), "missing {f}");
        }
        assert!(report.stats.pseudo_nodes > 0);
        assert_eq!(report.stats.edges_tilde, report.stats.edges_prime + report.stats.pseudo_nodes);
        let echoed = RunConfig::from_toml_str(&dir.read_text(CONFIG_FILE, Stage::Config).unwrap()).unwrap();
        assert_eq!(echoed, cfg);
    }

    #[test]
    fn stages_rerun_from_artifacts() {
        let root = tempfile::tempdir().unwrap();
        let cfg = tiny(Task::TailNc);
        let report = run_seed(&cfg, 3, root.path()).unwrap();
        let dir = RunDir::new(root.path(), &cfg, 3);
        let before = EdgeEditPlan::read_jsonl(&dir.file(PLAN_FILE)).unwrap();
        for stage in [Stage::Augment, Stage::Generate, Stage::Train, Stage::Eval] {
            run_stage(&cfg, 3, root.path(), stage).unwrap();
        }
        assert_eq!(EdgeEditPlan::read_jsonl(&dir.file(PLAN_FILE)).unwrap(), before);
        let metrics: MetricsReport = dir.read_json("metrics.json", Stage::Eval).unwrap();
        assert_eq!(metrics.without_timing(), report.metrics.without_timing());
    }

    #[test]
    fn toggles_off_is_the_plain_backbone() {
        let root = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            enable_denoise: false,
            enable_discover: false,
            enable_generate: false,
            ..tiny(Task::OverallNc)
        };
        let report = run_seed(&cfg, 3, root.path()).unwrap();
        assert_eq!(report.stats.edges_tilde, report.stats.num_edges);

        let g = load_input(&cfg).unwrap();
        let ns = match sample_stage(&cfg, 3, &g).unwrap().split {
            Split::Node(ns) => ns,
            Split::Link(_) => unreachable!(),
        };
        let (model, _) =
            train_node_classifier(&g, g.labels(), &ns.train, Some(&ns.val), &cfg.classifier_config(), 3).unwrap();
        let plain = eval_stage(3, &model, &g, &Split::Node(ns)).unwrap();
        assert_eq!(plain, report.metrics.without_timing());
    }

    #[test]
    fn held_out_pairs_are_never_edited() {
        let root = tempfile::tempdir().unwrap();
        let mut cfg = tiny(Task::TailNc);
        cfg.augment.strategy = DiscoveryStrategy::TopQ { q: 3 };
        run_seed(&cfg, 3, root.path()).unwrap();
        let dir = RunDir::new(root.path(), &cfg, 3);
        let split: Split = dir.read_json(SPLIT_FILE, Stage::Sample).unwrap();
        let ns = split.as_node().unwrap();
        let held: std::collections::HashSet<usize> = ns.held_out().collect();
        let plan = EdgeEditPlan::read_jsonl(&dir.file(PLAN_FILE)).unwrap();
        assert!(plan.edits.iter().any(|e| e.op == EditOp::Add));
        assert!(plan.edits.iter().all(|e| !(held.contains(&e.u) && held.contains(&e.v))));
    }

    #[test]
    fn link_prediction_run() {
        let root = tempfile::tempdir().unwrap();
        let report = run_seed(&tiny(Task::LinkPred), 3, root.path()).unwrap();
        let auc = report.metrics.auc.unwrap();
        assert!((0.0..=1.0).contains(&auc));
        assert_eq!(report.metrics.per_class_f1.len(), 2);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = RunConfig { seeds: vec![1, 2], ..tiny(Task::TailNc) };
        let ra = run_pipeline(&cfg, a.path()).unwrap();
        let rb = run_pipeline(&cfg, b.path()).unwrap();
        for (x, y) in ra.runs.iter().zip(&rb.runs) {
            assert_eq!(x.without_timing(), y.without_timing());
        }
        assert_eq!(ra.aggregate.macro_f1, rb.aggregate.macro_f1);
    }

    #[test]
    fn sweep_contract() {
        let root = tempfile::tempdir().unwrap();
        let cfg = tiny(Task::TailNc);
        assert!(sweep(&cfg, SweepAxis::Q, &[], root.path()).is_err());
        assert!("Z".parse::<SweepAxis>().is_err());
        assert!(SweepAxis::Q.apply(&cfg, 1.5).is_err());
        let rows = sweep(&cfg, SweepAxis::Q, &[1.0, 2.0], root.path()).unwrap();
        assert_eq!(rows.len(), 2);
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with("value,seed,macro,micro,auc\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn failure_names_the_stage() {
        let root = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            data: DataSource::Dir { path: root.path().join("missing"), l1_normalize: true },
            ..tiny(Task::TailNc)
        };
        let err = run_seed(&cfg, 0, root.path()).unwrap_err();
        assert_eq!(err.stage, Stage::Load);
        assert!(RunDir::new(root.path(), &cfg, 0).exists(CONFIG_FILE));
    }
}
