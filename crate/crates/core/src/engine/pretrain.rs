//! Pretraining of the link predictor and the label classifier.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::loss::{classifier_loss, link_predictor_loss};
use super::model::{Activation, Aggregator, FeatureInput, GnnModel, GraphOps};
use super::sparse::{CsrMatrix, SparseConst};
use super::tensor::{softmax_rows, softplus, Tape, Tensor, LOG_FLOOR};
use super::train::{objective, train, TrainConfig, TrainOutcome, TrainStreams};
use super::{EngineError, Result};
use crate::graph::Graph;
use crate::negatives::NegativeSampler;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub aggregator: Aggregator,
    pub hidden: Vec<usize>,
    /// Output width; `None` means one logit per class.
    pub out_dim: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Coefficient of the squared parameter norm in the loss.
    pub reg: f64,
    /// Early-stopping patience in epochs; 0 disables it.
    pub patience: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::label_classifier()
    }
}

impl EncoderConfig {
    /// Two layers, 32 hidden units, 16-dimensional embeddings.
    pub fn link_predictor() -> Self {
        EncoderConfig {
            aggregator: Aggregator::Gcn,
            hidden: vec![32],
            out_dim: Some(16),
            epochs: 200,
            lr: 0.01,
            weight_decay: 5e-4,
            dropout: 0.5,
            reg: 1e-4,
            patience: 30,
        }
    }

    /// Three layers of 32 hidden units, one logit per class.
    pub fn label_classifier() -> Self {
        EncoderConfig { hidden: vec![32, 32], out_dim: None, ..Self::link_predictor() }
    }

    pub fn dims(&self, in_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut d = vec![in_dim];
        d.extend(&self.hidden);
        d.push(self.out_dim.unwrap_or(num_classes));
        d
    }

    fn build(&self, in_dim: usize, num_classes: usize, seed: u64) -> Result<GnnModel> {
        if self.dropout < 0.0 || self.dropout >= 1.0 {
            return Err(EngineError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        GnnModel::stack(
            self.aggregator,
            &self.dims(in_dim, num_classes),
            Activation::Relu,
            self.dropout,
            &mut seeded(seed, "init"),
        )
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            weight_decay: self.weight_decay,
            patience: (self.patience > 0).then_some(self.patience),
            seed,
        }
    }
}

/// Link embeddings and label logits for every node of one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPair {
    pub z_link: Array2<f64>,
    /// Pre-softmax logits.
    pub z_label: Array2<f64>,
}

/// Positive edges, the negative sampler, and optional fixed validation pairs.
pub struct LinkTrainData {
    pub positives: Vec<(usize, usize)>,
    pub sampler: NegativeSampler,
    pub validation: Option<(Vec<(usize, usize)>, Vec<(usize, usize)>)>,
}

impl LinkTrainData {
    /// All edges of `g` as positives, negatives from its non-edges.
    pub fn from_graph(g: &Graph) -> Self {
        LinkTrainData { positives: g.edges().collect(), sampler: NegativeSampler::for_graph(g), validation: None }
    }
}

fn features_const(g: &Graph) -> SparseConst {
    SparseConst::new(CsrMatrix::from_dense(g.features()))
}

/// Mean BCE of the pair scores, without regularization.
pub(crate) fn link_bce(z: &Array2<f64>, pos: &[(usize, usize)], neg: &[(usize, usize)]) -> f64 {
    let cap = -LOG_FLOOR.ln();
    let score = |&(i, j): &(usize, usize)| z.row(i).dot(&z.row(j));
    let total: f64 = pos.iter().map(|p| softplus(-score(p)).min(cap)).sum::<f64>()
        + neg.iter().map(|p| softplus(score(p)).min(cap)).sum::<f64>();
    total / (pos.len() + neg.len()) as f64
}

/// Mean cross-entropy of the logits over `mask`, without regularization.
pub(crate) fn label_ce(logits: &Array2<f64>, labels: &[Option<usize>], mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(EngineError::EmptyMask);
    }
    let p = softmax_rows(logits);
    let mut total = 0.0;
    for &v in mask {
        let c = labels[v].ok_or(EngineError::UnlabeledInMask(v))?;
        total -= p[[v, c]].max(LOG_FLOOR).ln();
    }
    Ok(total / mask.len() as f64)
}

pub fn train_link_predictor(
    g: &Graph,
    data: &LinkTrainData,
    cfg: &EncoderConfig,
    seed: u64,
) -> Result<(GnnModel, TrainOutcome)> {
    if data.positives.is_empty() {
        return Err(EngineError::EmptyEdges);
    }
    let seed = derive_seed(seed, "link-predictor");
    let mut model = cfg.build(g.feature_dim(), g.num_classes(), seed)?;
    let ops = GraphOps::new(g);
    let x = features_const(g);
    let pos = &data.positives;

    let objective = objective(|m: &GnnModel, _: &Tape, params: &[Tensor<'_>], s: &mut TrainStreams| {
        let z = m.forward(params, Some(&ops), FeatureInput::Sparse(x.clone()), Some(&mut s.dropout))?;
        let neg = data.sampler.sample(pos.len(), &mut s.sampling).map_err(|e| EngineError::Sampling(e.to_string()))?;
        link_predictor_loss(&z, pos, &neg, params, cfg.reg)
    });
    let outcome = match &data.validation {
        Some((vp, vn)) => {
            let mut validate = |m: &GnnModel| Ok(link_bce(&m.infer_sparse(Some(&ops), &x)?, vp, vn));
            train(&mut model, &cfg.train_config(seed), objective, Some(&mut validate))?
        }
        None => train(&mut model, &cfg.train_config(seed), objective, None)?,
    };
    Ok((model, outcome))
}

/// Trains on `labels[v]` for `v` in `train_mask`; `val_mask` drives early
/// stopping on validation cross-entropy.
pub fn train_node_classifier(
    g: &Graph,
    labels: &[Option<usize>],
    train_mask: &[usize],
    val_mask: Option<&[usize]>,
    cfg: &EncoderConfig,
    seed: u64,
) -> Result<(GnnModel, TrainOutcome)> {
    if train_mask.is_empty() {
        return Err(EngineError::EmptyMask);
    }
    if labels.len() != g.num_nodes() {
        return Err(EngineError::DimensionMismatch(format!("{} labels for {} nodes", labels.len(), g.num_nodes())));
    }
    let seed = derive_seed(seed, "label-classifier");
    let mut model = cfg.build(g.feature_dim(), g.num_classes(), seed)?;
    let ops = GraphOps::new(g);
    let x = features_const(g);

    let objective = objective(|m: &GnnModel, _: &Tape, params: &[Tensor<'_>], s: &mut TrainStreams| {
        let z = m.forward(params, Some(&ops), FeatureInput::Sparse(x.clone()), Some(&mut s.dropout))?;
        classifier_loss(&z, labels, train_mask, params, cfg.reg)
    });
    let outcome = match val_mask {
        Some(val) if !val.is_empty() => {
            let mut validate = |m: &GnnModel| label_ce(&m.infer_sparse(Some(&ops), &x)?, labels, val);
            train(&mut model, &cfg.train_config(seed), objective, Some(&mut validate))?
        }
        _ => train(&mut model, &cfg.train_config(seed), objective, None)?,
    };
    Ok((model, outcome))
}

/// Trains both encoders on `g` and returns their outputs for every node.
pub fn pretrain_encoders(
    g: &Graph,
    labels: &[Option<usize>],
    train_mask: &[usize],
    val_mask: Option<&[usize]>,
    lp: &EncoderConfig,
    nc: &EncoderConfig,
    seed: u64,
) -> Result<EmbeddingPair> {
    let ops = GraphOps::new(g);
    let x = features_const(g);
    let (link_model, _) = train_link_predictor(g, &LinkTrainData::from_graph(g), lp, seed)?;
    let (label_model, _) = train_node_classifier(g, labels, train_mask, val_mask, nc, seed)?;
    Ok(EmbeddingPair {
        z_link: link_model.infer_sparse(Some(&ops), &x)?,
        z_label: label_model.infer_sparse(Some(&ops), &x)?,
    })
}
