//! Minimal differentiable GNN engine: sparse operators, a reverse-mode tape,
//! GCN / mean-aggregator / dense layers, Adam, and the pretraining losses.

mod checkpoint;
mod loss;
mod model;
mod optim;
mod pretrain;
pub mod sparse;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use loss::{classifier_loss, l2_penalty, link_predictor_loss, predict_labels};
pub use model::{Activation, Aggregator, FeatureInput, GnnModel, GraphOps, LayerSpec};
pub use optim::Adam;
pub use pretrain::{
    pretrain_encoders, train_link_predictor, train_node_classifier, EmbeddingPair, EncoderConfig, LinkTrainData,
};
pub use sparse::{CsrMatrix, SparseConst};
pub use tensor::{sigmoid, softmax_rows, softplus, Gradients, Tape, Tensor, LOG_FLOOR};
pub use train::{objective, train, EpochRecord, TrainConfig, TrainOutcome, TrainStreams};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("backward called twice on the same tape")]
    AlreadyBackpropagated,
    #[error("loss does not depend on any trainable parameter")]
    Detached,
    #[error("loss must be a 1x1 scalar, got shape {0:?}")]
    NotScalar((usize, usize)),
    #[error("loss tensor belongs to another tape")]
    ForeignTensor,
    #[error("a model needs at least one layer")]
    NoLayers,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid training setup: {0}")]
    InvalidConfig(String),
    #[error("empty edge list")]
    EmptyEdges,
    #[error("{neg} negative edges for {pos} positive edges")]
    EdgeCountMismatch { pos: usize, neg: usize },
    #[error("empty training mask")]
    EmptyMask,
    #[error("node {0} is in the loss mask but has no label")]
    UnlabeledInMask(usize),
    #[error("cannot sample negatives: {0}")]
    Sampling(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, EngineError>;
