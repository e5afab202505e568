use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sparse::{gcn_normalized, mean_aggregator, CsrMatrix, SparseConst};
use super::tensor::{Tape, Tensor};
use super::{EngineError, Result};
use crate::graph::Graph;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregator {
    /// `Â H W + b` with the symmetric self-loop normalization `Â`.
    Gcn,
    /// `[H, mean_N(H)] W + b`.
    SageMean,
    /// `H W + b`, no message passing.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub aggregator: Aggregator,
}

impl LayerSpec {
    fn weight_rows(&self) -> usize {
        match self.aggregator {
            Aggregator::SageMean => 2 * self.in_dim,
            Aggregator::Gcn | Aggregator::Dense => self.in_dim,
        }
    }
}

/// Precomputed propagation operators of one graph.
#[derive(Debug, Clone)]
pub struct GraphOps {
    num_nodes: usize,
    gcn: SparseConst,
    mean: SparseConst,
}

impl GraphOps {
    pub fn new(g: &Graph) -> Self {
        GraphOps {
            num_nodes: g.num_nodes(),
            gcn: SparseConst::symmetric(gcn_normalized(g)),
            mean: SparseConst::new(mean_aggregator(g)),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }
}

/// Node features entering the first layer.
#[derive(Clone)]
pub enum FeatureInput<'t> {
    Sparse(SparseConst),
    Dense(Tensor<'t>),
    /// Real-node rows (sparse, constant) followed by generated rows.
    Stacked(SparseConst, Tensor<'t>),
}

impl<'t> FeatureInput<'t> {
    /// Sparse constant features from a dense matrix.
    pub fn sparse(x: &Array2<f64>) -> FeatureInput<'t> {
        FeatureInput::Sparse(SparseConst::new(CsrMatrix::from_dense(x)))
    }

    pub fn rows(&self) -> usize {
        match self {
            FeatureInput::Sparse(x) => x.nrows(),
            FeatureInput::Dense(t) => t.shape().0,
            FeatureInput::Stacked(x, t) => x.nrows() + t.shape().0,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            FeatureInput::Sparse(x) => x.forward.ncols(),
            FeatureInput::Dense(t) => t.shape().1,
            FeatureInput::Stacked(x, _) => x.forward.ncols(),
        }
    }

    fn linear(&self, w: &Tensor<'t>) -> Tensor<'t> {
        match self {
            FeatureInput::Sparse(x) => w.spmm_left(x),
            FeatureInput::Dense(h) => h.matmul(w),
            FeatureInput::Stacked(x, h) => w.spmm_left(x).concat_rows(&h.matmul(w)),
        }
    }

    fn dropout(&self, p: f64, rng: &mut StreamRng) -> FeatureInput<'t> {
        match self {
            FeatureInput::Sparse(x) => FeatureInput::Sparse(SparseConst::new(x.forward.dropout(p, rng))),
            FeatureInput::Dense(h) => FeatureInput::Dense(dense_dropout(h, p, rng)),
            FeatureInput::Stacked(x, h) => {
                FeatureInput::Stacked(SparseConst::new(x.forward.dropout(p, rng)), dense_dropout(h, p, rng))
            }
        }
    }
}

fn dense_dropout<'t>(h: &Tensor<'t>, p: f64, rng: &mut StreamRng) -> Tensor<'t> {
    let scale = 1.0 / (1.0 - p);
    let mask = Array2::from_shape_simple_fn(h.shape(), || if rng.gen::<f64>() < p { 0.0 } else { scale });
    h.dropout_with(mask)
}

/// A stack of message-passing (or dense) layers with parameters.
///
/// Parameters are stored layer by layer as `[W, b]`, where `b` is `1 x out`.
/// For `sage-mean` the weight is `[W_self; W_neigh]` stacked by rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnModel {
    pub layers: Vec<LayerSpec>,
    pub activation: Activation,
    pub dropout: f64,
    params: Vec<Array2<f64>>,
}

impl GnnModel {
    /// Glorot-uniform weights, zero biases, drawn layer by layer from `rng`.
    pub fn new(layers: Vec<LayerSpec>, activation: Activation, dropout: f64, rng: &mut StreamRng) -> Result<Self> {
        Self::check_layers(&layers)?;
        if !(0.0..1.0).contains(&dropout) {
            return Err(EngineError::InvalidConfig(format!("dropout {dropout} outside [0, 1)")));
        }
        let mut params = Vec::with_capacity(2 * layers.len());
        for spec in &layers {
            let rows = spec.weight_rows();
            let a = (6.0 / (rows + spec.out_dim) as f64).sqrt();
            params.push(Array2::from_shape_simple_fn((rows, spec.out_dim), || rng.gen_range(-a..a)));
            params.push(Array2::zeros((1, spec.out_dim)));
        }
        Ok(GnnModel { layers, activation, dropout, params })
    }

    /// Layers with a uniform aggregator through `dims[0] -> ... -> dims[last]`.
    pub fn stack(
        aggregator: Aggregator,
        dims: &[usize],
        activation: Activation,
        dropout: f64,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        let layers = dims.windows(2).map(|w| LayerSpec { in_dim: w[0], out_dim: w[1], aggregator }).collect();
        Self::new(layers, activation, dropout, rng)
    }

    /// Model with caller-supplied parameters.
    pub fn from_params(
        layers: Vec<LayerSpec>,
        activation: Activation,
        dropout: f64,
        params: Vec<Array2<f64>>,
    ) -> Result<Self> {
        Self::check_layers(&layers)?;
        let expected: Vec<(usize, usize)> =
            layers.iter().flat_map(|s| [(s.weight_rows(), s.out_dim), (1, s.out_dim)]).collect();
        let found: Vec<(usize, usize)> = params.iter().map(|p| p.dim()).collect();
        if expected != found {
            return Err(EngineError::DimensionMismatch(format!(
                "parameter shapes {found:?} do not match layers {expected:?}"
            )));
        }
        Ok(GnnModel { layers, activation, dropout, params })
    }

    fn check_layers(layers: &[LayerSpec]) -> Result<()> {
        if layers.is_empty() {
            return Err(EngineError::NoLayers);
        }
        for (l, w) in layers.windows(2).enumerate() {
            if w[0].out_dim != w[1].in_dim {
                return Err(EngineError::DimensionMismatch(format!(
                    "layer {l} outputs {} but layer {} expects {}",
                    w[0].out_dim,
                    l + 1,
                    w[1].in_dim
                )));
            }
        }
        Ok(())
    }

    /// Number of scalar parameters implied by `layers`.
    pub fn param_count_for(layers: &[LayerSpec]) -> usize {
        layers.iter().map(|s| s.weight_rows() * s.out_dim + s.out_dim).sum()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// Records the parameters on `tape` as trainable leaves.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Tensor<'t>> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Records the parameters on `tape` as constants.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Vec<Tensor<'t>> {
        self.params.iter().map(|p| tape.constant(p.clone())).collect()
    }

    /// Forward pass. Passing `dropout_rng` selects training mode; the final
    /// layer has no activation. Dropout acts on hidden representations only.
    pub fn forward<'t>(
        &self,
        params: &[Tensor<'t>],
        ops: Option<&GraphOps>,
        input: FeatureInput<'t>,
        mut dropout_rng: Option<&mut StreamRng>,
    ) -> Result<Tensor<'t>> {
        if input.cols() != self.in_dim() {
            return Err(EngineError::DimensionMismatch(format!(
                "input has {} columns, model expects {}",
                input.cols(),
                self.in_dim()
            )));
        }
        let needs_graph = self.layers.iter().any(|s| s.aggregator != Aggregator::Dense);
        if needs_graph {
            match ops {
                None => return Err(EngineError::InvalidConfig("message-passing layers need graph operators".into())),
                Some(o) if o.num_nodes() != input.rows() => {
                    return Err(EngineError::DimensionMismatch(format!(
                        "input has {} rows, graph has {} nodes",
                        input.rows(),
                        o.num_nodes()
                    )))
                }
                _ => {}
            }
        }
        let last = self.layers.len() - 1;
        let mut current = input;
        let mut out = None;
        for (l, spec) in self.layers.iter().enumerate() {
            if self.dropout > 0.0 && l > 0 {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    current = current.dropout(self.dropout, rng);
                }
            }
            let (w, b) = (&params[2 * l], &params[2 * l + 1]);
            let h = match spec.aggregator {
                Aggregator::Gcn => current.linear(w).spmm_left(&ops.unwrap().gcn),
                Aggregator::SageMean => {
                    let w_self = w.slice_rows(0, spec.in_dim);
                    let w_neigh = w.slice_rows(spec.in_dim, 2 * spec.in_dim);
                    current.linear(&w_self).add(&current.linear(&w_neigh).spmm_left(&ops.unwrap().mean))
                }
                Aggregator::Dense => current.linear(w),
            }
            .add_bias(b);
            let h = if l < last {
                match self.activation {
                    Activation::Relu => h.relu(),
                    Activation::Identity => h,
                }
            } else {
                h
            };
            if h.value().iter().any(|x| !x.is_finite()) {
                return Err(EngineError::NonFiniteActivation { layer: l });
            }
            out = Some(h);
            current = FeatureInput::Dense(h);
        }
        Ok(out.unwrap())
    }

    /// Inference-mode output for dense features.
    pub fn infer(&self, ops: Option<&GraphOps>, x: &Array2<f64>) -> Result<Array2<f64>> {
        let tape = Tape::new();
        let params = self.bind_frozen(&tape);
        let input = FeatureInput::Dense(tape.constant(x.clone()));
        let out = self.forward(&params, ops, input, None)?;
        let v = out.value().clone();
        Ok(v)
    }

    /// Inference-mode output for a constant sparse feature matrix.
    pub fn infer_sparse(&self, ops: Option<&GraphOps>, x: &SparseConst) -> Result<Array2<f64>> {
        let tape = Tape::new();
        let params = self.bind_frozen(&tape);
        let out = self.forward(&params, ops, FeatureInput::Sparse(x.clone()), None)?;
        let v = out.value().clone();
        Ok(v)
    }
}
