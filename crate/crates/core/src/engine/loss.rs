use std::rc::Rc;

use ndarray::Array2;

use super::tensor::Tensor;
use super::{EngineError, Result};

/// `sum ||p||^2` over all parameter tensors.
pub fn l2_penalty<'t>(params: &[Tensor<'t>]) -> Option<Tensor<'t>> {
    params.iter().map(|p| p.squared_sum()).reduce(|a, b| a.add(&b))
}

fn with_penalty<'t>(loss: Tensor<'t>, params: &[Tensor<'t>], coef: f64) -> Tensor<'t> {
    match l2_penalty(params) {
        Some(p) if coef != 0.0 => loss.add(&p.scale(coef)),
        _ => loss,
    }
}

/// Mean BCE of `sigmoid(z_i . z_j)` against 1 for `pos` and 0 for `neg`,
/// plus `lambda * ||params||^2`.
pub fn link_predictor_loss<'t>(
    z_link: &Tensor<'t>,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
    params: &[Tensor<'t>],
    lambda: f64,
) -> Result<Tensor<'t>> {
    if pos.is_empty() {
        return Err(EngineError::EmptyEdges);
    }
    if pos.len() != neg.len() {
        return Err(EngineError::EdgeCountMismatch { pos: pos.len(), neg: neg.len() });
    }
    let pairs: Vec<(usize, usize)> = pos.iter().chain(neg).copied().collect();
    let total = pairs.len();
    let targets: Vec<f64> = (0..total).map(|k| if k < pos.len() { 1.0 } else { 0.0 }).collect();
    let logits = z_link.pair_dot(Rc::new(pairs));
    let bce = logits.bce_with_logits(Rc::new(targets), Rc::new(vec![1.0 / total as f64; total]));
    Ok(with_penalty(bce, params, lambda))
}

/// Mean softmax cross-entropy over the masked nodes plus `mu * ||params||^2`.
pub fn classifier_loss<'t>(
    z_label: &Tensor<'t>,
    labels: &[Option<usize>],
    mask: &[usize],
    params: &[Tensor<'t>],
    mu: f64,
) -> Result<Tensor<'t>> {
    if mask.is_empty() {
        return Err(EngineError::EmptyMask);
    }
    let targets = mask
        .iter()
        .map(|&v| labels[v].map(|c| (v, c)).ok_or(EngineError::UnlabeledInMask(v)))
        .collect::<Result<Vec<_>>>()?;
    let ce = z_label.softmax_cross_entropy(Rc::new(targets));
    Ok(with_penalty(ce, params, mu))
}

/// Row-wise argmax of the logits, lowest class index on ties.
pub fn predict_labels(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
