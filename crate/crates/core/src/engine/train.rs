use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::GnnModel;
use super::optim::Adam;
use super::tensor::{Tape, Tensor};
use super::{EngineError, Result};
use crate::rng::{seeded, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    pub seed: u64,
}

/// Random streams handed to the objective each epoch.
pub struct TrainStreams {
    pub epoch: usize,
    pub dropout: StreamRng,
    pub sampling: StreamRng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub trace: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, when validating.
    pub best_epoch: Option<usize>,
}

impl TrainOutcome {
    /// `epoch,train_loss,val_metric` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_metric\n");
        for r in &self.trace {
            let val = r.val_metric.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{}", r.epoch, r.train_loss, val).unwrap();
        }
        out
    }

    pub fn final_loss(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.train_loss)
    }
}

/// Pins a closure to the signature `train` expects, so it can be bound to a
/// variable before the call.
pub fn objective<F>(f: F) -> F
where
    F: for<'t> FnMut(&GnnModel, &'t Tape, &[Tensor<'t>], &mut TrainStreams) -> Result<Tensor<'t>>,
{
    f
}

/// Full-batch Adam training. `objective` builds the scalar loss for one
/// epoch on a fresh tape.
///
/// With a `validate` closure (lower is better) the parameters of the best
/// validation epoch are restored at the end; otherwise the final parameters
/// are kept.
pub fn train(
    model: &mut GnnModel,
    cfg: &TrainConfig,
    mut objective: impl for<'t> FnMut(&GnnModel, &'t Tape, &[Tensor<'t>], &mut TrainStreams) -> Result<Tensor<'t>>,
    mut validate: Option<&mut dyn FnMut(&GnnModel) -> Result<f64>>,
) -> Result<TrainOutcome> {
    if cfg.epochs == 0 {
        return Err(EngineError::InvalidConfig("epochs must be >= 1".into()));
    }
    let mut opt = Adam::new(cfg.lr, cfg.weight_decay);
    let mut streams = TrainStreams {
        epoch: 0,
        dropout: seeded(cfg.seed, "train-dropout"),
        sampling: seeded(cfg.seed, "train-sampling"),
    };
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Array2<f64>>)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        streams.epoch = epoch;
        let (loss_value, grads) = {
            let tape = Tape::new();
            let params = model.bind(&tape);
            let loss = objective(model, &tape, &params, &mut streams)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(EngineError::NonFiniteLoss { epoch });
            }
            let grads = tape.backward(&loss)?;
            let grads: Vec<Array2<f64>> = params.iter().map(|p| grads.get_or_zeros(p)).collect();
            (value, grads)
        };
        opt.step(model.params_mut(), &grads);

        let val_metric = match validate.as_deref_mut() {
            Some(f) => Some(f(model)?),
            None => None,
        };
        trace.push(EpochRecord { epoch, train_loss: loss_value, val_metric });
        if let Some(v) = val_metric {
            let improved = best.as_ref().is_none_or(|(b, _, _)| v < *b);
            if improved {
                best = Some((v, epoch, model.params().to_vec()));
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
        }
    }
    let best_epoch = best.map(|(_, epoch, params)| {
        model.params_mut().clone_from_slice(&params);
        epoch
    });
    Ok(TrainOutcome { trace, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{classifier_loss, Activation, Aggregator, FeatureInput, GraphOps};
    use crate::graph::tests::plain;

    fn setup() -> (GnnModel, crate::graph::Graph) {
        let g = plain(4, &[(0, 1), (1, 2), (2, 3)]);
        let g = g.with_labels(vec![Some(0), Some(0), Some(0), Some(0)]).unwrap();
        let mut rng = seeded(9, "init");
        let m = GnnModel::stack(Aggregator::Gcn, &[4, 8, 2], Activation::Relu, 0.5, &mut rng).unwrap();
        (m, g)
    }

    fn fit(seed: u64) -> (GnnModel, TrainOutcome) {
        let (mut m, g) = setup();
        let ops = GraphOps::new(&g);
        let x = g.features().clone();
        let cfg = TrainConfig { epochs: 30, lr: 0.01, weight_decay: 5e-4, patience: None, seed };
        let out = train(
            &mut m,
            &cfg,
            |model: &GnnModel, tape, params: &[Tensor<'_>], s: &mut TrainStreams| {
                let input = FeatureInput::Dense(tape.constant(x.clone()));
                let z = model.forward(params, Some(&ops), input, Some(&mut s.dropout))?;
                classifier_loss(&z, g.labels(), &[0, 1, 2, 3], params, 1e-4)
            },
            None,
        )
        .unwrap();
        (m, out)
    }

    #[test]
    fn deterministic_for_seed() {
        let (a, ta) = fit(3);
        let (b, tb) = fit(3);
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(ta.final_loss() < ta.trace[0].train_loss);
    }

    #[test]
    fn zero_epochs_rejected() {
        let (mut m, _) = setup();
        let cfg = TrainConfig { epochs: 0, lr: 0.01, weight_decay: 0.0, patience: None, seed: 0 };
        let r =
            train(&mut m, &cfg, |_: &GnnModel, _: &Tape, p: &[Tensor<'_>], _: &mut TrainStreams| Ok(p[0].sum()), None);
        assert!(matches!(r, Err(EngineError::InvalidConfig(_))));
    }

    #[test]
    fn non_finite_loss_aborts_with_epoch() {
        let (mut m, _) = setup();
        let cfg = TrainConfig { epochs: 5, lr: 0.01, weight_decay: 0.0, patience: None, seed: 0 };
        let r = train(
            &mut m,
            &cfg,
            |_: &GnnModel, _: &Tape, p: &[Tensor<'_>], s: &mut TrainStreams| {
                let l = p[0].sum();
                Ok(if s.epoch == 2 { l.scale(f64::NAN) } else { l })
            },
            None,
        );
        assert!(matches!(r, Err(EngineError::NonFiniteLoss { epoch: 2 })));
    }

    #[test]
    fn restores_best_validation_epoch() {
        let (mut m, _) = setup();
        let cfg = TrainConfig { epochs: 10, lr: 0.1, weight_decay: 0.0, patience: Some(3), seed: 0 };
        let mut calls = 0;
        let mut snapshots = Vec::new();
        let mut validate = |model: &GnnModel| {
            calls += 1;
            snapshots.push(model.params().to_vec());
            // Best at the second epoch, then worse.
            Ok(if calls == 2 { 0.0 } else { calls as f64 })
        };
        let out = train(
            &mut m,
            &cfg,
            |_: &GnnModel, _: &Tape, p: &[Tensor<'_>], _: &mut TrainStreams| Ok(p[0].sum()),
            Some(&mut validate),
        )
        .unwrap();
        assert_eq!(out.best_epoch, Some(1));
        assert_eq!(out.trace.len(), 5);
        assert_eq!(m.params(), &snapshots[1][..]);
    }
}
