//! Full-batch training with early stopping on validation F1-micro.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::{split, HeteroGraph, Split};
use crate::metrics::f1_scores;
use crate::model::{argmax_rows, Model};
use crate::optim::Adam;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_f1_micro: f64,
    pub val_f1_macro: f64,
    pub wall_ms: f64,
}

impl EpochRecord {
    /// Equality of everything except wall-clock time.
    pub fn same_metrics(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.val_loss.to_bits() == other.val_loss.to_bits()
            && self.val_f1_micro.to_bits() == other.val_f1_micro.to_bits()
            && self.val_f1_macro.to_bits() == other.val_f1_macro.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub predictions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: Model,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: Evaluation,
    pub split: Split,
}

fn labels_of(graph: &HeteroGraph, nodes: &[usize]) -> Result<Vec<usize>> {
    nodes
        .iter()
        .map(|&v| {
            graph
                .labels()
                .get(v)
                .copied()
                .flatten()
                .ok_or_else(|| Error::Config(format!("node {v} has no label")))
        })
        .collect()
}

/// Scores already-computed `[N, C]` logits on `nodes`.
pub fn evaluate_logits(
    logits: &Tensor,
    graph: &HeteroGraph,
    nodes: &[usize],
) -> Result<Evaluation> {
    let truth = labels_of(graph, nodes)?;
    let mut tape = Tape::new();
    let all = tape.constant(logits.clone());
    let rows = tape.gather_rows(all, nodes)?;
    let loss = tape.softmax_cross_entropy(rows, &truth)?;
    let predictions = argmax_rows(tape.value(rows));
    let (f1_micro, f1_macro) = f1_scores(&predictions, &truth, logits.cols())?;
    Ok(Evaluation {
        loss: tape.value(loss).data()[0],
        f1_micro,
        f1_macro,
        predictions,
    })
}

pub fn evaluate(model: &Model, graph: &HeteroGraph, nodes: &[usize]) -> Result<Evaluation> {
    evaluate_logits(&model.logits(graph)?, graph, nodes)
}

/// Splits the labeled nodes by `config` and trains.
pub fn train(graph: &HeteroGraph, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let split = split(graph, config.ratios(), config.seed)?;
    train_on_split(graph, config, split)
}

pub fn train_on_split(
    graph: &HeteroGraph,
    config: &TrainConfig,
    split: Split,
) -> Result<TrainOutcome> {
    let model = Model::init(config, graph)?;
    train_model(graph, model, split)
}

/// Trains an existing model. Stops after `max_epochs` or once validation
/// F1-micro has not strictly improved for `patience` epochs, and returns the
/// earliest snapshot with the best validation score.
pub fn train_model(graph: &HeteroGraph, mut model: Model, split: Split) -> Result<TrainOutcome> {
    let config = model.config.clone();
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Config(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let train_labels = labels_of(graph, &split.train)?;
    let names: Vec<String> = model.param_specs().into_iter().map(|s| s.name).collect();
    let mut adam = Adam::new(config.lr, model.params().iter().map(|t| t.shape()));
    let mut records = Vec::new();
    let mut best: Option<(usize, Model, Evaluation)> = None;
    let mut stale = 0;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let mut tape = Tape::new();
        let pass = model.forward(&mut tape, graph, true)?;
        let rows = tape.gather_rows(pass.logits, &split.train)?;
        let loss = tape.softmax_cross_entropy(rows, &train_labels)?;
        let train_loss = tape.value(loss).data()[0];
        if !train_loss.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        tape.backward(loss)?;
        let mut grads = Vec::with_capacity(pass.params.len());
        for (name, &var) in names.iter().zip(&pass.params) {
            let grad = match tape.grad(var) {
                Some(g) => g.clone(),
                None => Tensor::zeros(tape.shape(var)),
            };
            if !grad.is_finite() {
                return Err(Error::NonFinite {
                    what: "gradient",
                    epoch,
                    param: name.clone(),
                });
            }
            grads.push(grad);
        }
        drop(tape);
        adam.step(model.params_mut(), &grads)?;
        for name in model.repair_projections(epoch as u64)? {
            log::warn!("epoch {epoch}: projection {name} collapsed and was redrawn");
        }

        let val = evaluate(&model, graph, &split.val)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: val.loss,
            val_f1_micro: val.f1_micro,
            val_f1_macro: val.f1_macro,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        log::debug!(
            "epoch {epoch}: train loss {train_loss:.5}, val loss {:.5}, val f1 {:.4}/{:.4}",
            record.val_loss,
            record.val_f1_micro,
            record.val_f1_macro
        );
        records.push(record);

        if best
            .as_ref()
            .is_none_or(|(_, _, b)| val.f1_micro > b.f1_micro)
        {
            best = Some((epoch, model.clone(), val));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (best_epoch, model, best_val) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        records,
        best_epoch,
        best_val,
        split,
    })
}
