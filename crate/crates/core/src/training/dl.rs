use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batches, check_sets, compute_class_weights, evaluate, stack, weighted_ce_loss};
use super::{Checkpoint, LogRow, Monitor, TrainLog, TrainOutcome};
use crate::dataset::LabeledInstance;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::{OptimizerKind, OptimizerState, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DlTrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub monitor: Monitor,
    /// Decision threshold for validation metrics.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DlTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            epochs: 150,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-4,
            monitor: Monitor::Tss,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl DlTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

/// Minibatch training on class-weighted cross-entropy. After every epoch the
/// monitor metric is computed on `val`; strictly better scores replace the
/// checkpoint.
pub fn train_dl(
    mut model: Model,
    train: &[LabeledInstance],
    val: &[LabeledInstance],
    config: &DlTrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_sets(train, val)?;
    let positives = train.iter().filter(|i| i.y == 1).count();
    let weights = compute_class_weights(&[train.len() - positives, positives])?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<Checkpoint> = None;
    let mut log = TrainLog { unit: "epoch".into(), rows: Vec::new() };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for idx in batches(&order, config.batch_size) {
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape);
            let x = tape.constant(stack(train, idx)?);
            let probs = model.forward_train(&mut tape, &bound, x, &mut rng)?;
            let labels: Vec<u8> = idx.iter().map(|&i| train[i].y).collect();
            let loss = weighted_ce_loss(&mut tape, probs, &labels, &weights)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss in epoch {epoch}")));
            }
            let grads = tape.backward(loss)?;
            let grads = model.params().gradients(&grads, &bound);
            opt.step(model.params_mut(), &grads)
                .map_err(|e| Error::Numerical(format!("epoch {epoch}: {e}")))?;
            loss_sum += value;
            steps += 1;
        }
        let report = evaluate(&model, val, config.threshold)?;
        let score = config.monitor.score(&report);
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(Checkpoint { model: model.clone(), score, index: epoch, monitor: config.monitor });
        }
        log.rows.push(LogRow {
            index: epoch,
            train_loss: Some(loss_sum / steps as f64),
            val_tss: report.tss,
            val_bss: report.bss,
            epsilon: None,
            steps,
        });
    }
    Ok(TrainOutcome {
        checkpoint: best.expect("at least one epoch"),
        log,
    })
}
