//! Trainers: weighted cross-entropy with checkpoint-on-best-validation, and
//! the class-dependent-reward loop with epsilon-greedy actions and
//! experience replay.

mod cdr;
mod dl;
mod replay;
mod sweep;

pub use cdr::{train_cdr, CdrTrainConfig};
pub use dl::{train_dl, DlTrainConfig};
pub use replay::{ReplayEntry, ReplayMemory};
pub use sweep::{cell_seed, parse_range, sweep_rewards, train_and_test, write_sweep_csv, RewardKind, SweepRow};

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{CvSplit, Dataset, LabeledInstance, StandardizationStats};
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::models::Model;
use crate::tensor::{Tape, Tensor, Var};

/// Lower clamp for probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Smallest exploration rate reached by decay.
pub const EPSILON_FLOOR: f64 = 0.01;

/// `ω_k = N / (K · N_k)` for class counts `N_k`.
pub fn compute_class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::config(format!("class weights need every class present, got counts {counts:?}")));
    }
    let total: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts.iter().map(|&n| total as f64 / (k * n as f64)).collect())
}

/// `−Σₙ ω_{yₙ} ln ŷ_{n,yₙ}` over a `[B×2]` probability node.
pub fn weighted_ce_loss(tape: &mut Tape, probs: Var, labels: &[u8], weights: &[f64]) -> Result<Var> {
    let mut coeff = Vec::with_capacity(labels.len());
    for &y in labels {
        let w = weights
            .get(usize::from(y))
            .ok_or_else(|| Error::Contract(format!("label {y} has no class weight")))?;
        coeff.push(-w);
    }
    tape.log_pick(probs, labels.iter().map(|&y| usize::from(y)).collect(), coeff, PROB_FLOOR)
}

/// `−Σₙ Rₙ ln Q(Sₙ, Aₙ)`, where `Q` is the probability of the action taken.
pub fn cdr_loss(tape: &mut Tape, probs: Var, actions: &[u8], rewards: &[f64]) -> Result<Var> {
    if actions.len() != rewards.len() {
        return Err(Error::shape(format!("{} actions for {} rewards", actions.len(), rewards.len())));
    }
    tape.log_pick(
        probs,
        actions.iter().map(|&a| usize::from(a)).collect(),
        rewards.iter().map(|r| -r).collect(),
        PROB_FLOOR,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rewards {
    pub tp: f64,
    pub tn: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl Default for Rewards {
    fn default() -> Self {
        Self { tp: 10.0, tn: 4.0, fp: -20.0, fn_: -15.0 }
    }
}

impl Rewards {
    pub fn validate(&self) -> Result<()> {
        if !(self.tp > 0.0 && self.tn > 0.0) {
            return Err(Error::config(format!("TP and TN rewards must be positive, got {} and {}", self.tp, self.tn)));
        }
        if !(self.fp < 0.0 && self.fn_ < 0.0) {
            return Err(Error::config(format!("FP and FN rewards must be negative, got {} and {}", self.fp, self.fn_)));
        }
        Ok(())
    }
}

/// Immediate reward for taking `action` on an instance with `label`.
pub fn assign_reward(action: u8, label: u8, rewards: &Rewards) -> f64 {
    match (action == 1, label == 1) {
        (true, true) => rewards.tp,
        (false, false) => rewards.tn,
        (true, false) => rewards.fp,
        (false, true) => rewards.fn_,
    }
}

/// Epsilon-greedy: with probability `epsilon` a uniform action, otherwise
/// the greedy one (`p ≥ 0.5`).
pub fn select_action<R: Rng + ?Sized>(p: f64, epsilon: f64, rng: &mut R) -> u8 {
    if rng.random::<f64>() < epsilon {
        u8::from(rng.random_bool(0.5))
    } else {
        u8::from(p >= 0.5)
    }
}

/// Exploration rate after one more episode boundary. Rates already at or
/// below the floor are left unchanged.
pub fn decay_epsilon(epsilon: f64, decay: f64) -> f64 {
    if epsilon <= EPSILON_FLOOR {
        epsilon
    } else {
        (epsilon * decay).max(EPSILON_FLOOR)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    #[default]
    Tss,
    Bss,
}

impl Monitor {
    pub fn score(self, report: &MetricReport) -> f64 {
        match self {
            Monitor::Tss => report.tss,
            Monitor::Bss => report.bss,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Monitor::Tss => "tss",
            Monitor::Bss => "bss",
        }
    }
}

/// Best model seen during training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: Model,
    pub score: f64,
    /// 1-based epoch or episode at which the model was saved.
    pub index: usize,
    pub monitor: Monitor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub index: usize,
    /// Mean loss per optimizer step; `None` when no step was taken.
    pub train_loss: Option<f64>,
    pub val_tss: f64,
    pub val_bss: f64,
    /// Exploration rate used during the episode (CDR only).
    pub epsilon: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// `epoch` or `episode`.
    pub unit: String,
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([self.unit.as_str(), "train_loss", "val_tss", "val_bss", "epsilon", "steps"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.index.to_string(),
                opt(r.train_loss),
                r.val_tss.to_string(),
                r.val_bss.to_string(),
                opt(r.epsilon),
                r.steps.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

/// Standardized train/validation/test instances of one split.
#[derive(Debug, Clone)]
pub struct FoldData {
    pub train: Vec<LabeledInstance>,
    pub val: Vec<LabeledInstance>,
    pub test: Vec<LabeledInstance>,
}

/// Fits standardization on the training ARs and applies it to all three sets.
pub fn prepare_fold(dataset: &Dataset, split: &CvSplit) -> Result<(FoldData, StandardizationStats)> {
    let train = dataset.select(&split.train)?;
    let stats = StandardizationStats::fit(&train)?;
    let fold = FoldData {
        train: stats.apply_all(&train)?,
        val: stats.apply_all(&dataset.select(&split.val)?)?,
        test: stats.apply_all(&dataset.select(&split.test)?)?,
    };
    Ok((fold, stats))
}

/// Eval-mode metrics of `model` on `instances`.
pub fn evaluate(model: &Model, instances: &[LabeledInstance], threshold: f64) -> Result<MetricReport> {
    let xs: Vec<&Tensor> = instances.iter().map(|i| &i.x).collect();
    let probs = model.predict_proba_batch(&xs)?;
    let labels: Vec<u8> = instances.iter().map(|i| i.y).collect();
    MetricReport::compute(&probs, &labels, threshold)
}

/// Training batches of size `batch`; a trailing singleton joins the
/// previous batch so batch statistics are always defined.
fn batches(order: &[usize], batch: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let prev = out.pop().map_or(0, <[usize]>::len);
        out.push(&order[order.len() - 1 - prev..]);
    }
    out
}

fn stack(instances: &[LabeledInstance], idx: &[usize]) -> Result<Tensor> {
    let xs: Vec<&Tensor> = idx.iter().map(|&i| &instances[i].x).collect();
    Tensor::stack(&xs)
}

fn check_sets(train: &[LabeledInstance], val: &[LabeledInstance]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::config("training and validation sets must be non-empty"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn class_weight_cases() {
        assert_eq!(compute_class_weights(&[50, 50]).unwrap(), vec![1.0, 1.0]);
        let w = compute_class_weights(&[90, 10]).unwrap();
        assert!((w[0] - 0.5555555555555556).abs() < 1e-15 && w[1] == 5.0);
        assert!(compute_class_weights(&[4, 0]).is_err());
    }

    #[test]
    fn reward_table() {
        let r = Rewards::default();
        assert_eq!(assign_reward(1, 1, &r), 10.0);
        assert_eq!(assign_reward(0, 0, &r), 4.0);
        assert_eq!(assign_reward(1, 0, &r), -20.0);
        assert_eq!(assign_reward(0, 1, &r), -15.0);
        assert!(Rewards { tp: 0.0, ..r }.validate().is_err());
        assert!(Rewards { fn_: 1.0, ..r }.validate().is_err());
    }

    #[test]
    fn greedy_and_decay() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| select_action(0.9, 0.0, &mut rng) == 1));
        assert!((0..100).all(|_| select_action(0.1, 0.0, &mut rng) == 0));
        let eps = (0..8).fold(1.0, |e, _| decay_epsilon(e, 0.99));
        assert!((eps - 0.99f64.powi(8)).abs() < 1e-15);
        assert!((eps - 0.9227).abs() < 1e-4);
        assert_eq!(decay_epsilon(0.011, 0.5), EPSILON_FLOOR);
        assert_eq!(decay_epsilon(0.0, 0.5), 0.0);
    }

    #[test]
    fn singleton_batches_merge() {
        let order: Vec<usize> = (0..21).collect();
        let b = batches(&order, 10);
        assert_eq!(b.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![10, 11]);
        let b = batches(&order[..20], 10);
        assert_eq!(b.len(), 2);
        assert_eq!(batches(&order[..1], 10).len(), 1);
        let b = batches(&order[..7], 3);
        assert_eq!(b.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![3, 4]);
    }
}
