use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{assign_reward, cdr_loss, check_sets, decay_epsilon, evaluate, select_action, stack};
use super::{Checkpoint, LogRow, Monitor, ReplayEntry, ReplayMemory, Rewards, TrainLog, TrainOutcome};
use crate::dataset::LabeledInstance;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::{OptimizerKind, OptimizerState, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdrTrainConfig {
    pub rewards: Rewards,
    pub batch_size: usize,
    pub episodes: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    /// Multiplier applied to epsilon after each episode.
    pub epsilon_decay: f64,
    pub replay_capacity: usize,
    pub monitor: Monitor,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for CdrTrainConfig {
    fn default() -> Self {
        Self {
            rewards: Rewards::default(),
            batch_size: 49,
            episodes: 8,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1.5e-4,
            epsilon_start: 1.0,
            epsilon_decay: 0.99,
            replay_capacity: 1000,
            monitor: Monitor::Tss,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl CdrTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.rewards.validate()?;
        if self.batch_size == 0 || self.episodes == 0 {
            return Err(Error::config("batch_size and episodes must be at least 1"));
        }
        if self.replay_capacity < self.batch_size {
            return Err(Error::config(format!(
                "replay capacity {} is smaller than batch size {}",
                self.replay_capacity, self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_decay) {
            return Err(Error::config("epsilon_start and epsilon_decay must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }
}

/// The class-dependent-reward loop.
///
/// Each episode visits the training ARs in shuffled order. For every AR the
/// eval-mode probability drives an epsilon-greedy action, whose reward is
/// stored with the state in replay memory. Once the memory holds more than
/// `batch_size` entries, every visited AR triggers one optimizer step on a
/// uniformly sampled batch. The memory persists across episodes; epsilon
/// decays at each episode boundary.
pub fn train_cdr(
    mut model: Model,
    train: &[LabeledInstance],
    val: &[LabeledInstance],
    config: &CdrTrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_sets(train, val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate);
    let mut memory = ReplayMemory::new(config.replay_capacity)?;
    let mut epsilon = config.epsilon_start;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<Checkpoint> = None;
    let mut log = TrainLog { unit: "episode".into(), rows: Vec::new() };

    for episode in 1..=config.episodes {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for &i in &order {
            let p = model.predict_proba(&train[i].x)?;
            let action = select_action(p, epsilon, &mut rng);
            let reward = assign_reward(action, train[i].y, &config.rewards);
            memory.push(ReplayEntry { state: i, action, reward });
            if memory.len() <= config.batch_size {
                continue;
            }
            let batch = memory.sample(config.batch_size, &mut rng)?;
            let idx: Vec<usize> = batch.iter().map(|e| e.state).collect();
            let actions: Vec<u8> = batch.iter().map(|e| e.action).collect();
            let rewards: Vec<f64> = batch.iter().map(|e| e.reward).collect();

            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape);
            let x = tape.constant(stack(train, &idx)?);
            let probs = model.forward_train(&mut tape, &bound, x, &mut rng)?;
            let loss = cdr_loss(&mut tape, probs, &actions, &rewards)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss in episode {episode}")));
            }
            let grads = tape.backward(loss)?;
            let grads = model.params().gradients(&grads, &bound);
            opt.step(model.params_mut(), &grads)
                .map_err(|e| Error::Numerical(format!("episode {episode}: {e}")))?;
            loss_sum += value;
            steps += 1;
        }
        let used = epsilon;
        epsilon = decay_epsilon(epsilon, config.epsilon_decay);

        let report = evaluate(&model, val, config.threshold)?;
        let score = config.monitor.score(&report);
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(Checkpoint { model: model.clone(), score, index: episode, monitor: config.monitor });
        }
        log.rows.push(LogRow {
            index: episode,
            train_loss: (steps > 0).then(|| loss_sum / steps as f64),
            val_tss: report.tss,
            val_bss: report.bss,
            epsilon: Some(used),
            steps,
        });
    }
    Ok(TrainOutcome {
        checkpoint: best.expect("at least one episode"),
        log,
    })
}
