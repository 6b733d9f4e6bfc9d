//! Classifiers mapping a standardized `T×F` series to two class probabilities.

mod layers;
mod mlp;
mod transformer;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use mlp::{MlpClassifier, MlpConfig};
pub use transformer::{TransformerClassifier, TransformerConfig};

use crate::error::{Error, Result};
use crate::tensor::{Bound, Mode, ParamStore, RunningStats, Tape, Tensor, Var};
use layers::{Builder, Pass, Source};

/// Index of the positive (≥M) class in model outputs.
pub const POSITIVE: usize = 1;

/// Instances per tape in batched prediction.
const PREDICT_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Transformer(TransformerConfig),
    Mlp(MlpConfig),
}

impl ModelConfig {
    pub fn input_shape(&self) -> (usize, usize) {
        match self {
            ModelConfig::Transformer(c) => (c.seq_len, c.n_features),
            ModelConfig::Mlp(c) => (c.seq_len, c.n_features),
        }
    }

    /// Same architecture with a different number of input features.
    pub fn with_features(&self, n_features: usize) -> Self {
        let mut c = self.clone();
        match &mut c {
            ModelConfig::Transformer(t) => t.n_features = n_features,
            ModelConfig::Mlp(m) => m.n_features = n_features,
        }
        c
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Transformer(TransformerConfig::default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelSnapshot", into = "ModelSnapshot")]
pub enum Model {
    Transformer(TransformerClassifier),
    Mlp(MlpClassifier),
}

/// Serialized form: configuration, flat parameters and norm statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub running_stats: Vec<RunningStats>,
}

impl From<Model> for ModelSnapshot {
    fn from(m: Model) -> Self {
        ModelSnapshot {
            config: m.config(),
            params: m.params().clone(),
            running_stats: m.running_stats().to_vec(),
        }
    }
}

impl TryFrom<ModelSnapshot> for Model {
    type Error = Error;

    fn try_from(s: ModelSnapshot) -> Result<Self> {
        let source = Source::stored(&s.params);
        let mut model = Model::build(&s.config, Builder::new(source))?;
        match &mut model {
            Model::Transformer(t) => t.set_stats(s.running_stats)?,
            Model::Mlp(_) if !s.running_stats.is_empty() => {
                return Err(Error::shape("MLP has no normalization statistics"))
            }
            Model::Mlp(_) => {}
        }
        Ok(model)
    }
}

impl Model {
    /// Fresh model: Glorot-uniform weights, zero biases, unit BN scale.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, Builder::new(Source::Fresh(&mut rng)))
    }

    fn build(config: &ModelConfig, b: Builder<'_>) -> Result<Self> {
        Ok(match config {
            ModelConfig::Transformer(c) => Model::Transformer(TransformerClassifier::build(c.clone(), b)?),
            ModelConfig::Mlp(c) => Model::Mlp(MlpClassifier::build(c.clone(), b)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Transformer(m) => ModelConfig::Transformer(m.config().clone()),
            Model::Mlp(m) => ModelConfig::Mlp(m.config().clone()),
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::Transformer(m) => m.params(),
            Model::Mlp(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Transformer(m) => m.params_mut(),
            Model::Mlp(m) => m.params_mut(),
        }
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        match self {
            Model::Transformer(m) => m.stats(),
            Model::Mlp(_) => &[],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().count()
    }

    fn graph(&self, tape: &mut Tape, bound: &Bound, x: Var, pass: &mut Pass<'_>) -> Result<Var> {
        match self {
            Model::Transformer(m) => m.graph(tape, bound, x, pass),
            Model::Mlp(m) => m.graph(tape, bound, x, pass),
        }
    }

    /// Train-mode probabilities `[B×2]`; batch-norm running statistics are
    /// updated from this batch.
    pub fn forward_train(&mut self, tape: &mut Tape, bound: &Bound, x: Var, rng: &mut dyn RngCore) -> Result<Var> {
        let mut pass = Pass {
            mode: Mode::Train,
            rng: Some(rng),
            stats: self.running_stats().to_vec(),
        };
        let out = self.graph(tape, bound, x, &mut pass)?;
        if let Model::Transformer(t) = self {
            t.set_stats(pass.stats)?;
        }
        Ok(out)
    }

    /// Eval-mode probabilities `[B×2]`.
    pub fn forward_eval(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mut pass = Pass {
            mode: Mode::Eval,
            rng: None,
            stats: self.running_stats().to_vec(),
        };
        self.graph(tape, bound, x, &mut pass)
    }

    /// Eval-mode class probabilities for each instance, `[n][2]`.
    pub fn predict_distribution(&self, xs: &[&Tensor]) -> Result<Vec<[f64; 2]>> {
        let mut out = Vec::with_capacity(xs.len());
        for chunk in xs.chunks(PREDICT_CHUNK) {
            let mut tape = Tape::new();
            let bound = self.params().bind(&mut tape);
            let x = tape.constant(Tensor::stack(chunk)?);
            let probs = self.forward_eval(&mut tape, &bound, x)?;
            out.extend(tape.value(probs).data().chunks(2).map(|r| [r[0], r[1]]));
        }
        Ok(out)
    }

    /// Positive-class probability for each instance (eval mode).
    pub fn predict_proba_batch(&self, xs: &[&Tensor]) -> Result<Vec<f64>> {
        Ok(self
            .predict_distribution(xs)?
            .into_iter()
            .map(|p| p[POSITIVE])
            .collect())
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<f64> {
        Ok(self.predict_proba_batch(&[x])?[0])
    }

    pub fn predict(&self, x: &Tensor, threshold: f64) -> Result<u8> {
        decide(self.predict_proba(x)?, threshold)
    }
}

/// Threshold rule shared by prediction and evaluation: positive iff `p ≥ θ`.
pub fn decide(p: f64, threshold: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config(format!("threshold {threshold} outside [0, 1]")));
    }
    Ok(u8::from(p >= threshold))
}
