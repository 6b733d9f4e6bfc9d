use serde::{Deserialize, Serialize};

use super::layers::{Builder, DenseIds, Pass};
use crate::error::{Error, Result};
use crate::tensor::{Bound, ParamStore, Tape, Var};

/// Fully connected baseline over the flattened `T·F` series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub seq_len: usize,
    pub n_features: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            seq_len: crate::dataset::SERIES_LEN,
            n_features: 10,
            hidden: vec![32],
            dropout: 0.1,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.n_features == 0 || self.hidden.contains(&0) {
            return Err(Error::config("MLP sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MlpClassifier {
    config: MlpConfig,
    params: ParamStore,
    layers: Vec<DenseIds>,
}

impl MlpClassifier {
    pub(crate) fn build(config: MlpConfig, mut b: Builder<'_>) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        let mut width = config.seq_len * config.n_features;
        for (i, &h) in config.hidden.iter().chain(std::iter::once(&2)).enumerate() {
            layers.push(b.dense(&format!("dense{i}"), width, h)?);
            width = h;
        }
        Ok(Self {
            params: b.finish()?,
            config,
            layers,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub(crate) fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub(crate) fn graph(&self, tape: &mut Tape, bound: &Bound, x: Var, pass: &mut Pass<'_>) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        let c = &self.config;
        if shape.len() != 3 || shape[1] != c.seq_len || shape[2] != c.n_features {
            return Err(Error::shape(format!(
                "expected [B, {}, {}] input, got {shape:?}",
                c.seq_len, c.n_features
            )));
        }
        let mut z = tape.reshape(x, vec![shape[0], c.seq_len * c.n_features])?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            z = layer.apply(tape, bound, z)?;
            if i != last {
                z = tape.relu(z);
                z = pass.dropout(tape, z, c.dropout)?;
            }
        }
        Ok(tape.softmax_rows(z))
    }
}
