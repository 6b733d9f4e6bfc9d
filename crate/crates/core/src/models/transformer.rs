//! Time-series Transformer classifier.
//!
//! Each time step is one token carrying the `F` features of that step. The
//! token projection plus a learned positional table feeds a stack of encoder
//! blocks:
//!
//! ```text
//! x1 = x  + MHA(x)
//! x2 = x1 + MLP(BN(x1))        MLP = Dense-ReLU-Dropout-Dense-Dropout
//! ```
//!
//! and the head flattens the sequence and applies `(BN, Dropout, Dense)`
//! per hidden size, then a final `(BN, Dropout, Dense → 2)` and softmax.

use serde::{Deserialize, Serialize};

use super::layers::{BnIds, Builder, DenseIds, Init, MhaIds, Pass};
use crate::error::{Error, Result};
use crate::tensor::nn::multi_head_attention;
use crate::tensor::{Bound, ParamId, ParamStore, RunningStats, Tape, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub seq_len: usize,
    pub n_features: usize,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub head_hidden: Vec<usize>,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            seq_len: crate::dataset::SERIES_LEN,
            n_features: 10,
            d_model: 16,
            heads: 4,
            encoder_blocks: 4,
            mlp_hidden: 32,
            dropout: 0.1,
            head_hidden: vec![64, 16],
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("seq_len", self.seq_len),
            ("n_features", self.n_features),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("mlp_hidden", self.mlp_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.head_hidden.contains(&0) {
            return Err(Error::config("head hidden sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Block {
    mha: MhaIds,
    bn: BnIds,
    mlp_in: DenseIds,
    mlp_out: DenseIds,
}

#[derive(Debug, Clone)]
pub struct TransformerClassifier {
    config: TransformerConfig,
    params: ParamStore,
    token: DenseIds,
    positions: ParamId,
    blocks: Vec<Block>,
    head_bn: Vec<BnIds>,
    head_dense: Vec<DenseIds>,
    /// Encoder-block norms first, then head norms.
    stats: Vec<RunningStats>,
}

impl TransformerClassifier {
    pub(crate) fn build(config: TransformerConfig, mut b: Builder<'_>) -> Result<Self> {
        config.validate()?;
        let (t, f, d) = (config.seq_len, config.n_features, config.d_model);
        let token = b.dense("token", f, d)?;
        let positions = b.param("positions", &[t, d], Init::Glorot)?;
        let mut blocks = Vec::with_capacity(config.encoder_blocks);
        for i in 0..config.encoder_blocks {
            let name = format!("block{i}");
            blocks.push(Block {
                mha: MhaIds::new(&mut b, &format!("{name}.mha"), d)?,
                bn: b.batch_norm(&format!("{name}.bn"), d)?,
                mlp_in: b.dense(&format!("{name}.mlp_in"), d, config.mlp_hidden)?,
                mlp_out: b.dense(&format!("{name}.mlp_out"), config.mlp_hidden, d)?,
            });
        }
        let mut head_bn = Vec::new();
        let mut head_dense = Vec::new();
        let mut width = t * d;
        for (i, &h) in config.head_hidden.iter().chain(std::iter::once(&2)).enumerate() {
            head_bn.push(b.batch_norm(&format!("head{i}.bn"), width)?);
            head_dense.push(b.dense(&format!("head{i}.dense"), width, h)?);
            width = h;
        }
        let stats = blocks
            .iter()
            .map(|bl| RunningStats::new(bl.bn.channels))
            .chain(head_bn.iter().map(|bn| RunningStats::new(bn.channels)))
            .collect();
        Ok(Self {
            params: b.finish()?,
            config,
            token,
            positions,
            blocks,
            head_bn,
            head_dense,
            stats,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub(crate) fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub(crate) fn stats(&self) -> &[RunningStats] {
        &self.stats
    }

    pub(crate) fn set_stats(&mut self, stats: Vec<RunningStats>) -> Result<()> {
        if stats.len() != self.stats.len()
            || stats
                .iter()
                .zip(&self.stats)
                .any(|(a, b)| a.mean.len() != b.mean.len() || a.var.len() != b.var.len())
        {
            return Err(Error::shape("running statistics do not match model layout"));
        }
        self.stats = stats;
        Ok(())
    }

    /// Class probabilities `[B×2]` for `x: [B×T×F]`.
    pub(crate) fn graph(&self, tape: &mut Tape, bound: &Bound, x: Var, pass: &mut Pass<'_>) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        let c = &self.config;
        if shape.len() != 3 || shape[1] != c.seq_len || shape[2] != c.n_features {
            return Err(Error::shape(format!(
                "expected [B, {}, {}] input, got {shape:?}",
                c.seq_len, c.n_features
            )));
        }
        let batch = shape[0];
        let mut h = self.token.apply(tape, bound, x)?;
        h = tape.add_tiled(h, bound.var(self.positions))?;

        for (i, block) in self.blocks.iter().enumerate() {
            let att = multi_head_attention(tape, h, &block.mha.vars(bound), c.heads)?;
            let x1 = tape.add(h, att.output)?;
            let n = block.bn.apply(tape, bound, x1, &mut pass.stats[i], pass.mode)?;
            let m = block.mlp_in.apply(tape, bound, n)?;
            let m = tape.relu(m);
            let m = pass.dropout(tape, m, c.dropout)?;
            let m = block.mlp_out.apply(tape, bound, m)?;
            let m = pass.dropout(tape, m, c.dropout)?;
            h = tape.add(x1, m)?;
        }

        let mut z = tape.reshape(h, vec![batch, c.seq_len * c.d_model])?;
        let last = self.head_dense.len() - 1;
        let offset = self.blocks.len();
        for (i, (bn, dense)) in self.head_bn.iter().zip(&self.head_dense).enumerate() {
            z = bn.apply(tape, bound, z, &mut pass.stats[offset + i], pass.mode)?;
            z = pass.dropout(tape, z, c.dropout)?;
            z = dense.apply(tape, bound, z)?;
            if i != last {
                z = tape.relu(z);
            }
        }
        Ok(tape.softmax_rows(z))
    }
}
