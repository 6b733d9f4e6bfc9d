use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::nn::{self, MhaVars, Mode, RunningStats};
use crate::tensor::{Bound, ParamId, ParamStore, Tape, Tensor, Var};

/// How a parameter is initialized when a model is built from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Glorot,
    Zeros,
    Ones,
}

/// Supplies parameter tensors while a model layout is registered: either
/// fresh from an RNG or taken, in order, from a stored [`ParamStore`].
pub(crate) enum Source<'a> {
    Fresh(&'a mut dyn RngCore),
    Stored(std::iter::Peekable<Box<dyn Iterator<Item = (&'a str, &'a Tensor)> + 'a>>),
}

impl<'a> Source<'a> {
    pub(crate) fn stored(store: &'a ParamStore) -> Self {
        let it: Box<dyn Iterator<Item = (&str, &Tensor)>> = Box::new(store.iter());
        Source::Stored(it.peekable())
    }

    /// Errors if a stored source has parameters left over.
    pub(crate) fn finish(mut self) -> Result<()> {
        if let Source::Stored(it) = &mut self {
            if let Some((name, _)) = it.peek() {
                return Err(Error::shape(format!("unexpected extra parameter {name}")));
            }
        }
        Ok(())
    }
}

pub(crate) struct Builder<'a> {
    pub store: ParamStore,
    source: Source<'a>,
}

impl<'a> Builder<'a> {
    pub(crate) fn new(source: Source<'a>) -> Self {
        Self {
            store: ParamStore::new(),
            source,
        }
    }

    pub(crate) fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let t = match &mut self.source {
            Source::Fresh(rng) => match init {
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::full(shape, 1.0),
                Init::Glorot => {
                    let (fan_in, fan_out) = (shape[0], shape[shape.len() - 1]);
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let n = shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
                    Tensor::new(shape.to_vec(), data)?
                }
            },
            Source::Stored(it) => {
                let (stored_name, t) = it
                    .next()
                    .ok_or_else(|| Error::shape(format!("missing parameter {name}")))?;
                if stored_name != name || t.shape() != shape {
                    return Err(Error::shape(format!(
                        "parameter {stored_name} {:?} does not match expected {name} {shape:?}",
                        t.shape()
                    )));
                }
                t.clone()
            }
        };
        Ok(self.store.add(name, t))
    }

    pub(crate) fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<DenseIds> {
        Ok(DenseIds {
            w: self.param(&format!("{name}.w"), &[fan_in, fan_out], Init::Glorot)?,
            b: self.param(&format!("{name}.b"), &[fan_out], Init::Zeros)?,
        })
    }

    pub(crate) fn batch_norm(&mut self, name: &str, channels: usize) -> Result<BnIds> {
        Ok(BnIds {
            gamma: self.param(&format!("{name}.gamma"), &[channels], Init::Ones)?,
            beta: self.param(&format!("{name}.beta"), &[channels], Init::Zeros)?,
            channels,
        })
    }

    pub(crate) fn finish(self) -> Result<ParamStore> {
        self.source.finish()?;
        Ok(self.store)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub(crate) struct DenseIds {
    pub w: ParamId,
    pub b: ParamId,
}

impl DenseIds {
    pub(crate) fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        nn::dense(tape, x, bound.var(self.w), bound.var(self.b))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub(crate) struct BnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
}

impl BnIds {
    pub(crate) fn apply(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        stats: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        nn::batch_norm(tape, x, bound.var(self.gamma), bound.var(self.beta), stats, mode)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub(crate) struct MhaIds {
    pub q: DenseIds,
    pub k: DenseIds,
    pub v: DenseIds,
    pub o: DenseIds,
}

impl MhaIds {
    pub(crate) fn new(b: &mut Builder<'_>, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            q: b.dense(&format!("{name}.q"), d, d)?,
            k: b.dense(&format!("{name}.k"), d, d)?,
            v: b.dense(&format!("{name}.v"), d, d)?,
            o: b.dense(&format!("{name}.o"), d, d)?,
        })
    }

    pub(crate) fn vars(&self, bound: &Bound) -> MhaVars {
        MhaVars {
            wq: bound.var(self.q.w),
            bq: bound.var(self.q.b),
            wk: bound.var(self.k.w),
            bk: bound.var(self.k.b),
            wv: bound.var(self.v.w),
            bv: bound.var(self.v.b),
            wo: bound.var(self.o.w),
            bo: bound.var(self.o.b),
        }
    }
}

/// Randomness and running statistics for one forward pass.
pub(crate) struct Pass<'r> {
    pub mode: Mode,
    pub rng: Option<&'r mut dyn RngCore>,
    pub stats: Vec<RunningStats>,
}

impl Pass<'_> {
    pub(crate) fn dropout(&mut self, tape: &mut Tape, x: Var, rate: f64) -> Result<Var> {
        match (self.mode, self.rng.as_deref_mut()) {
            (Mode::Train, Some(rng)) => nn::dropout(tape, x, rate, Mode::Train, rng),
            (Mode::Train, None) => Err(Error::Contract("train-mode pass without an RNG".into())),
            (Mode::Eval, _) => Ok(x),
        }
    }
}
