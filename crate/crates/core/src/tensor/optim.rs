use serde::{Deserialize, Serialize};

use super::array::Tensor;
use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Named learnable tensors of a model, in registration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(self.values.iter().map(|v| tape.param(v.clone())).collect())
    }

    /// Collects per-parameter gradients (zeros for unreached parameters).
    pub fn gradients(&self, grads: &Gradients, bound: &Bound) -> Vec<Tensor> {
        self.values
            .iter()
            .zip(&bound.0)
            .map(|(v, &var)| grads.get_or_zeros(var, v))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// SGD or Adam state for one parameter store.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            let id = ParamId(i);
            if g.shape() != params.get(id).shape() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    params.name(id),
                    params.get(id).shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for parameter {}",
                    params.name(id)
                )));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (i, g) in grads.iter().enumerate() {
                    let p = params.get_mut(ParamId(i)).data_mut();
                    for (pv, gv) in p.iter_mut().zip(g.data()) {
                        *pv -= self.lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.v = self.m.clone();
                }
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for (i, g) in grads.iter().enumerate() {
                    let p = params.get_mut(ParamId(i)).data_mut();
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..p.len() {
                        let gj = g.data()[j];
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                        let mhat = m[j] / c1;
                        let vhat = v[j] / c2;
                        p[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::scalar(v));
        s
    }

    #[test]
    fn sgd_step() {
        let mut s = scalar_store(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1);
        opt.step(&mut s, &[Tensor::scalar(2.0)]).unwrap();
        assert!((s.get(ParamId(0)).data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_closed_form() {
        for g in [3.0, -0.25] {
            let mut s = scalar_store(0.0);
            let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01);
            opt.step(&mut s, &[Tensor::scalar(g)]).unwrap();
            let expected = -0.01 * g / (f64::abs(g) + ADAM_EPS);
            assert!((s.get(ParamId(0)).data()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_on_parabola_decreases_after_warmup() {
        let mut s = scalar_store(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.1);
        let mut trace = vec![1.0];
        for _ in 0..50 {
            let p = s.get(ParamId(0)).data()[0];
            opt.step(&mut s, &[Tensor::scalar(2.0 * p)]).unwrap();
            trace.push(s.get(ParamId(0)).data()[0].abs());
        }
        // warmup: the first steps move at ~lr per step; |p| shrinks until it
        // first overshoots zero
        let first_cross = trace.windows(2).position(|w| w[1] > w[0]).unwrap_or(trace.len());
        assert!(first_cross >= 8, "monotone phase ended at step {first_cross}");
        assert!(trace[..=first_cross].windows(2).all(|w| w[1] < w[0]));
        // afterwards momentum overshoots; the oscillation peaks must shrink
        let peaks: Vec<f64> = trace
            .windows(3)
            .filter(|w| w[1] > w[0] && w[1] >= w[2])
            .map(|w| w[1])
            .collect();
        assert!(peaks.len() >= 2);
        assert!(peaks.windows(2).all(|w| w[1] < w[0]), "peaks {peaks:?}");
        assert!(*trace.last().unwrap() < 0.01);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.1);
        let err = opt.step(&mut s, &[Tensor::scalar(f64::NAN)]).unwrap_err();
        assert!(err.to_string().contains('p'));
        assert_eq!(s.get(ParamId(0)).data()[0], 1.0);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = scalar_store(1.0);
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1);
        assert!(opt.step(&mut s, &[Tensor::zeros(&[2])]).is_err());
    }
}
