//! Layer-level building blocks composed from tape primitives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Forward-pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Running mean/variance of a batch-norm layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// Exponential moving average towards a batch's moments.
    pub fn update(&mut self, mean: &[f64], var: &[f64]) {
        for (r, m) in self.mean.iter_mut().zip(mean) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
        }
        for (r, v) in self.var.iter_mut().zip(var) {
            *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v;
        }
    }
}

/// `x·W + b` over the last axis of `x`; leading axes are preserved.
pub fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let inner = *shape.last().expect("non-empty shape");
    let rows = tape.value(x).len() / inner;
    let x2 = if shape.len() == 2 {
        x
    } else {
        tape.reshape(x, vec![rows, inner])?
    };
    let y = tape.matmul(x2, w)?;
    let y = tape.add_tiled(y, b)?;
    if shape.len() == 2 {
        return Ok(y);
    }
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = tape.value(w).cols();
    tape.reshape(y, out_shape)
}

/// Batch normalization over every row of `x` (channels = last axis).
///
/// In train mode the batch statistics are used and `stats` is moved towards
/// them; in eval mode `stats` is used as-is.
pub fn batch_norm(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<Var> {
    if tape.value(x).is_empty() {
        return Err(Error::shape("batch norm on an empty batch"));
    }
    match mode {
        Mode::Train => {
            let (y, moments) = tape.batch_norm_train(x, gamma, beta, BN_EPS)?;
            stats.update(&moments.mean, &moments.var);
            Ok(y)
        }
        Mode::Eval => tape.batch_norm_eval(x, gamma, beta, &stats.mean, &stats.var, BN_EPS),
    }
}

/// Inverted dropout. Identity in eval mode or at rate 0.
pub fn dropout<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let n = tape.value(x).len();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    tape.mask_mul(x, mask)
}

/// Tape handles for one multi-head attention layer. Weights are `[d×d]`,
/// biases `[d]`.
#[derive(Debug, Clone, Copy)]
pub struct MhaVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub output: Var,
    /// `[B·h, T, T]`; row `(b, head, query)` holds that query's weights.
    pub weights: Var,
}

/// Scaled dot-product self-attention over `x: [B×T×d]` with `heads` heads.
pub fn multi_head_attention(tape: &mut Tape, x: Var, p: &MhaVars, heads: usize) -> Result<Attention> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::shape(format!("attention input must be [B,T,d], got {shape:?}")));
    }
    let (b, t, d) = (shape[0], shape[1], shape[2]);
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!("model width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;

    let split = |tape: &mut Tape, w: Var, bias: Var| -> Result<Var> {
        let y = dense(tape, x, w, bias)?;
        let y = tape.reshape(y, vec![b, t, heads, dh])?;
        let y = tape.permute(y, vec![0, 2, 1, 3])?;
        tape.reshape(y, vec![b * heads, t, dh])
    };
    let q = split(tape, p.wq, p.bq)?;
    let k = split(tape, p.wk, p.bk)?;
    let v = split(tape, p.wv, p.bv)?;

    let scores = tape.batch_matmul(q, k, true)?;
    let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    let weights = tape.softmax_rows(scores);
    let ctx = tape.batch_matmul(weights, v, false)?;
    let ctx = tape.reshape(ctx, vec![b, heads, t, dh])?;
    let ctx = tape.permute(ctx, vec![0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, vec![b, t, d])?;
    let output = dense(tape, ctx, p.wo, p.bo)?;
    Ok(Attention { output, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn mha_vars(tape: &mut Tape, d: usize, rng: &mut ChaCha8Rng) -> MhaVars {
        let mut p = |s: &[usize]| tape.param(random(s, rng));
        MhaVars {
            wq: p(&[d, d]),
            bq: p(&[d]),
            wk: p(&[d, d]),
            bk: p(&[d]),
            wv: p(&[d, d]),
            bv: p(&[d]),
            wo: p(&[d, d]),
            bo: p(&[d]),
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let x = tape.constant(random(&[2, 1, 4], &mut rng));
        let p = mha_vars(&mut tape, 4, &mut rng);
        let att = multi_head_attention(&mut tape, x, &p, 2).unwrap();
        assert!(tape.value(att.weights).data().iter().all(|&w| w == 1.0));

        let v = dense(&mut tape, x, p.wv, p.bv).unwrap();
        let expected = dense(&mut tape, v, p.wo, p.bo).unwrap();
        let (a, e) = (tape.value(att.output).data(), tape.value(expected).data());
        for (x, y) in a.iter().zip(e) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tape = Tape::new();
        let x = tape.constant(random(&[2, 5, 8], &mut rng));
        let p = mha_vars(&mut tape, 8, &mut rng);
        let att = multi_head_attention(&mut tape, x, &p, 4).unwrap();
        for row in tape.value(att.weights).data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rejects_indivisible_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new();
        let x = tape.constant(random(&[1, 3, 6], &mut rng));
        let p = mha_vars(&mut tape, 6, &mut rng);
        assert!(matches!(
            multi_head_attention(&mut tape, x, &p, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_identities_and_rate_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.constant(random(&[4, 4], &mut rng));
        assert_eq!(dropout(&mut tape, x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(&mut tape, x, 0.5, Mode::Eval, &mut rng).unwrap(), x);
        assert!(matches!(
            dropout(&mut tape, x, 1.0, Mode::Train, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dropout_preserves_expected_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[100_000], 1.0));
        let y = dropout(&mut tape, x, 0.5, Mode::Train, &mut rng).unwrap();
        let vals = tape.value(y).data();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn batch_norm_train_standardizes_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut tape = Tape::new();
        let raw = random(&[50, 3], &mut rng).map(|v| 4.0 * v + 7.0);
        let x = tape.constant(raw);
        let g = tape.constant(Tensor::full(&[3], 1.0));
        let b = tape.constant(Tensor::zeros(&[3]));
        let mut stats = RunningStats::new(3);
        let y = batch_norm(&mut tape, x, g, b, &mut stats, Mode::Train).unwrap();
        let v = tape.value(y);
        for c in 0..3 {
            let col: Vec<f64> = (0..50).map(|r| v.get2(r, c)).collect();
            let m = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 50.0;
            assert!(m.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
        // running mean moved 10% of the way to ~7
        assert!(stats.mean.iter().all(|&m| m > 0.5 && m < 0.9));
    }

    #[test]
    fn batch_norm_constant_channel_maps_to_beta() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[6, 2], 3.5));
        let g = tape.constant(Tensor::full(&[2], 2.0));
        let b = tape.constant(Tensor::new(vec![2], vec![0.25, -1.0]).unwrap());
        let mut stats = RunningStats::new(2);
        let y = batch_norm(&mut tape, x, g, b, &mut stats, Mode::Train).unwrap();
        for row in tape.value(y).data().chunks(2) {
            assert_eq!(row, &[0.25, -1.0]);
        }
    }

    #[test]
    fn batch_norm_eval_is_per_row_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = random(&[6, 3], &mut rng);
        let mut stats = RunningStats {
            mean: vec![0.1, -0.2, 0.3],
            var: vec![0.5, 2.0, 1.5],
        };
        let run = |t: Tensor, stats: &mut RunningStats| {
            let mut tape = Tape::new();
            let x = tape.constant(t);
            let g = tape.constant(Tensor::new(vec![3], vec![1.0, 2.0, 0.5]).unwrap());
            let b = tape.constant(Tensor::new(vec![3], vec![0.0, 1.0, -1.0]).unwrap());
            let y = batch_norm(&mut tape, x, g, b, stats, Mode::Eval).unwrap();
            tape.value(y).clone()
        };
        let full = run(data.clone(), &mut stats);
        // reversed row order gives reversed outputs
        let rev: Vec<f64> = data.data().chunks(3).rev().flatten().copied().collect();
        let out = run(Tensor::new(vec![6, 3], rev).unwrap(), &mut stats);
        let back: Vec<f64> = out.data().chunks(3).rev().flatten().copied().collect();
        assert_eq!(full.data(), back.as_slice());
        assert_eq!(stats.mean, vec![0.1, -0.2, 0.3]);
    }
}
