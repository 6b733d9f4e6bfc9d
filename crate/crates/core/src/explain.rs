//! Exact Shapley attribution with whole feature channels as players.
//!
//! A coalition `S` keeps the instance's values in the channels of `S` at
//! every time step; the remaining channels take the background's values.
//! All `2^F` coalition values are computed once per instance and shared by
//! every player's sum.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::Tensor;

/// Largest player count explained exactly.
pub const MAX_PLAYERS: usize = 16;

/// Coalitions evaluated per model call.
const EVAL_CHUNK: usize = 256;

/// Anything that maps `T×F` instances to positive-class probabilities.
pub trait ProbabilityModel {
    fn predict_batch(&self, xs: &[&Tensor]) -> Result<Vec<f64>>;
}

impl ProbabilityModel for Model {
    fn predict_batch(&self, xs: &[&Tensor]) -> Result<Vec<f64>> {
        self.predict_proba_batch(xs)
    }
}

impl<F: Fn(&Tensor) -> f64> ProbabilityModel for F {
    fn predict_batch(&self, xs: &[&Tensor]) -> Result<Vec<f64>> {
        Ok(xs.iter().map(|x| self(x)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    /// Training mean in standardized space.
    #[default]
    Zero,
    /// One value per channel, repeated over time.
    Vector(Vec<f64>),
    Instance(Tensor),
}

impl Background {
    /// Background instance shaped like `like`.
    pub fn materialize(&self, like: &Tensor) -> Result<Tensor> {
        let (t, f) = (like.rows(), like.cols());
        match self {
            Background::Zero => Ok(Tensor::zeros(like.shape())),
            Background::Vector(v) if v.len() == f => {
                Tensor::new(like.shape().to_vec(), (0..t).flat_map(|_| v.iter().copied()).collect())
            }
            Background::Vector(v) => Err(Error::shape(format!("background has {} channels, instance has {f}", v.len()))),
            Background::Instance(b) if b.shape() == like.shape() => Ok(b.clone()),
            Background::Instance(b) => Err(Error::shape(format!(
                "background shape {:?} differs from instance shape {:?}",
                b.shape(),
                like.shape()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub ar_id: u64,
    /// Value of the empty coalition.
    pub base_value: f64,
    pub phi: Vec<f64>,
    /// Value of the full coalition.
    pub f_x: f64,
    /// Model evaluations used.
    pub evaluations: usize,
}

/// Instance whose channels in `mask` (bit `i` for channel `i`) come from
/// `x` and the rest from `background`.
fn blend(x: &Tensor, background: &Tensor, mask: u32) -> Tensor {
    let f = x.cols();
    let mut out = background.clone();
    for (i, (o, v)) in out.data_mut().iter_mut().zip(x.data()).enumerate() {
        if mask >> (i % f) & 1 == 1 {
            *o = *v;
        }
    }
    out
}

fn check_instance(x: &Tensor) -> Result<usize> {
    if x.rank() != 2 {
        return Err(Error::shape(format!("instance must be T×F, got {:?}", x.shape())));
    }
    let f = x.cols();
    if f > MAX_PLAYERS {
        return Err(Error::config(format!("{f} players exceed the exact-enumeration cap of {MAX_PLAYERS}")));
    }
    Ok(f)
}

/// Model output on the coalition `subset`.
pub fn coalition_value<M: ProbabilityModel + ?Sized>(
    model: &M,
    x: &Tensor,
    subset: &[usize],
    background: &Background,
) -> Result<f64> {
    let f = check_instance(x)?;
    let mut mask = 0u32;
    for &i in subset {
        if i >= f {
            return Err(Error::config(format!("player {i} not among {f} features")));
        }
        mask |= 1 << i;
    }
    let bg = background.materialize(x)?;
    Ok(model.predict_batch(&[&blend(x, &bg, mask)])?[0])
}

/// Every coalition value, indexed by bit mask.
fn coalition_table<M: ProbabilityModel + ?Sized>(model: &M, x: &Tensor, bg: &Tensor, f: usize) -> Result<Vec<f64>> {
    let n = 1usize << f;
    let mut values = Vec::with_capacity(n);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let batch: Vec<Tensor> = (start..n.min(start + EVAL_CHUNK))
            .map(|m| blend(x, bg, m as u32))
            .collect();
        let refs: Vec<&Tensor> = batch.iter().collect();
        let out = model.predict_batch(&refs)?;
        if out.len() != refs.len() {
            return Err(Error::Contract("model returned the wrong number of predictions".into()));
        }
        values.extend(out);
    }
    Ok(values)
}

pub fn exact_shapley<M: ProbabilityModel + ?Sized>(
    model: &M,
    ar_id: u64,
    x: &Tensor,
    background: &Background,
) -> Result<Attribution> {
    let f = check_instance(x)?;
    let bg = background.materialize(x)?;
    let v = coalition_table(model, x, &bg, f)?;

    // weight[s] = s! (F − s − 1)! / F!
    let fact: Vec<f64> = (0..=f).scan(1.0, |acc, k| {
        if k > 0 {
            *acc *= k as f64;
        }
        Some(*acc)
    }).collect();
    let weight: Vec<f64> = (0..f).map(|s| fact[s] * fact[f - s - 1] / fact[f]).collect();

    let phi = (0..f)
        .map(|i| {
            let bit = 1usize << i;
            (0..v.len())
                .filter(|m| m & bit == 0)
                .map(|m| weight[m.count_ones() as usize] * (v[m | bit] - v[m]))
                .sum()
        })
        .collect();
    Ok(Attribution {
        ar_id,
        base_value: v[0],
        phi,
        f_x: v[v.len() - 1],
        evaluations: v.len(),
    })
}

/// Mean absolute attribution per player.
pub fn global_importance(attributions: &[Attribution]) -> Result<Vec<f64>> {
    let first = attributions
        .first()
        .ok_or_else(|| Error::config("global importance needs at least one attribution"))?;
    let f = first.phi.len();
    if attributions.iter().any(|a| a.phi.len() != f) {
        return Err(Error::shape("attributions disagree on player count"));
    }
    let n = attributions.len() as f64;
    Ok((0..f)
        .map(|i| attributions.iter().map(|a| a.phi[i].abs()).sum::<f64>() / n)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterfallStep {
    pub feature: usize,
    pub phi: f64,
    pub start: f64,
    pub end: f64,
}

/// Players by decreasing `|φ|` (ties by index) with running totals from the
/// base value to `f(x)`.
pub fn waterfall_data(a: &Attribution) -> Vec<WaterfallStep> {
    let mut order: Vec<usize> = (0..a.phi.len()).collect();
    order.sort_by(|&i, &j| a.phi[j].abs().total_cmp(&a.phi[i].abs()).then(i.cmp(&j)));
    let mut total = a.base_value;
    order
        .into_iter()
        .map(|i| {
            let start = total;
            total += a.phi[i];
            WaterfallStep { feature: i, phi: a.phi[i], start, end: total }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeeswarmRow {
    pub feature: usize,
    pub ar_id: u64,
    pub phi: f64,
    /// Channel mean, min-max normalized across ARs; 0.5 for a zero range.
    pub magnitude: f64,
}

/// One row per (AR, feature), AR-major. `series[n]` is the unstandardized
/// series of `attributions[n]`.
pub fn beeswarm_data(attributions: &[Attribution], series: &[&Tensor]) -> Result<Vec<BeeswarmRow>> {
    if attributions.len() != series.len() {
        return Err(Error::shape(format!(
            "{} attributions for {} series",
            attributions.len(),
            series.len()
        )));
    }
    let Some(first) = attributions.first() else {
        return Ok(Vec::new());
    };
    let f = first.phi.len();
    let means: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            if s.cols() != f {
                return Err(Error::shape(format!("series has {} channels, attributions have {f}", s.cols())));
            }
            let t = s.rows() as f64;
            Ok((0..f).map(|j| (0..s.rows()).map(|r| s.get2(r, j)).sum::<f64>() / t).collect())
        })
        .collect::<Result<_>>()?;
    let lo: Vec<f64> = (0..f).map(|j| means.iter().map(|m| m[j]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..f).map(|j| means.iter().map(|m| m[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let mut rows = Vec::with_capacity(attributions.len() * f);
    for (a, m) in attributions.iter().zip(&means) {
        for j in 0..f {
            let range = hi[j] - lo[j];
            rows.push(BeeswarmRow {
                feature: j,
                ar_id: a.ar_id,
                phi: a.phi[j],
                magnitude: if range > 0.0 { (m[j] - lo[j]) / range } else { 0.5 },
            });
        }
    }
    Ok(rows)
}

fn name(names: &[String], i: usize) -> Result<&str> {
    names
        .get(i)
        .map(String::as_str)
        .ok_or_else(|| Error::shape(format!("no name for feature {i}")))
}

/// `ar_id,feature,phi` rows.
pub fn write_attributions_csv<W: Write>(attributions: &[Attribution], names: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ar_id", "feature", "phi"])?;
    for a in attributions {
        for (i, phi) in a.phi.iter().enumerate() {
            w.write_record([a.ar_id.to_string(), name(names, i)?.to_string(), phi.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_global_csv<W: Write>(global: &[f64], names: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "phi_global"])?;
    for (i, g) in global.iter().enumerate() {
        w.write_record([name(names, i)?, &g.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_waterfall_csv<W: Write>(attributions: &[Attribution], names: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ar_id", "rank", "feature", "phi", "start", "end"])?;
    for a in attributions {
        for (rank, s) in waterfall_data(a).iter().enumerate() {
            w.write_record([
                a.ar_id.to_string(),
                rank.to_string(),
                name(names, s.feature)?.to_string(),
                s.phi.to_string(),
                s.start.to_string(),
                s.end.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_beeswarm_csv<W: Write>(rows: &[BeeswarmRow], names: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["feature", "ar_id", "phi", "magnitude"])?;
    for r in rows {
        w.write_record([
            name(names, r.feature)?.to_string(),
            r.ar_id.to_string(),
            r.phi.to_string(),
            r.magnitude.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
