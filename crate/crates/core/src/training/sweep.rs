//! Reward-sensitivity sweeps: one reward is varied in unit steps while the
//! others stay at their base values; every (value, fold) cell is retrained
//! and scored on its fold's test set.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate, train_cdr, CdrTrainConfig, FoldData};
use crate::error::{Error, Result};
use crate::eval::{mean_std, MeanStd, MetricReport};
use crate::models::{Model, ModelConfig};
use crate::seed::{derive, derive_named};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RewardKind {
    Tp,
    Tn,
    Fp,
    Fn,
}

impl RewardKind {
    fn get(self, c: &CdrTrainConfig) -> f64 {
        match self {
            RewardKind::Tp => c.rewards.tp,
            RewardKind::Tn => c.rewards.tn,
            RewardKind::Fp => c.rewards.fp,
            RewardKind::Fn => c.rewards.fn_,
        }
    }

    fn set(self, c: &mut CdrTrainConfig, v: f64) {
        match self {
            RewardKind::Tp => c.rewards.tp = v,
            RewardKind::Tn => c.rewards.tn = v,
            RewardKind::Fp => c.rewards.fp = v,
            RewardKind::Fn => c.rewards.fn_ = v,
        }
    }
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardKind::Tp => "TP",
            RewardKind::Tn => "TN",
            RewardKind::Fp => "FP",
            RewardKind::Fn => "FN",
        })
    }
}

impl FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TP" => Ok(RewardKind::Tp),
            "TN" => Ok(RewardKind::Tn),
            "FP" => Ok(RewardKind::Fp),
            "FN" => Ok(RewardKind::Fn),
            _ => Err(Error::config(format!("unknown reward {s:?}; expected TP, TN, FP or FN"))),
        }
    }
}

/// Parses `lo:hi` into the integers `lo, lo+1, …, hi`.
pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::config(format!("range {spec:?} must look like lo:hi with integer bounds"));
    let (lo, hi) = spec.split_once(':').ok_or_else(bad)?;
    let lo: i64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: i64 = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(Error::config(format!("range {spec:?} is empty")));
    }
    Ok((lo..=hi).map(|v| v as f64).collect())
}

/// Seed owned by one sweep cell.
pub fn cell_seed(base: u64, which: RewardKind, value: f64, fold: usize) -> u64 {
    derive_named(base, &format!("{which}={value}/fold={fold}"))
}

/// Trains a fresh model on `fold` and scores its best checkpoint on the
/// test set. Initialization and training draw from separate streams of `seed`.
pub fn train_and_test(model: &ModelConfig, config: &CdrTrainConfig, fold: &FoldData, seed: u64) -> Result<MetricReport> {
    let init = Model::init(model, derive(seed, 0))?;
    let cfg = CdrTrainConfig { seed: derive(seed, 1), ..config.clone() };
    let out = train_cdr(init, &fold.train, &fold.val, &cfg)?;
    evaluate(&out.checkpoint.model, &fold.test, config.threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub which: RewardKind,
    pub value: f64,
    pub is_base: bool,
    pub folds: usize,
    pub tss: MeanStd,
    pub bss: MeanStd,
}

fn summarize(values: &[f64]) -> Result<MeanStd> {
    match values {
        [v] => Ok(MeanStd { mean: *v, std: 0.0 }),
        _ => mean_std(values),
    }
}

/// One row per value of `which`, in the order given. Cells run on the
/// current rayon pool.
pub fn sweep_rewards(
    base: &CdrTrainConfig,
    model: &ModelConfig,
    which: RewardKind,
    values: &[f64],
    folds: &[FoldData],
) -> Result<Vec<SweepRow>> {
    base.validate()?;
    let base_value = which.get(base);
    if !values.contains(&base_value) {
        return Err(Error::config(format!("sweep range for {which} does not include the base value {base_value}")));
    }
    let configs: Vec<CdrTrainConfig> = values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            which.set(&mut c, v);
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    if folds.is_empty() {
        return Err(Error::config("sweep needs at least one fold"));
    }

    let cells: Vec<(usize, usize)> = (0..values.len()).flat_map(|v| (0..folds.len()).map(move |f| (v, f))).collect();
    let reports: Vec<MetricReport> = cells
        .par_iter()
        .map(|&(v, f)| train_and_test(model, &configs[v], &folds[f], cell_seed(base.seed, which, values[v], f)))
        .collect::<Result<_>>()?;

    values
        .iter()
        .enumerate()
        .map(|(v, &value)| {
            let rs = &reports[v * folds.len()..(v + 1) * folds.len()];
            Ok(SweepRow {
                which,
                value,
                is_base: value == base_value,
                folds: folds.len(),
                tss: summarize(&rs.iter().map(|r| r.tss).collect::<Vec<_>>())?,
                bss: summarize(&rs.iter().map(|r| r.bss).collect::<Vec<_>>())?,
            })
        })
        .collect()
}

/// `<which>,tss_mean,tss_std,bss_mean,bss_std,base` rows.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let which = rows.first().map_or("value".to_string(), |r| r.which.to_string());
    w.write_record([which.as_str(), "tss_mean", "tss_std", "bss_mean", "bss_std", "base"])?;
    for r in rows {
        w.write_record([
            r.value.to_string(),
            r.tss.mean.to_string(),
            r.tss.std.to_string(),
            r.bss.mean.to_string(),
            r.bss.std.to_string(),
            r.is_base.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
