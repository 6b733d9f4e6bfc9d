//! Forecast verification: confusion counts, TSS, Brier skill, threshold
//! scans, fold aggregation and paired t-tests.

mod io;
mod scan;
mod stats;

pub use io::{read_probability_csv, write_probability_csv, write_reports_csv, write_scan_csv, ProbabilityRow};
pub use scan::{threshold_scan, ScanPoint, ThresholdScan};
pub use stats::{aggregate_folds, mean_std, paired_ttest, student_t_sf, AggregateReport, MeanStd, TTestResult};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::decide;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::shape("confusion matrix of zero instances"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            _ => return Err(Error::Contract(format!("non-binary prediction/label pair ({p}, {y})"))),
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub recall: f64,
    pub fpr: f64,
    pub tss: f64,
}

/// True skill statistic from raw rates; `tss = recall − fpr`.
pub fn tss_from_rates(recall: f64, fpr: f64) -> Skill {
    Skill { recall, fpr, tss: recall - fpr }
}

pub fn tss(cm: &ConfusionMatrix) -> Result<Skill> {
    if cm.tp + cm.fn_ == 0 {
        return Err(Error::UndefinedMetric("recall needs at least one positive instance".into()));
    }
    if cm.fp + cm.tn == 0 {
        return Err(Error::UndefinedMetric("false-positive rate needs at least one negative instance".into()));
    }
    Ok(tss_from_rates(
        cm.tp as f64 / (cm.tp + cm.fn_) as f64,
        cm.fp as f64 / (cm.fp + cm.tn) as f64,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Brier {
    pub bs: f64,
    pub bss: f64,
    /// Event base rate of the labels.
    pub climatology: f64,
}

fn check_inputs(probs: &[f64], labels: &[u8]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::shape(format!("{} probabilities for {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::shape("no instances to evaluate"));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Contract(format!("probability {p} outside [0, 1]")));
    }
    if let Some(y) = labels.iter().find(|y| **y > 1) {
        return Err(Error::Contract(format!("label {y} is not binary")));
    }
    Ok(())
}

pub fn brier_skill(probs: &[f64], labels: &[u8]) -> Result<Brier> {
    check_inputs(probs, labels)?;
    let n = probs.len() as f64;
    let climatology = labels.iter().map(|&y| f64::from(y)).sum::<f64>() / n;
    let bs = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| (f64::from(y) - p).powi(2))
        .sum::<f64>()
        / n;
    let reference = labels.iter().map(|&y| (f64::from(y) - climatology).powi(2)).sum::<f64>() / n;
    if reference == 0.0 {
        return Err(Error::UndefinedMetric("Brier skill needs both classes in the labels".into()));
    }
    Ok(Brier { bs, bss: 1.0 - bs / reference, climatology })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub threshold: f64,
    #[serde(flatten)]
    pub counts: ConfusionMatrix,
    pub recall: f64,
    pub fpr: f64,
    pub tss: f64,
    pub bs: f64,
    pub bss: f64,
    pub climatology: f64,
}

impl MetricReport {
    /// Categorical metrics at `threshold` (positive iff `p ≥ threshold`)
    /// plus the probabilistic Brier scores.
    pub fn compute(probs: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        check_inputs(probs, labels)?;
        let preds = probs.iter().map(|&p| decide(p, threshold)).collect::<Result<Vec<_>>>()?;
        let counts = confusion(&preds, labels)?;
        let skill = tss(&counts)?;
        let brier = brier_skill(probs, labels)?;
        Ok(Self {
            n: probs.len(),
            threshold,
            counts,
            recall: skill.recall,
            fpr: skill.fpr,
            tss: skill.tss,
            bs: brier.bs,
            bss: brier.bss,
            climatology: brier.climatology,
        })
    }
}
