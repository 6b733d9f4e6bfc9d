use serde::{Deserialize, Serialize};

use super::{ArRecord, LabeledInstance, SERIES_LEN};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Features whose training spread is below this are mapped to zero.
const MIN_STD: f64 = 1e-12;

/// Per-feature z-score parameters, fit on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Number of rows (ARs × time steps) the statistics were fit on.
    pub n_rows: usize,
}

impl StandardizationStats {
    /// Population mean and standard deviation over every time step of
    /// every training AR.
    pub fn fit(train: &[&ArRecord]) -> Result<Self> {
        let first = train
            .first()
            .ok_or_else(|| Error::config("cannot fit standardization on an empty training set"))?;
        let f = first.n_features();
        if train.iter().any(|r| r.n_features() != f) {
            return Err(Error::shape("training records disagree on feature count"));
        }
        let n_rows = train.len() * SERIES_LEN;
        let mut mean = vec![0.0; f];
        for r in train {
            for row in r.series.data().chunks(f) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n_rows as f64);
        let mut var = vec![0.0; f];
        for r in train {
            for row in r.series.data().chunks(f) {
                for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
        }
        let std = var.into_iter().map(|s| (s / n_rows as f64).sqrt()).collect();
        Ok(Self { mean, std, n_rows })
    }

    pub fn transform(&self, series: &Tensor) -> Result<Tensor> {
        let f = self.mean.len();
        if series.cols() != f {
            return Err(Error::shape(format!(
                "series has {} features, statistics have {f}",
                series.cols()
            )));
        }
        let mut out = series.clone();
        for row in out.data_mut().chunks_mut(f) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = if *s < MIN_STD { 0.0 } else { (*v - m) / s };
            }
        }
        Ok(out)
    }

    pub fn apply(&self, record: &ArRecord) -> Result<LabeledInstance> {
        Ok(LabeledInstance {
            ar_id: record.ar_id,
            x: self.transform(&record.series)?,
            y: record.label(),
        })
    }

    pub fn apply_all(&self, records: &[&ArRecord]) -> Result<Vec<LabeledInstance>> {
        records.iter().map(|r| self.apply(r)).collect()
    }
}
