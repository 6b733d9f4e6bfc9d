use serde::{Deserialize, Serialize};

use super::{check_inputs, confusion, tss};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub threshold_pct: u32,
    pub tss: f64,
}

/// TSS at every threshold `k/100`, `k = 0..=100`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScan {
    pub points: Vec<ScanPoint>,
}

impl ThresholdScan {
    /// Highest-TSS point; ties go to the lowest threshold.
    pub fn best(&self) -> ScanPoint {
        self.points
            .iter()
            .copied()
            .fold(self.points[0], |best, p| if p.tss > best.tss { p } else { best })
    }
}

pub fn threshold_scan(probs: &[f64], labels: &[u8]) -> Result<ThresholdScan> {
    check_inputs(probs, labels)?;
    if labels.iter().all(|&y| y == labels[0]) {
        return Err(Error::UndefinedMetric("threshold scan needs both classes in the labels".into()));
    }
    let points = (0..=100u32)
        .map(|k| {
            let theta = f64::from(k) / 100.0;
            let preds: Vec<u8> = probs.iter().map(|&p| u8::from(p >= theta)).collect();
            Ok(ScanPoint {
                threshold_pct: k,
                tss: tss(&confusion(&preds, labels)?)?.tss,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ThresholdScan { points })
}
