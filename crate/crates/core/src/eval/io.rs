use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{MetricReport, ThresholdScan};
use crate::error::{Error, Result};

/// One row of an external probability file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRow {
    pub ar_id: u64,
    pub probability: f64,
    pub label: u8,
}

/// Reads `ar_id,probability,label` rows.
pub fn read_probability_csv<R: Read>(reader: R) -> Result<Vec<ProbabilityRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["ar_id", "probability", "label"] {
        return Err(Error::ingest(None, Some(1), "header must be ar_id,probability,label"));
    }
    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, rec) in rdr.deserialize::<ProbabilityRow>().enumerate() {
        let line = i + 2;
        let row = rec.map_err(|e| Error::ingest(None, Some(line), e.to_string()))?;
        if !(0.0..=1.0).contains(&row.probability) {
            return Err(Error::ingest(Some(row.ar_id), Some(line), format!("probability {} outside [0, 1]", row.probability)));
        }
        if row.label > 1 {
            return Err(Error::ingest(Some(row.ar_id), Some(line), format!("label {} is not 0 or 1", row.label)));
        }
        if !seen.insert(row.ar_id) {
            return Err(Error::ingest(Some(row.ar_id), Some(line), "duplicate ar_id"));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Writes rows in the format `read_probability_csv` accepts.
pub fn write_probability_csv<W: Write>(rows: &[ProbabilityRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["ar_id", "probability", "label"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scan_csv<W: Write>(scan: &ThresholdScan, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold_pct", "tss"])?;
    for p in &scan.points {
        w.write_record([p.threshold_pct.to_string(), p.tss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One CSV row per labelled report.
pub fn write_reports_csv<W: Write>(reports: &[(String, MetricReport)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "name", "n", "threshold", "tp", "tn", "fp", "fn", "recall", "fpr", "tss", "bs", "bss", "climatology",
    ])?;
    for (name, r) in reports {
        let c = r.counts;
        w.write_record([
            name.clone(),
            r.n.to_string(),
            r.threshold.to_string(),
            c.tp.to_string(),
            c.tn.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            r.recall.to_string(),
            r.fpr.to_string(),
            r.tss.to_string(),
            r.bs.to_string(),
            r.bss.to_string(),
            r.climatology.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
