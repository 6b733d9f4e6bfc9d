//! Active-region records, CSV ingestion, splitting and standardization.

mod io;
mod split;
mod standardize;
mod synth;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

pub use io::{load_csv, read_csv, write_csv, write_csv_file};
pub use split::{make_cv_splits, CvSplit, SplitConfig, SplitManifest};
pub use standardize::StandardizationStats;
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Samples per active region.
pub const SERIES_LEN: usize = 40;

/// Largest flare class produced by an active region within the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlareClass {
    #[serde(rename = "NOFLARE")]
    NoFlare,
    C,
    M,
    X,
}

impl FlareClass {
    pub const ALL: [FlareClass; 4] = [FlareClass::NoFlare, FlareClass::C, FlareClass::M, FlareClass::X];

    /// `1` for ≥M-class flares, `0` otherwise.
    pub fn binarize(self) -> u8 {
        match self {
            FlareClass::M | FlareClass::X => 1,
            FlareClass::NoFlare | FlareClass::C => 0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FlareClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlareClass::NoFlare => "NOFLARE",
            FlareClass::C => "C",
            FlareClass::M => "M",
            FlareClass::X => "X",
        })
    }
}

impl FromStr for FlareClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "NOFLARE" => Ok(FlareClass::NoFlare),
            "C" => Ok(FlareClass::C),
            "M" => Ok(FlareClass::M),
            "X" => Ok(FlareClass::X),
            other => Err(format!("unknown class label {other:?}")),
        }
    }
}

/// One active region: its label and `SERIES_LEN × F` feature series.
#[derive(Debug, Clone, PartialEq)]
pub struct ArRecord {
    pub ar_id: u64,
    pub class_label: FlareClass,
    pub multi_ar: bool,
    /// `[SERIES_LEN, F]`, rows in time order.
    pub series: Tensor,
}

impl ArRecord {
    pub fn label(&self) -> u8 {
        self.class_label.binarize()
    }

    pub fn n_features(&self) -> usize {
        self.series.cols()
    }
}

/// Records sharing one feature schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub records: Vec<ArRecord>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, records: Vec<ArRecord>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = feature_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::ingest(None, None, format!("duplicate feature name {dup}")));
        }
        let mut ids = std::collections::HashSet::new();
        for r in &records {
            if r.series.shape() != [SERIES_LEN, feature_names.len()] {
                return Err(Error::ingest(
                    Some(r.ar_id),
                    None,
                    format!("series shape {:?}", r.series.shape()),
                ));
            }
            if !r.series.is_finite() {
                return Err(Error::ingest(Some(r.ar_id), None, "non-finite value"));
            }
            if !ids.insert(r.ar_id) {
                return Err(Error::ingest(Some(r.ar_id), None, "duplicate ar_id"));
            }
        }
        Ok(Self { feature_names, records })
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn get(&self, ar_id: u64) -> Option<&ArRecord> {
        self.records.iter().find(|r| r.ar_id == ar_id)
    }

    /// Records for the given ids, in id-list order.
    pub fn select(&self, ids: &[u64]) -> Result<Vec<&ArRecord>> {
        let index: std::collections::HashMap<u64, &ArRecord> =
            self.records.iter().map(|r| (r.ar_id, r)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Split(format!("ar_id {id} not in dataset")))
            })
            .collect()
    }

    /// Per-class AR counts in [`FlareClass::ALL`] order.
    pub fn class_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for r in &self.records {
            c[r.class_label.index()] += 1;
        }
        c
    }

    /// Keeps only the named feature columns, in the given order.
    pub fn subset_features(&self, names: &[String]) -> Result<Dataset> {
        let cols: Vec<usize> = names
            .iter()
            .map(|n| {
                self.feature_names
                    .iter()
                    .position(|f| f == n)
                    .ok_or_else(|| Error::config(format!("unknown feature {n}")))
            })
            .collect::<Result<_>>()?;
        let records = self
            .records
            .iter()
            .map(|r| {
                let data = (0..SERIES_LEN)
                    .flat_map(|t| cols.iter().map(move |&c| r.series.get2(t, c)))
                    .collect();
                Ok(ArRecord {
                    series: Tensor::new(vec![SERIES_LEN, cols.len()], data)?,
                    ..r.clone()
                })
            })
            .collect::<Result<_>>()?;
        Dataset::new(names.to_vec(), records)
    }
}

/// Standardized input with its binary label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub ar_id: u64,
    pub x: Tensor,
    pub y: u8,
}
