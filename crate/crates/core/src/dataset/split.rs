//! AR-level train/validation/test splits.
//!
//! Ids are shuffled within each class and cut by ratio, so the three sets
//! never share an active region. Validation and test sets then drop
//! multi-AR records; the training set keeps them.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, FlareClass};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub n_splits: usize,
    /// Fractions of each class's ARs for (train, validation, test).
    pub ratios: [f64; 3],
    /// Exact per-class training counts (NOFLARE, C, M, X). When set, the
    /// remainder of each class is divided between validation and test in
    /// proportion to `ratios[1] : ratios[2]`.
    pub train_counts: Option<[usize; 4]>,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            n_splits: 10,
            ratios: [0.55, 0.22, 0.23],
            train_counts: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvSplit {
    pub index: usize,
    pub seed: u64,
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

/// JSON split manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub config: SplitConfig,
    pub splits: Vec<CvSplit>,
}

impl SplitManifest {
    pub fn get(&self, fold: usize) -> Result<&CvSplit> {
        self.splits
            .get(fold)
            .ok_or_else(|| Error::config(format!("fold {fold} not in manifest of {} splits", self.splits.len())))
    }
}

fn cut(n: usize, class: FlareClass, config: &SplitConfig) -> Result<(usize, usize)> {
    let [rt, rv, rs] = config.ratios;
    let n_train = match config.train_counts {
        Some(counts) => {
            let c = counts[class.index()];
            if c == 0 || c + 2 > n {
                return Err(Error::Split(format!(
                    "train count {c} for class {class} leaves no validation/test ARs out of {n}"
                )));
            }
            c
        }
        None => ((rt * n as f64).round() as usize).clamp(1, n - 2),
    };
    let rest = n - n_train;
    let val_share = if config.train_counts.is_some() { rv / (rv + rs) } else { rv / (1.0 - rt) };
    let n_val = ((val_share * rest as f64).round() as usize).clamp(1, rest - 1);
    Ok((n_train, n_val))
}

/// Builds `config.n_splits` independent splits.
pub fn make_cv_splits(dataset: &Dataset, config: &SplitConfig) -> Result<Vec<CvSplit>> {
    if config.n_splits == 0 {
        return Err(Error::config("n_splits must be positive"));
    }
    if config.ratios.iter().any(|r| !(0.0..=1.0).contains(r))
        || (config.ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
        || config.ratios[1] + config.ratios[2] <= 0.0
    {
        return Err(Error::config(format!("split ratios {:?} must be non-negative and sum to 1", config.ratios)));
    }

    let mut by_class: Vec<Vec<u64>> = vec![Vec::new(); 4];
    for r in &dataset.records {
        by_class[r.class_label.index()].push(r.ar_id);
    }
    for (class, ids) in FlareClass::ALL.iter().zip(by_class.iter_mut()) {
        if ids.len() < 3 {
            return Err(Error::Split(format!(
                "class {class} has {} ARs; at least 3 are needed",
                ids.len()
            )));
        }
        ids.sort_unstable();
    }
    let multi: std::collections::HashSet<u64> = dataset
        .records
        .iter()
        .filter(|r| r.multi_ar)
        .map(|r| r.ar_id)
        .collect();

    (0..config.n_splits)
        .map(|index| {
            let seed = crate::seed::derive(config.seed, index as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut split = CvSplit {
                index,
                seed,
                train: Vec::new(),
                val: Vec::new(),
                test: Vec::new(),
            };
            for (class, ids) in FlareClass::ALL.iter().zip(&by_class) {
                let mut ids = ids.clone();
                ids.shuffle(&mut rng);
                let (n_train, n_val) = cut(ids.len(), *class, config)?;
                split.train.extend_from_slice(&ids[..n_train]);
                split.val.extend_from_slice(&ids[n_train..n_train + n_val]);
                split.test.extend_from_slice(&ids[n_train + n_val..]);
            }
            split.val.retain(|id| !multi.contains(id));
            split.test.retain(|id| !multi.contains(id));
            Ok(split)
        })
        .collect()
}
