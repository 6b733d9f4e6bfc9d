//! Synthetic active regions.
//!
//! Every AR draws a per-feature level around a feature-specific baseline.
//! Flaring classes add a mean shift that grows linearly over the 40 steps,
//! scaled by `separation`, by a class intensity (C weak, M/X strong) and by a
//! per-feature weight that decays across feature columns. With
//! `separation = 0` the generator is label-independent.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ArRecord, Dataset, FlareClass, SERIES_LEN};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Names of the ten vector and line-of-sight parameters used by default.
pub const KNOWLEDGE_FEATURES: [&str; 10] = [
    "R_VALUE", "AREA_ACR", "TOTUSJH", "TOTUSJZ", "ABSNJZH", "SAVNCPP", "USFLUX", "TOTPOT", "MEANPOT", "SHRGT45",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// AR counts for NOFLARE, C, M, X.
    pub counts: [usize; 4],
    pub n_features: usize,
    /// Within-AR noise, in units of the feature's natural scale.
    pub noise: f64,
    pub separation: f64,
    pub multi_ar_fraction: f64,
    pub first_ar_id: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            counts: [120, 90, 28, 6],
            n_features: 10,
            noise: 0.5,
            separation: 1.0,
            multi_ar_fraction: 0.2,
            first_ar_id: 11000,
        }
    }
}

impl SynthConfig {
    /// Well-separated benchmark used for learnability checks.
    pub fn high_separation() -> Self {
        Self {
            counts: [60, 45, 20, 5],
            separation: 3.0,
            ..Self::default()
        }
    }
}

fn intensity(class: FlareClass) -> f64 {
    match class {
        FlareClass::NoFlare => 0.0,
        FlareClass::C => 0.2,
        FlareClass::M => 1.0,
        FlareClass::X => 1.4,
    }
}

pub fn feature_names(n: usize) -> Vec<String> {
    if n == KNOWLEDGE_FEATURES.len() {
        KNOWLEDGE_FEATURES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..n).map(|j| format!("feature_{j}")).collect()
    }
}

pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    if config.counts.contains(&0) {
        return Err(Error::config(format!("class counts must be positive, got {:?}", config.counts)));
    }
    if config.n_features == 0 {
        return Err(Error::config("n_features must be positive"));
    }
    if !(config.noise >= 0.0 && config.separation >= 0.0) {
        return Err(Error::config("noise and separation must be non-negative"));
    }
    if !(0.0..=1.0).contains(&config.multi_ar_fraction) {
        return Err(Error::config("multi_ar_fraction must lie in [0, 1]"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = config.n_features;
    let scale: Vec<f64> = (0..f).map(|j| 10f64.powi((j % 4) as i32)).collect();
    let weight: Vec<f64> = (0..f)
        .map(|j| if f == 1 { 1.0 } else { 1.0 - 0.8 * j as f64 / (f - 1) as f64 })
        .collect();

    let mut classes: Vec<FlareClass> = FlareClass::ALL
        .iter()
        .zip(config.counts)
        .flat_map(|(&c, n)| std::iter::repeat_n(c, n))
        .collect();
    classes.shuffle(&mut rng);

    let mut records = Vec::with_capacity(classes.len());
    for (i, class) in classes.into_iter().enumerate() {
        let shift = config.separation * intensity(class);
        let mut data = Vec::with_capacity(SERIES_LEN * f);
        let level: Vec<f64> = (0..f).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        for t in 0..SERIES_LEN {
            let ramp = 1.0 + 1.5 * t as f64 / (SERIES_LEN - 1) as f64;
            for j in 0..f {
                let eps: f64 = rng.sample(StandardNormal);
                let v = j as f64 + level[j] + shift * weight[j] * ramp + config.noise * eps;
                data.push(scale[j] * v);
            }
        }
        records.push(ArRecord {
            ar_id: config.first_ar_id + i as u64,
            class_label: class,
            multi_ar: rng.random::<f64>() < config.multi_ar_fraction,
            series: Tensor::new(vec![SERIES_LEN, f], data)?,
        });
    }
    Dataset::new(feature_names(f), records)
}
