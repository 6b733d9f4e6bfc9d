//! Browser bindings for three small demos backed by the `flarecdr` library:
//! a threshold scan over synthetic forecasts, features of a synthetic bipolar
//! magnetogram, and the per-sample reward-weighted loss.
//!
//! Exported functions return JSON strings; failures come back as
//! `{"error": "..."}` so the page never sees a thrown exception.

use flarecdr::eval::{brier_skill, threshold_scan};
use flarecdr::features::{flux_features, gradient_stats, haar_energies, FieldGrid, GradientStats, HAAR_LEVELS};
use flarecdr::training::{assign_reward, Rewards, PROB_FLOOR};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_json<T: Serialize>(result: Result<T, String>) -> String {
    let value = match result {
        Ok(v) => serde_json::to_value(v).unwrap_or_else(|e| serde_json::json!({ "error": e.to_string() })),
        Err(e) => serde_json::json!({ "error": e }),
    };
    value.to_string()
}

#[derive(Debug, Serialize)]
pub struct ScanDemo {
    pub tss: Vec<f64>,
    pub best_threshold_pct: u32,
    pub best_tss: f64,
    pub bss: f64,
}

/// Forecasts are logistic transforms of normal scores centered at
/// `±separation/2`; positives sit on the upper side.
pub fn scan_demo(n_pos: usize, n_neg: usize, separation: f64, seed: u64) -> Result<ScanDemo, String> {
    if n_pos == 0 || n_neg == 0 {
        return Err("need at least one event and one non-event".into());
    }
    if !separation.is_finite() {
        return Err("separation must be finite".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |center: f64| {
        let score = Normal::new(center, 1.0).expect("unit variance").sample(&mut rng);
        1.0 / (1.0 + (-score).exp())
    };
    let mut probs = Vec::with_capacity(n_pos + n_neg);
    let mut labels = Vec::with_capacity(n_pos + n_neg);
    for _ in 0..n_pos {
        probs.push(draw(separation / 2.0));
        labels.push(1);
    }
    for _ in 0..n_neg {
        probs.push(draw(-separation / 2.0));
        labels.push(0);
    }
    let scan = threshold_scan(&probs, &labels).map_err(|e| e.to_string())?;
    let best = scan.best();
    Ok(ScanDemo {
        tss: scan.points.iter().map(|p| p.tss).collect(),
        best_threshold_pct: best.threshold_pct,
        best_tss: best.tss,
        bss: brier_skill(&probs, &labels).map_err(|e| e.to_string())?.bss,
    })
}

#[wasm_bindgen]
pub fn threshold_scan_json(n_pos: u32, n_neg: u32, separation: f64, seed: u32) -> String {
    to_json(scan_demo(n_pos as usize, n_neg as usize, separation, u64::from(seed)))
}

#[derive(Debug, Serialize)]
pub struct FieldDemo {
    pub size: usize,
    pub values: Vec<f64>,
    pub gradient: GradientStats,
    pub haar_energies: Vec<f64>,
    pub flux: [f64; 4],
}

/// Two Gaussian spots of opposite polarity, `gap` pixels apart, plus noise.
pub fn bipolar_field(size: usize, gap: f64, width: f64, noise: f64, seed: u64) -> Result<FieldGrid, String> {
    if !(2..=256).contains(&size) {
        return Err("size must be between 2 and 256".into());
    }
    if width.is_nan() || width <= 0.0 || noise.is_nan() || noise < 0.0 || !gap.is_finite() {
        return Err("width must be positive, noise non-negative and gap finite".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).map_err(|e| e.to_string())?;
    let c = (size as f64 - 1.0) / 2.0;
    let (xp, xn) = (c - gap / 2.0, c + gap / 2.0);
    let spot = |x: f64, y: f64, x0: f64| (-((x - x0).powi(2) + (y - c).powi(2)) / (2.0 * width * width)).exp();
    let mut values = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64, y as f64);
            let v = spot(xf, yf, xp) - spot(xf, yf, xn);
            values.push(v + if noise > 0.0 { jitter.sample(&mut rng) } else { 0.0 });
        }
    }
    FieldGrid::new(size, size, values, 1.0).map_err(|e| e.to_string())
}

pub fn field_demo(size: usize, gap: f64, width: f64, noise: f64, seed: u64) -> Result<FieldDemo, String> {
    let grid = bipolar_field(size, gap, width, noise, seed)?;
    Ok(FieldDemo {
        size,
        gradient: gradient_stats(&grid).map_err(|e| e.to_string())?,
        haar_energies: haar_energies(&grid, HAAR_LEVELS).map_err(|e| e.to_string())?,
        flux: flux_features(&grid).to_array(),
        values: grid.values().to_vec(),
    })
}

#[wasm_bindgen]
pub fn bipolar_field_json(size: u32, gap: f64, width: f64, noise: f64, seed: u32) -> String {
    to_json(field_demo(size as usize, gap, width, noise, u64::from(seed)))
}

#[derive(Debug, Serialize)]
pub struct ActionOutcome {
    pub action: u8,
    /// Probability the policy takes this action under epsilon-greedy.
    pub chance: f64,
    pub reward: f64,
    /// Model probability of the action, `Q(S, A)`.
    pub q: f64,
    /// `−R ln Q`.
    pub loss: f64,
    /// Derivative of the loss with respect to the positive-class logit.
    pub grad_logit: f64,
    /// Positive-class probability after one gradient step on the logit.
    pub p_after: f64,
}

#[derive(Debug, Serialize)]
pub struct RewardDemo {
    pub greedy_action: u8,
    pub outcomes: [ActionOutcome; 2],
    pub expected_loss: f64,
}

/// Both possible actions for one instance with positive-class probability
/// `p`. The two logits are parameterized as `(0, z)` with `p = σ(z)`.
pub fn reward_demo(p: f64, label: u8, rewards: Rewards, epsilon: f64, step: f64) -> Result<RewardDemo, String> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&epsilon) {
        return Err("probability and epsilon must lie in [0, 1]".into());
    }
    if label > 1 {
        return Err("label must be 0 or 1".into());
    }
    rewards.validate().map_err(|e| e.to_string())?;
    let greedy = u8::from(p >= 0.5);
    let z = (p.max(PROB_FLOOR) / (1.0 - p).max(PROB_FLOOR)).ln();
    let outcome = |action: u8| {
        let q = if action == 1 { p } else { 1.0 - p };
        let reward = assign_reward(action, label, &rewards);
        // d ln Q / dz is (1 − p) for the positive action and −p otherwise.
        let dlnq = if action == 1 { 1.0 - p } else { -p };
        let grad_logit = -reward * dlnq;
        let z_after = z - step * grad_logit;
        ActionOutcome {
            action,
            chance: epsilon / 2.0 + if action == greedy { 1.0 - epsilon } else { 0.0 },
            reward,
            q,
            loss: -reward * q.max(PROB_FLOOR).ln(),
            grad_logit,
            p_after: 1.0 / (1.0 + (-z_after).exp()),
        }
    };
    let outcomes = [outcome(0), outcome(1)];
    let expected_loss = outcomes.iter().map(|o| o.chance * o.loss).sum();
    Ok(RewardDemo { greedy_action: greedy, outcomes, expected_loss })
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn reward_explorer_json(p: f64, label: u8, tp: f64, tn: f64, fp: f64, fn_: f64, epsilon: f64, step: f64) -> String {
    to_json(reward_demo(p, label, Rewards { tp, tn, fp, fn_ }, epsilon, step))
}
