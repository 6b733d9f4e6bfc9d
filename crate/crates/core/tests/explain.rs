use std::cell::Cell;

use flarecdr::dataset::{generate_synthetic, StandardizationStats, SynthConfig};
use flarecdr::explain::*;
use flarecdr::models::{Model, ModelConfig, TransformerConfig};
use flarecdr::tensor::Tensor;
use flarecdr::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Nonlinear 4-channel toy model with interactions.
fn toy(x: &Tensor) -> f64 {
    let m: Vec<f64> = (0..4).map(|j| (0..x.rows()).map(|t| x.get2(t, j)).sum::<f64>() / x.rows() as f64).collect();
    (m[0] * m[1] + (m[2] * 1.3).sin() - 0.4 * m[3] * m[3] * m[0] + m[1].exp() * 0.1).tanh()
}

fn random_instance(t: usize, f: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(vec![t, f], (0..t * f).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn permutations(items: Vec<usize>) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.clone();
        let head = rest.remove(i);
        for mut p in permutations(rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// Average marginal contribution over every player ordering.
fn permutation_oracle(model: &dyn Fn(&Tensor) -> f64, x: &Tensor, bg: &Background) -> Vec<f64> {
    let f = x.cols();
    let orders = permutations((0..f).collect());
    let mut phi = vec![0.0; f];
    for order in &orders {
        let mut members = Vec::new();
        let mut prev = coalition_value(&model, x, &members, bg).unwrap();
        for &i in order {
            members.push(i);
            let cur = coalition_value(&model, x, &members, bg).unwrap();
            phi[i] += cur - prev;
            prev = cur;
        }
    }
    phi.iter().map(|p| p / orders.len() as f64).collect()
}

#[test]
fn matches_permutation_oracle_on_toy_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let x = random_instance(5, 4, &mut rng);
        let bg = Background::Vector((0..4).map(|_| rng.random_range(-0.5..0.5)).collect());
        let a = exact_shapley(&toy, 0, &x, &bg).unwrap();
        let oracle = permutation_oracle(&toy, &x, &bg);
        assert_eq!(permutations((0..4).collect()).len(), 24);
        for (p, o) in a.phi.iter().zip(&oracle) {
            assert!((p - o).abs() < 1e-12, "{p} vs {o}");
        }
    }
}

#[test]
fn matches_permutation_oracle_up_to_five_players() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for f in 1..=5 {
        let w: Vec<f64> = (0..f * f).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = move |x: &Tensor| {
            let m: Vec<f64> = (0..f).map(|j| x.get2(0, j) + x.get2(1, j)).collect();
            let mut s = 0.0;
            for i in 0..f {
                for j in 0..f {
                    s += w[i * f + j] * m[i] * m[j].max(0.0);
                }
            }
            1.0 / (1.0 + (-s).exp())
        };
        let x = random_instance(2, f, &mut rng);
        let a = exact_shapley(&model, 0, &x, &Background::Zero).unwrap();
        let oracle = permutation_oracle(&model, &x, &Background::Zero);
        for (p, o) in a.phi.iter().zip(&oracle) {
            assert!((p - o).abs() < 1e-12);
        }
    }
}

#[test]
fn ignored_channel_never_changes_value() {
    // Depends on channels 0, 1 and 3 only.
    let model = |x: &Tensor| (x.get2(0, 0) * x.get2(1, 1)).sin() + x.get2(2, 3).powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_instance(3, 4, &mut rng);
    let bg = Background::Vector(vec![0.3, 0.3, 0.3, 0.3]);
    for mask in 0u32..16 {
        let s: Vec<usize> = (0..4).filter(|i| mask >> i & 1 == 1).collect();
        let mut with2 = s.clone();
        if !with2.contains(&2) {
            with2.push(2);
        }
        let without2: Vec<usize> = s.iter().copied().filter(|&i| i != 2).collect();
        assert_eq!(
            coalition_value(&model, &x, &with2, &bg).unwrap(),
            coalition_value(&model, &x, &without2, &bg).unwrap()
        );
    }
    let a = exact_shapley(&model, 0, &x, &bg).unwrap();
    assert!(a.phi[2].abs() < 1e-12);
}

#[test]
fn dummy_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut x = random_instance(4, 5, &mut rng);
    // Channel 4 equals the background everywhere.
    for t in 0..4 {
        x.data_mut()[t * 5 + 4] = 0.0;
    }
    // Channels 0 and 1 play identical roles in a symmetric model.
    for t in 0..4 {
        x.data_mut()[t * 5 + 1] = x.get2(t, 0);
    }
    let model = |x: &Tensor| {
        let s = |j: usize| (0..x.rows()).map(|t| x.get2(t, j)).sum::<f64>();
        (s(0) * s(1) + s(2)).tanh() + 0.3 * s(3) * s(4) + s(0).powi(2) + s(1).powi(2)
    };
    let a = exact_shapley(&model, 0, &x, &Background::Zero).unwrap();
    assert!(a.phi[4].abs() < 1e-12);
    assert!((a.phi[0] - a.phi[1]).abs() < 1e-12);
}

struct Counting<'a> {
    model: &'a Model,
    calls: Cell<usize>,
}

impl ProbabilityModel for Counting<'_> {
    fn predict_batch(&self, xs: &[&Tensor]) -> Result<Vec<f64>> {
        self.calls.set(self.calls.get() + xs.len());
        self.model.predict_proba_batch(xs)
    }
}

#[test]
fn efficiency_on_fifty_synthetic_ars() {
    let data = generate_synthetic(&SynthConfig { counts: [20, 15, 10, 5], ..Default::default() }, 5).unwrap();
    let refs: Vec<_> = data.records.iter().collect();
    let stats = StandardizationStats::fit(&refs).unwrap();
    let cfg = TransformerConfig {
        d_model: 8,
        heads: 2,
        encoder_blocks: 1,
        mlp_hidden: 8,
        head_hidden: vec![8],
        ..TransformerConfig::default()
    };
    let model = Model::init(&ModelConfig::Transformer(cfg), 3).unwrap();
    let counting = Counting { model: &model, calls: Cell::new(0) };
    let mut attributions = Vec::new();
    for r in &data.records {
        let inst = stats.apply(r).unwrap();
        let before = counting.calls.get();
        let a = exact_shapley(&counting, r.ar_id, &inst.x, &Background::Zero).unwrap();
        assert_eq!(counting.calls.get() - before, 1024);
        assert_eq!(a.evaluations, 1024);
        let total = a.base_value + a.phi.iter().sum::<f64>();
        assert!((total - a.f_x).abs() < 1e-9, "ar {}: {total} vs {}", r.ar_id, a.f_x);
        assert_eq!(a.f_x, model.predict_proba(&inst.x).unwrap());
        assert_eq!(a.base_value, model.predict_proba(&Tensor::zeros(&[40, 10])).unwrap());
        let steps = waterfall_data(&a);
        assert!((steps.last().unwrap().end - a.f_x).abs() < 1e-9);
        attributions.push(a);
    }
    assert_eq!(attributions.len(), 50);

    let global = global_importance(&attributions).unwrap();
    for (i, g) in global.iter().enumerate() {
        let want = attributions.iter().map(|a| a.phi[i].abs()).sum::<f64>() / 50.0;
        assert!((g - want).abs() < 1e-15);
    }
}

fn attribution(ar_id: u64, phi: Vec<f64>) -> Attribution {
    let base = 0.3;
    let f_x = base + phi.iter().sum::<f64>();
    Attribution { ar_id, base_value: base, phi, f_x, evaluations: 0 }
}

#[test]
fn global_importance_cases() {
    let one = attribution(1, vec![0.2, -0.1]);
    assert_eq!(global_importance(std::slice::from_ref(&one)).unwrap(), vec![0.2, 0.1]);
    let two = attribution(2, vec![-0.2, 0.1]);
    assert_eq!(global_importance(&[one, two]).unwrap(), vec![0.2, 0.1]);
    assert!(global_importance(&[]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let many: Vec<Attribution> = (0..20)
        .map(|i| attribution(i, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let g = global_importance(&many).unwrap();
    for (j, gj) in g.iter().enumerate() {
        let mut s = 0.0;
        for a in &many {
            s += if a.phi[j] < 0.0 { -a.phi[j] } else { a.phi[j] };
        }
        assert!((gj - s / 20.0).abs() < 1e-15);
    }
}

#[test]
fn waterfall_ordering_and_totals() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = attribution(1, (0..10).map(|_| rng.random_range(-1.0..1.0)).collect());
    let steps = waterfall_data(&a);
    let mut mags: Vec<f64> = a.phi.iter().map(|p| p.abs()).collect();
    mags.sort_by(|x, y| y.partial_cmp(x).unwrap());
    assert_eq!(steps.iter().map(|s| s.phi.abs()).collect::<Vec<_>>(), mags);
    assert_eq!(steps[0].start, a.base_value);
    for w in steps.windows(2) {
        assert_eq!(w[0].end, w[1].start);
    }
    assert!((steps[9].end - a.f_x).abs() < 1e-9);

    let flat = attribution(2, vec![0.0; 3]);
    assert!(waterfall_data(&flat).iter().all(|s| s.start == 0.3 && s.end == 0.3));
}

#[test]
fn beeswarm_rows_match_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let attrs: Vec<Attribution> = (0..6)
        .map(|i| attribution(100 + i, (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let series: Vec<Tensor> = (0..6).map(|_| random_instance(40, 3, &mut rng)).collect();
    let refs: Vec<&Tensor> = series.iter().collect();
    let rows = beeswarm_data(&attrs, &refs).unwrap();
    assert_eq!(rows.len(), 18);
    let mean = |s: &Tensor, j: usize| s.data().iter().skip(j).step_by(3).sum::<f64>() / 40.0;
    for j in 0..3 {
        let ms: Vec<f64> = series.iter().map(|s| mean(s, j)).collect();
        let lo = ms.iter().cloned().fold(f64::MAX, f64::min);
        let hi = ms.iter().cloned().fold(f64::MIN, f64::max);
        for (n, a) in attrs.iter().enumerate() {
            let row = rows.iter().find(|r| r.ar_id == a.ar_id && r.feature == j).unwrap();
            assert_eq!(row.phi, a.phi[j]);
            assert!((row.magnitude - (ms[n] - lo) / (hi - lo)).abs() < 1e-12);
        }
    }
}
