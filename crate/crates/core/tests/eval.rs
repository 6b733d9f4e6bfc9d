use flarecdr::eval::*;
use flarecdr::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn random_case(n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
    labels[0] = 0;
    labels[1] = 1;
    let probs = (0..n)
        .map(|_| {
            // Some probabilities land exactly on scan thresholds.
            if rng.random_bool(0.2) {
                f64::from(rng.random_range(0..=100u32)) / 100.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    (probs, labels)
}

#[test]
fn confusion_matches_loop_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p: Vec<u8> = (0..50).map(|_| rng.random_range(0..2)).collect();
    let y: Vec<u8> = (0..50).map(|_| rng.random_range(0..2)).collect();
    let cm = confusion(&p, &y).unwrap();
    let mut want = [0usize; 4];
    for i in 0..50 {
        let k = match (p[i] == 1, y[i] == 1) {
            (true, true) => 0,
            (false, false) => 1,
            (true, false) => 2,
            (false, true) => 3,
        };
        want[k] += 1;
    }
    assert_eq!([cm.tp, cm.tn, cm.fp, cm.fn_], want);
    assert_eq!(cm.total(), 50);
}

#[test]
fn brier_hand_arithmetic() {
    let b = brier_skill(&[0.8, 0.4, 0.1], &[1, 0, 0]).unwrap();
    assert!((b.bs - 0.07).abs() < 1e-15);
    let ybar = 1.0 / 3.0;
    let reference = ((1.0 - ybar) * (1.0 - ybar) + 2.0 * ybar * ybar) / 3.0;
    assert!((b.bss - (1.0 - 0.07 / reference)).abs() < 1e-14);
    assert!((b.climatology - ybar).abs() < 1e-15);
}

#[test]
fn climatology_forecast_has_zero_skill() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (_, labels) = random_case(40, &mut rng);
        let ybar = labels.iter().map(|&y| f64::from(y)).sum::<f64>() / 40.0;
        let b = brier_skill(&vec![ybar; 40], &labels).unwrap();
        assert!(b.bss.abs() < 1e-12, "{}", b.bss);
    }
}

#[test]
fn scan_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (probs, labels) = random_case(37, &mut rng);
        let scan = threshold_scan(&probs, &labels).unwrap();
        assert_eq!(scan.points.len(), 101);
        for k in 0..=100usize {
            let theta = k as f64 / 100.0;
            let (mut tp, mut fn_, mut fp, mut tn) = (0.0, 0.0, 0.0, 0.0);
            for (p, y) in probs.iter().zip(&labels) {
                match (*p >= theta, *y == 1) {
                    (true, true) => tp += 1.0,
                    (false, true) => fn_ += 1.0,
                    (true, false) => fp += 1.0,
                    (false, false) => tn += 1.0,
                }
            }
            let want = tp / (tp + fn_) - fp / (fp + tn);
            assert_eq!(scan.points[k].threshold_pct as usize, k);
            assert_eq!(scan.points[k].tss, want);
        }
        assert_eq!(scan.points[0].tss, 0.0);
    }
}

#[test]
fn scan_reaches_one_on_separated_probabilities() {
    let probs = [0.05, 0.12, 0.3, 0.41, 0.62, 0.7, 0.93];
    let labels = [0, 0, 0, 0, 1, 1, 1];
    let scan = threshold_scan(&probs, &labels).unwrap();
    let best = scan.best();
    assert_eq!(best.tss, 1.0);
    assert!(best.threshold_pct > 0 && best.threshold_pct < 100);
    // First threshold above every probability predicts nothing positive.
    assert_eq!(scan.points[94].tss, 0.0);
}

#[test]
fn aggregate_matches_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let reports: Vec<MetricReport> = (0..10)
        .map(|_| {
            let (p, y) = random_case(30, &mut rng);
            MetricReport::compute(&p, &y, 0.5).unwrap()
        })
        .collect();
    let agg = aggregate_folds(&reports).unwrap();
    let tss: Vec<f64> = reports.iter().map(|r| r.tss).collect();
    let mean = tss.iter().sum::<f64>() / 10.0;
    let var = tss.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 9.0;
    assert!((agg.tss.mean - mean).abs() < 1e-14);
    assert!((agg.tss.std - var.sqrt()).abs() < 1e-14);
    assert_eq!(agg.folds, 10);

    let same = aggregate_folds(&[reports[0], reports[0]]).unwrap();
    assert_eq!(same.bss.std, 0.0);
    assert!(aggregate_folds(&reports[..1]).is_err());
}

#[test]
fn tss_identity_holds_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (p, y) = random_case(25, &mut rng);
        let r = MetricReport::compute(&p, &y, rng.random()).unwrap();
        assert_eq!(r.tss, r.recall - r.fpr);
        assert!((0.0..=1.0).contains(&r.bs) && r.bss <= 1.0);
    }
}

#[test]
fn ttest_matches_textbook_formula() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [1.1, 1.9, 3.2, 3.8, 5.1];
    let r = paired_ttest(&a, &b).unwrap();
    let d = [-0.1, 0.1, -0.2, 0.2, -0.1];
    let mean = d.iter().sum::<f64>() / 5.0;
    let sd = (d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0).sqrt();
    let t = mean / (sd / 5f64.sqrt());
    let dist = StudentsT::new(0.0, 1.0, 4.0).unwrap();
    let p = 2.0 * dist.cdf(-t.abs());
    assert!((r.t - t).abs() < 1e-10);
    assert!((r.p_value - p).abs() < 1e-10, "{} vs {p}", r.p_value);
    assert_eq!(r.df, 4);
}

#[test]
fn t_tail_matches_reference_distribution() {
    for df in [1.0, 2.0, 3.0, 4.0, 9.0, 29.0, 120.0] {
        let dist = StudentsT::new(0.0, 1.0, df).unwrap();
        for t in [0.0, 0.01, 0.5, 1.0, 1.96, 2.5, 4.0, 10.0, 50.0] {
            let want = 2.0 * dist.cdf(-t);
            let got = student_t_sf(t, df);
            assert!((got - want).abs() < 1e-10, "df {df} t {t}: {got} vs {want}");
        }
    }
}

#[test]
fn t_tail_matches_quadrature() {
    // Simpson integration of the t density over [0, t].
    let density = |x: f64, v: f64| {
        let c = statrs::function::gamma::gamma((v + 1.0) / 2.0)
            / ((v * std::f64::consts::PI).sqrt() * statrs::function::gamma::gamma(v / 2.0));
        c * (1.0 + x * x / v).powf(-(v + 1.0) / 2.0)
    };
    for (t, v) in [(1.3, 5.0), (2.2, 9.0)] {
        let n = 20000;
        let h = t / n as f64;
        let mut s = density(0.0, v) + density(t, v);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * density(i as f64 * h, v);
        }
        let central = s * h / 3.0;
        assert!((student_t_sf(t, v) - (1.0 - 2.0 * central)).abs() < 1e-10);
    }
}

#[test]
fn ttest_null_and_degenerate() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
    let noise = [1e-6, -1e-6, 2e-6, -2e-6, 1e-6, -1e-6, 3e-6, -3e-6, 5e-7, -5e-7];
    let a: Vec<f64> = b.iter().zip(noise).map(|(x, e)| x + e).collect();
    assert!(paired_ttest(&a, &b).unwrap().p_value > 0.99);
    assert!(matches!(
        paired_ttest(&[2.0; 4], &[1.0; 4]),
        Err(Error::UndefinedMetric(_))
    ));
}

proptest! {
    #[test]
    fn metrics_are_permutation_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, y) = random_case(20, &mut rng);
        let mut idx: Vec<usize> = (0..20).collect();
        idx.shuffle(&mut rng);
        let p2: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        let y2: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
        let a = MetricReport::compute(&p, &y, 0.5).unwrap();
        let b = MetricReport::compute(&p2, &y2, 0.5).unwrap();
        prop_assert_eq!(a.counts, b.counts);
        prop_assert_eq!(a.tss, b.tss);
        prop_assert!((a.bss - b.bss).abs() < 1e-12);
        prop_assert_eq!(threshold_scan(&p, &y).unwrap(), threshold_scan(&p2, &y2).unwrap());
    }

    #[test]
    fn ttest_is_antisymmetric(seed in any::<u64>(), n in 2usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ab = paired_ttest(&a, &b).unwrap();
        let ba = paired_ttest(&b, &a).unwrap();
        prop_assert_eq!(ab.t, -ba.t);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-15);
    }
}
