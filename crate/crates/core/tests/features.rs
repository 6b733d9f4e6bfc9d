use flarecdr::features::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_grid(h: usize, w: usize, da: f64, rng: &mut ChaCha8Rng) -> FieldGrid {
    FieldGrid::new(h, w, (0..h * w).map(|_| rng.random_range(-50.0..50.0)).collect(), da).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn gradient_stats_match_explicit_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = random_grid(8, 8, 1.0, &mut rng);
    let v: Vec<Vec<f64>> = (0..8).map(|y| (0..8).map(|x| g.at(y, x)).collect()).collect();
    let mut mag = Vec::new();
    for y in 0..8 {
        for x in 0..8 {
            let gx = match x {
                0 => v[y][1] - v[y][0],
                7 => v[y][7] - v[y][6],
                _ => 0.5 * v[y][x + 1] - 0.5 * v[y][x - 1],
            };
            let gy = match y {
                0 => v[1][x] - v[0][x],
                7 => v[7][x] - v[6][x],
                _ => 0.5 * v[y + 1][x] - 0.5 * v[y - 1][x],
            };
            mag.push((gx * gx + gy * gy).sqrt());
        }
    }
    let n = mag.len() as f64;
    let mean = mag.iter().sum::<f64>() / n;
    let var = mag.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    let skew = mag.iter().map(|m| ((m - mean) / sd).powi(3)).sum::<f64>() / n;
    let kurt = mag.iter().map(|m| ((m - mean) / sd).powi(4)).sum::<f64>() / n - 3.0;
    let mut sorted = mag.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = 0.5 * (sorted[31] + sorted[32]);
    let want = [mean, sd, median, sorted[0], sorted[63], skew, kurt];
    let got = gradient_stats(&g).unwrap().to_array();
    for (i, (a, b)) in got.iter().zip(want).enumerate() {
        assert!(close(*a, b, 1e-12), "stat {i}: {a} vs {b}");
    }
}

#[test]
fn haar_parseval_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let g = random_grid(32, 32, 1.0, &mut rng);
        let d = haar_decompose(&g, 5).unwrap();
        let total: f64 = g.values().iter().map(|v| v * v).sum();
        assert_eq!(d.total_energy, total);
        let recon = d.detail_energy.iter().sum::<f64>() + d.approx_energy;
        assert!((recon - total).abs() <= 1e-9 * total, "{recon} vs {total}");
    }
}

#[test]
fn haar_parseval_after_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = random_grid(13, 21, 1.0, &mut rng);
    let d = haar_decompose(&g, 3).unwrap();
    let recon = d.detail_energy.iter().sum::<f64>() + d.approx_energy;
    assert!((recon - d.total_energy).abs() <= 1e-9 * d.total_energy);
    assert!(d.total_energy > g.values().iter().map(|v| v * v).sum::<f64>());
}

#[test]
fn haar_two_by_two_explicit_coefficients() {
    let g = FieldGrid::from_rows(&[vec![1.0, -1.0], vec![1.0, -1.0]], 1.0).unwrap();
    // Explicit 2×2 Haar coefficients: horizontal, vertical and diagonal differences.
    let (a, b, c, d) = (1.0, -1.0, 1.0, -1.0);
    let horiz = ((a + c) - (b + d)) / 2.0;
    let vert = ((a + b) - (c + d)) / 2.0;
    let diag = ((a + d) - (b + c)) / 2.0;
    let level1 = horiz * horiz + vert * vert + diag * diag;
    assert_eq!(level1, 4.0);
    assert_eq!(haar_energies(&g, 1).unwrap(), vec![level1]);
}

fn sharp_oracle(m: &VectorFieldMaps) -> [f64; 8] {
    let (h, w, da) = (m.bz.height(), m.bz.width(), m.bz.pixel_area());
    let n = (h * w) as f64;
    let mut r = [0.0; 8];
    let (mut hel, mut pos, mut neg, mut shear) = (0.0, 0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (bz, jz) = (m.bz.at(y, x), m.jz.at(y, x));
            r[0] += jz.abs() * da;
            r[1] += (bz * jz).abs();
            let diff = m.b_obs.at(y, x) - m.b_pot.at(y, x);
            r[2] += diff * diff * da;
            hel += bz * jz;
            if bz > 0.0 {
                pos += jz * da;
            }
            if bz < 0.0 {
                neg += jz * da;
            }
            r[5] += bz.abs() * da;
            r[6] += diff * diff;
            if m.shear_deg.at(y, x) > 45.0 {
                shear += 1.0;
            }
        }
    }
    r[3] = hel.abs();
    r[4] = pos.abs() + neg.abs();
    r[6] /= n;
    r[7] = shear / n;
    r
}

fn random_maps(rng: &mut ChaCha8Rng) -> VectorFieldMaps {
    let (h, w) = (rng.random_range(2..12), rng.random_range(2..12));
    let da = rng.random_range(0.1..3.0);
    let mut grids: Vec<FieldGrid> = (0..5).map(|_| random_grid(h, w, da, rng)).collect();
    grids[2] = FieldGrid::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..90.0)).collect(), da).unwrap();
    VectorFieldMaps::from_grids(grids).unwrap()
}

#[test]
fn sharp_sums_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let m = random_maps(&mut rng);
        let got = sharp_sums(&m).to_array();
        let want = sharp_oracle(&m);
        for (i, (a, b)) in got.iter().zip(want).enumerate() {
            assert!(close(*a, b, 1e-12), "{}: {a} vs {b}", SHARP_NAMES[i]);
        }
    }
}

#[test]
fn flux_identity_on_random_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = random_grid(17, 9, 1.0, &mut rng);
    let f = flux_features(&g);
    let direct: f64 = g.values().iter().sum();
    assert_eq!(f.signed, f.positive + f.negative);
    assert!((f.signed - direct).abs() < 1e-12 * f.unsigned);
}

proptest! {
    #[test]
    fn sharp_invariants(seed in any::<u64>(), lambda in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_maps(&mut rng);
        let s = sharp_sums(&m);
        prop_assert!(s.TOTUSJH >= s.ABSNJZH);
        prop_assert!((0.0..=1.0).contains(&s.SHRGT45));
        prop_assert!(s.USFLUX >= 0.0 && s.TOTUSJZ >= 0.0 && s.TOTPOT >= 0.0);

        let bz = FieldGrid::new(
            m.bz.height(), m.bz.width(),
            m.bz.values().iter().map(|v| v * lambda).collect(),
            m.bz.pixel_area(),
        ).unwrap();
        let scaled = VectorFieldMaps::new(bz, m.jz.clone(), m.shear_deg.clone(), m.b_obs.clone(), m.b_pot.clone()).unwrap();
        let t = sharp_sums(&scaled);
        prop_assert!(close(t.USFLUX, lambda * s.USFLUX, 1e-12));
        prop_assert_eq!(t.SHRGT45, s.SHRGT45);
    }

    #[test]
    fn haar_energies_nonnegative(seed in any::<u64>(), h in 1usize..20, w in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grid(h, w, 1.0, &mut rng);
        let d = haar_decompose(&g, 5).unwrap();
        prop_assert!(d.detail_energy.iter().all(|e| *e >= 0.0));
        let recon = d.detail_energy.iter().sum::<f64>() + d.approx_energy;
        prop_assert!((recon - d.total_energy).abs() <= 1e-9 * d.total_energy.max(1e-300));
    }
}
