use csi_mtl::analytics::*;
use csi_mtl::channel_gen::{draw_paths, user_position, ArrayConfig, SubregionConfig};
use csi_mtl::pipeline::prepare_cell;
use csi_mtl::preprocess::AngleDelayCsi;
use csi_mtl::rng::sample_seed;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(n_tx: usize, n_c: usize, seed: u64) -> AngleDelayCsi {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AngleDelayCsi {
        n_tx,
        n_c,
        data: (0..2 * n_tx * n_c).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        task_id: 1,
    }
}

/// Square-and-sum over the flat `[2][N_t][N_c]` buffer, indexed by hand.
fn profile_oracle(h: &AngleDelayCsi) -> (Vec<f64>, Vec<f64>) {
    let (nt, nc) = (h.n_tx, h.n_c);
    let mut pas = vec![0.0; nt];
    let mut pdp = vec![0.0; nc];
    for (i, v) in h.data.iter().enumerate() {
        let within = i % (nt * nc);
        let (a, d) = (within / nc, within % nc);
        pas[a] += v * v;
        pdp[d] += v * v;
    }
    (pas.iter().map(|v| v / nt as f64).collect(), pdp.iter().map(|v| v / nc as f64).collect())
}

/// Two-pass sample covariance.
fn textbook_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxy / (n - 1.0)) / ((sxx / (n - 1.0)) * (syy / (n - 1.0))).sqrt()
}

proptest! {
    #[test]
    fn energy_identities(nt in 1usize..9, nc in 1usize..9, seed in any::<u64>()) {
        let h = random_tensor(nt, nc, seed);
        let energy: f64 = h.data.iter().map(|v| v * v).sum();
        let sp: f64 = pas(&h).values.iter().sum();
        let sd: f64 = pdp(&h).values.iter().sum();
        prop_assert!((nt as f64 * sp - energy).abs() <= 1e-9 * energy);
        prop_assert!((nc as f64 * sd - energy).abs() <= 1e-9 * energy);
    }

    #[test]
    fn pearson_is_affine_invariant(seed in any::<u64>(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<Vec<f64>> = (0..4).map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let r = pearson_matrix(&samples).unwrap();
        let mut moved = samples.clone();
        moved[2] = moved[2].iter().map(|v| scale * v + shift).collect();
        let s = pearson_matrix(&moved).unwrap();
        for i in 0..4 {
            prop_assert_eq!(r.get(i, i), 1.0);
            for j in 0..4 {
                prop_assert_eq!(r.get(i, j), r.get(j, i));
                prop_assert!((r.get(i, j) - s.get(i, j)).abs() < 1e-12);
                prop_assert!(r.get(i, j).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn histograms_integrate_to_one(seed in any::<u64>(), bins in 1usize..50, n in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..7.0)).collect();
        let h = histogram(&v, bins).unwrap();
        prop_assert!((h.integral() - 1.0).abs() < 1e-9);
        prop_assert!(h.density.iter().all(|&d| d >= 0.0));
    }
}

#[test]
fn profiles_match_direct_summation() {
    let h = random_tensor(4, 4, 3);
    let (p, d) = profile_oracle(&h);
    for (a, b) in pas(&h).values.iter().zip(&p) {
        assert!((a - b).abs() < 1e-14);
    }
    for (a, b) in pdp(&h).values.iter().zip(&d) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn sparse_profiles() {
    let mut h = random_tensor(6, 5, 0);
    h.data.iter_mut().for_each(|v| *v = 0.0);
    assert!(pas(&h).values.iter().all(|&v| v == 0.0));
    assert!(pdp(&h).values.iter().all(|&v| v == 0.0));
    // Angle bin 3, delay bin 1, imaginary plane.
    h.data[30 + 3 * 5 + 1] = 2.0;
    let p = pas(&h);
    let d = pdp(&h);
    assert_eq!(p.peak(), 3);
    assert_eq!(p.values.iter().filter(|&&v| v > 0.0).count(), 1);
    assert_eq!(d.peak(), 1);
    assert_eq!(d.values.iter().filter(|&&v| v > 0.0).count(), 1);
}

#[test]
fn pearson_matches_textbook_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let samples: Vec<Vec<f64>> = (0..3).map(|_| (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let r = pearson_matrix(&samples).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((r.get(i, j) - textbook_pearson(&samples[i], &samples[j])).abs() < 1e-12);
        }
    }
    let x = samples[0].clone();
    let lin = pearson_matrix(&[x.clone(), x.iter().map(|v| 2.0 * v + 3.0).collect(), x.iter().map(|v| -v).collect()]).unwrap();
    assert!((lin.get(0, 1) - 1.0).abs() < 1e-12);
    assert!((lin.get(0, 2) + 1.0).abs() < 1e-12);
    let flat = pearson_matrix(&[x, vec![1.0; 8]]).unwrap();
    assert_eq!((flat.flagged.clone(), flat.get(0, 1)), (vec![1], 0.0));
}

#[test]
fn uniform_draws_fill_bins_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let v: Vec<f64> = (0..100_000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let h = histogram(&v, 10).unwrap();
    let max = h.density.iter().copied().fold(0.0, f64::max);
    let min = h.density.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(max / min < 1.1, "ratio {}", max / min);
    let single = histogram(&[4.0; 7], 5).unwrap();
    assert_eq!(single.density.iter().filter(|&&d| d > 0.0).count(), 1);
}

#[test]
fn coverage_interval_cases() {
    let one_hot = |i: usize| FeatureVector {
        kind: FeatureKind::Pdp,
        values: (0..10).map(|j| if i == j { 1.0 } else { 0.0 }).collect(),
        source: None,
    };
    assert_eq!(coverage_interval(&[one_hot(5)], 0.95).unwrap(), (5, 5));
    assert_eq!(coverage_interval(&[one_hot(5)], 0.2).unwrap(), (5, 5));
    let uniform = FeatureVector {
        kind: FeatureKind::Pdp,
        values: vec![1.0; 10],
        source: None,
    };
    assert_eq!(coverage_interval(std::slice::from_ref(&uniform), 0.95).unwrap(), (0, 9));
    assert_eq!(coverage_interval(std::slice::from_ref(&uniform), 0.3).unwrap(), (0, 2));
    assert!(coverage_interval(&[uniform.clone()], 0.0).is_err());
    assert!(coverage_interval(&[uniform], 1.5).is_err());
}

#[test]
fn delay_interval_covers_recorded_cluster_delays() {
    let cfg = ArrayConfig::default();
    let region = SubregionConfig {
        task_id: 1,
        center: [50.0, 10.0],
        diameter: 10.0,
        cluster_count: 2,
        los: false,
        aod_range: [0.1, 0.4],
        delay_range: [0.6e-6, 1.8e-6],
        sample_count: 200,
        angular_spread: 0.03,
        delay_spread: 20e-9,
        subpaths: 10,
        // Flat amplitude profile so both clusters carry comparable energy.
        amplitude_decay: 1.0,
    };
    let prepared = prepare_cell(std::slice::from_ref(&region), &cfg, 32, 20.0, 4, [1.0, 0.0, 0.0]).unwrap();
    let zero = prepared.norm.zero_level();
    let task = &prepared.tasks[0];
    let features: Vec<FeatureVector> = (0..task.all.len())
        .map(|i| pdp(&centered(&task.sample(i, 32, 32), zero)))
        .collect();
    let (lo, hi) = coverage_interval(&features, 0.95).unwrap();

    let mut delays = Vec::new();
    for i in 0..region.sample_count {
        let seed = sample_seed(4, 1, i);
        assert_eq!(seed, task.seeds[i]);
        let draws = draw_paths(&region, user_position(&region, seed), seed, &cfg).unwrap();
        delays.extend(draws.subpaths.iter().map(|p| p.delay / cfg.delay_resolution()));
    }
    delays.sort_by(f64::total_cmp);
    let q = |f: f64| delays[((delays.len() - 1) as f64 * f) as usize];
    // A path at fractional bin position x peaks in bin round(x).
    let (d_lo, d_hi) = (q(0.05), q(0.95));
    assert!(lo as f64 <= d_lo.round() && hi as f64 >= d_hi.round(), "interval [{lo}, {hi}] vs draws [{d_lo}, {d_hi}]");
    // Nothing reaches far beyond the drawn support.
    assert!(hi as f64 <= delays[delays.len() - 1].ceil() + 3.0);
}
