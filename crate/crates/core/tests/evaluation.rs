use csi_mtl::deployment::*;
use csi_mtl::evaluation::*;
use csi_mtl::models::*;
use csi_nn::{count_flops, count_params};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix, eigenvalues descending.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|r| v[r][i]).collect()).collect();
    (values, vectors)
}

fn covariance(codes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = codes.len() as f64;
    let d = codes[0].len();
    let mean: Vec<f64> = (0..d).map(|j| codes.iter().map(|c| c[j]).sum::<f64>() / n).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| codes.iter().map(|c| (c[i] - mean[i]) * (c[j] - mean[j])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect()
}

#[test]
fn nmse_by_hand() {
    // Sample 1: ||h||^2 = 5, error 1. Sample 2: ||h||^2 = 4, error 1.
    let h = TaskData::new(1, 2, vec![1.0, 2.0, 0.0, 2.0]);
    let g = TaskData::new(1, 2, vec![1.0, 1.0, 1.0, 2.0]);
    let expected = 10.0 * ((0.2 + 0.25) / 2.0f64).log10();
    let got = nmse_db(&h, &g, 0.0).unwrap();
    assert!((got.db - expected).abs() < 1e-9);
    // The same data offset by a center level.
    let shift = |d: &TaskData| TaskData::new(1, 2, d.data.iter().map(|v| v + 0.5).collect());
    assert!((nmse_db(&shift(&h), &shift(&g), 0.5).unwrap().db - expected).abs() < 1e-6);
}

proptest! {
    #[test]
    fn nmse_ignores_sample_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 6;
        let h: Vec<f32> = (0..n * 4).map(|_| rng.gen_range(0.1..1.0)).collect();
        let g: Vec<f32> = h.iter().map(|v| v + rng.gen_range(-0.05..0.05)).collect();
        let a = nmse_db(&TaskData::new(1, 4, h.clone()), &TaskData::new(1, 4, g.clone()), 0.0).unwrap().db;
        let perm: Vec<usize> = (0..n).rev().collect();
        let ph = TaskData::new(1, 4, h).subset(&perm);
        let pg = TaskData::new(1, 4, g).subset(&perm);
        let b = nmse_db(&ph, &pg, 0.0).unwrap().db;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn explained_variance_is_ordered(seed in any::<u64>(), n in 5usize..30, d in 2usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codes: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|j| rng.gen_range(-1.0..1.0) * (j + 1) as f64).collect()).collect();
        let e = pca_embed(&codes, 2).unwrap();
        prop_assert!(e.explained[0] >= e.explained[1]);
        prop_assert!(e.explained[1] >= 0.0);
    }
}

#[test]
fn uniform_guessing_hits_one_in_five() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let routes: Vec<Vec<usize>> = (0..5).map(|_| (0..2000).map(|_| rng.gen_range(0..5)).collect()).collect();
    let acc = gate_accuracy(&routes);
    let mean = acc.iter().sum::<f64>() / 5.0;
    assert!((mean - 20.0).abs() < 3.0, "{mean}");
}

#[test]
fn forced_misrouting_shows_up_as_a_gap() {
    let a = ArchSpec::new(Family::SimpleCnn, Ratio::new(1, 4), 4, 4);
    let mut bundle = ModeBundle::new(DeployMode::StoM, a, 3, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = TaskData::new(2, 32, (0..40 * 32).map(|_| rng.gen_range(0.2f32..0.8)).collect());
    // One sample in ten goes to decoder 3 instead of decoder 2.
    let routes: Vec<usize> = (0..40).map(|i| if i % 10 == 0 { 2 } else { 1 }).collect();
    let wrong = reconstruct(&bundle, &data, Routing::Explicit(routes.clone()), 8).unwrap();
    let right = reconstruct(&bundle, &data, Routing::Oracle, 8).unwrap();
    let gap = nmse_db(&data, &wrong.data, 0.0).unwrap().db - nmse_db(&data, &right.data, 0.0).unwrap().db;
    assert!(gap.abs() > 0.0);
    assert_eq!(gate_accuracy(&[vec![], routes.iter().map(|&r| r).collect()])[1], 90.0);

    // The same gap through the evaluation path, with a GateNet that always picks decoder 3.
    let mut gate = csi_nn::Model::zeroed(build_gatenet(a.code_len().unwrap(), 3).unwrap()).unwrap();
    let view = gate.params_mut().view_mut("gate.bn3.beta").unwrap();
    view.copy_from_slice(&[0.0, 0.0, 1.0]);
    bundle.gatenet = Some(gate);
    let all = [
        TaskData::new(1, 32, data.data.clone()),
        data.clone(),
        TaskData::new(3, 32, data.data.clone()),
    ];
    let evals = evaluate_bundle(&bundle, &[&all[0], &all[1], &all[2]], 0.0, 8).unwrap();
    assert_eq!(evals[2].accuracy, Some(100.0));
    assert_eq!(evals[1].accuracy, Some(0.0));
    assert_eq!(evals[2].gap_db, 0.0);
    let all_wrong = reconstruct(&bundle, &data, Routing::Explicit(vec![2; 40]), 8).unwrap();
    let expected = nmse_db(&data, &all_wrong.data, 0.0).unwrap().db - nmse_db(&data, &right.data, 0.0).unwrap().db;
    assert!((evals[1].gap_db - expected).abs() < 1e-12);
}

#[test]
fn complexity_table_follows_the_mode_formulas() {
    let csinet = ArchSpec::new(Family::CsiNet, Ratio::new(1, 4), 32, 32);
    let counts = [100, 200, 300, 400, 500];
    let rows = complexity_table(&csinet, &csinet, &counts).unwrap();
    let enc = count_params(&build_encoder(&csinet).unwrap());
    // Shared encoder of about 1.05M parameters versus five of them.
    assert!(((rows[2].encoder_params as f64 / 1e6) - 1.05).abs() <= 0.05 * 1.05);
    assert!(((rows[1].encoder_params as f64 / 1e6) - 5.25).abs() <= 0.05 * 5.25);
    assert_eq!(rows[1].encoder_params, 5 * enc);
    let gate = build_gatenet(512, 5).unwrap();
    let g = 512 * 2048 + 2048 * 512 + 512 * 5;
    let elementwise = 2 * (2048 + 512 + 5);
    assert_eq!(count_flops(&gate).unwrap(), (g + elementwise) as u64);
    let ae = count_flops(&build_encoder(&csinet).unwrap()).unwrap() + count_flops(&build_decoder(&csinet).unwrap()).unwrap();
    assert_eq!(rows[2].online_flops, ae + count_flops(&gate).unwrap());
    assert_eq!(rows[2].training_flops, 1500 * rows[2].online_flops);
    assert_eq!(rows[0].training_flops, 1500 * ae);
    assert!(complexity_table(&csinet, &csinet, &[]).is_err());
}

#[test]
fn pca_matches_jacobi_on_five_points() {
    let codes = vec![
        vec![2.0, 0.5, -1.0],
        vec![-1.0, 1.5, 0.3],
        vec![0.5, -2.0, 1.2],
        vec![1.7, 0.2, 0.9],
        vec![-0.8, -0.4, -2.1],
    ];
    let e = pca_embed(&codes, 2).unwrap();
    let (values, vectors) = jacobi_eigen(covariance(&codes));
    for c in 0..2 {
        assert!((e.explained[c] - values[c]).abs() < 1e-9);
        let dot: f64 = e.components[c].iter().zip(&vectors[c]).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-9);
        let first = e.components[c].iter().find(|x| x.abs() > 1e-12).unwrap();
        assert!(*first > 0.0);
    }
}

#[test]
fn planar_data_keeps_its_distances() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // Points on a tilted plane inside 4-D space.
    let (u, v) = ([0.5, 0.5, 0.5, 0.5], [0.5, -0.5, 0.5, -0.5]);
    let codes: Vec<Vec<f64>> = (0..20)
        .map(|_| {
            let (s, t) = (rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0));
            (0..4).map(|j| 1.0 + s * u[j] + t * v[j]).collect()
        })
        .collect();
    let e = pca_embed(&codes, 2).unwrap();
    assert_eq!(e.degenerate, 0);
    for i in 0..20 {
        for j in 0..20 {
            let orig: f64 = codes[i].iter().zip(&codes[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let emb: f64 = e.points[i].iter().zip(&e.points[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((orig - emb).abs() < 1e-9);
        }
    }
    assert!(pca_embed(&codes[..1], 2).is_err());
}
