use csi_mtl::deployment::*;
use csi_mtl::models::*;
use csi_mtl::rng::{mix, STREAM_DECODER, STREAM_ENCODER};
use csi_mtl::CsiError;
use csi_nn::{adam_step, AdamConfig, AdamState, Mode, Model, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NT: usize = 4;
const NC: usize = 4;
const DIM: usize = 2 * NT * NC;

fn arch(family: Family) -> ArchSpec {
    ArchSpec::new(family, Ratio::new(1, 4), NT, NC)
}

/// Per-task data around a task-specific pattern, inside (0, 1).
fn toy_task(task_id: usize, n: usize, seed: u64) -> TaskData {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[task_id as u64]));
    let pattern: Vec<f32> = (0..DIM)
        .map(|i| if (i + 3 * task_id) % 5 == 0 { 0.8 } else { 0.3 })
        .collect();
    let data = (0..n)
        .flat_map(|_| pattern.iter().map(|&p| p + rng.gen_range(-0.1f32..0.1)).collect::<Vec<_>>())
        .collect();
    TaskData::new(task_id, DIM, data)
}

fn batch_f64(rng: &mut ChaCha8Rng, b: usize) -> Tensor<f64> {
    Tensor::new((0..b * DIM).map(|_| rng.gen_range(0.0..1.0)).collect(), b, vec![2, NT, NC])
}

fn fast_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs: epochs,
        gate_max_epochs: epochs,
        batch_size: 8,
        patience: epochs - 1,
        gate_patience: epochs - 1,
        seed: 21,
        lr: 3e-3,
        ..TrainConfig::default()
    }
}

/// Entries that are zero in exact arithmetic (biases feeding a batch norm)
/// come out as rounding noise, so closeness is measured against the vector scale.
fn close(x: &[f64], y: &[f64], tol: f64) -> bool {
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    x.iter().zip(y).all(|(a, b)| (a - b).abs() <= tol * scale)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn joint_loss(enc: &mut Model<f64>, decs: &mut [Model<f64>], batches: &[Tensor<f64>]) -> f64 {
    joint_grads(enc, decs, batches, false).unwrap().loss
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn joint_gradient_matches_finite_differences(
        seed in any::<u64>(),
        family in prop::sample::select(vec![Family::SimpleCnn, Family::CsiNet, Family::CsiNetEncPlus]),
        tasks in 1usize..4,
        b in 2usize..5,
    ) {
        let a = arch(family);
        let mut enc = Model::<f64>::new(build_encoder(&a).unwrap(), seed).unwrap();
        let mut decs: Vec<Model<f64>> = (0..tasks)
            .map(|k| Model::new(build_decoder(&a).unwrap(), mix(seed, &[k as u64 + 1])).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches: Vec<Tensor<f64>> = (0..tasks).map(|_| batch_f64(&mut rng, b)).collect();
        let g = joint_grads(&mut enc, &mut decs, &batches, false).unwrap();
        // Small enough not to straddle a leaky-ReLU kink in practice.
        let h = 1e-7;

        let enc_len = enc.params().len();
        for _ in 0..25 {
            let i = rng.gen_range(0..enc_len);
            let orig = enc.params().values()[i];
            enc.params_mut().values_mut()[i] = orig + h;
            let up = joint_loss(&mut enc, &mut decs, &batches);
            enc.params_mut().values_mut()[i] = orig - h;
            let down = joint_loss(&mut enc, &mut decs, &batches);
            enc.params_mut().values_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            prop_assert!(rel_err(g.encoder[i], fd) < 1e-4, "encoder param {}: {} vs {}", i, g.encoder[i], fd);
        }
        for k in 0..tasks {
            let len = decs[k].params().len();
            for _ in 0..10 {
                let i = rng.gen_range(0..len);
                let orig = decs[k].params().values()[i];
                decs[k].params_mut().values_mut()[i] = orig + h;
                let up = joint_loss(&mut enc, &mut decs, &batches);
                decs[k].params_mut().values_mut()[i] = orig - h;
                let down = joint_loss(&mut enc, &mut decs, &batches);
                decs[k].params_mut().values_mut()[i] = orig;
                let fd = (up - down) / (2.0 * h);
                prop_assert!(rel_err(g.decoders[k][i], fd) < 1e-4, "decoder {} param {}: {} vs {}", k, i, g.decoders[k][i], fd);
            }
        }
    }
}

#[test]
fn shared_gradient_is_the_mean_of_task_contributions() {
    let a = arch(Family::CsiNet);
    let mut enc = Model::<f64>::new(build_encoder(&a).unwrap(), 1).unwrap();
    let mut decs: Vec<Model<f64>> = (0..3).map(|k| Model::new(build_decoder(&a).unwrap(), 10 + k).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Unequal batch sizes: each task is scaled by its own 1/B_k.
    let batches: Vec<Tensor<f64>> = [2, 3, 5].iter().map(|&b| batch_f64(&mut rng, b)).collect();
    let joint = joint_grads(&mut enc, &mut decs, &batches, false).unwrap();
    let mut summed = vec![0.0; joint.encoder.len()];
    let mut loss = 0.0;
    for k in 0..3 {
        let single = joint_grads(&mut enc, std::slice::from_mut(&mut decs[k]), &batches[k..k + 1], false).unwrap();
        for (s, g) in summed.iter_mut().zip(&single.encoder) {
            *s += g / 3.0;
        }
        let third: Vec<f64> = single.decoders[0].iter().map(|g| g / 3.0).collect();
        assert!(close(&joint.decoders[k], &third, 1e-12));
        loss += single.loss / 3.0;
    }
    assert!(close(&joint.encoder, &summed, 1e-12));
    assert!((joint.loss - loss).abs() < 1e-12);
}

#[test]
fn joint_loss_ignores_task_order() {
    let a = arch(Family::SimpleCnn);
    let mut enc = Model::<f64>::new(build_encoder(&a).unwrap(), 2).unwrap();
    let mut decs: Vec<Model<f64>> = (0..3).map(|k| Model::new(build_decoder(&a).unwrap(), 20 + k).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batches: Vec<Tensor<f64>> = (0..3).map(|_| batch_f64(&mut rng, 4)).collect();
    let l = joint_grads(&mut enc, &mut decs, &batches, false).unwrap();
    let order = [2, 0, 1];
    let mut pdecs: Vec<Model<f64>> = order.iter().map(|&k| decs[k].clone()).collect();
    let pbatches: Vec<Tensor<f64>> = order.iter().map(|&k| batches[k].clone()).collect();
    let p = joint_grads(&mut enc, &mut pdecs, &pbatches, false).unwrap();
    assert!((l.loss - p.loss).abs() <= 1e-14 * l.loss);
    assert!(close(&l.encoder, &p.encoder, 1e-12));
}

#[test]
fn one_small_step_descends() {
    let a = arch(Family::CsiNet);
    let mut enc = Model::<f64>::new(build_encoder(&a).unwrap(), 5).unwrap();
    let mut decs = vec![Model::<f64>::new(build_decoder(&a).unwrap(), 6).unwrap()];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch = [batch_f64(&mut rng, 4)];
    let g = joint_grads(&mut enc, &mut decs, &batch, false).unwrap();
    let cfg = AdamConfig::with_lr(1e-5);
    let mut se = AdamState::new(enc.params().len());
    let mut sd = AdamState::new(decs[0].params().len());
    adam_step(enc.params_mut().values_mut(), &g.encoder, &mut se, &cfg);
    adam_step(decs[0].params_mut().values_mut(), &g.decoders[0], &mut sd, &cfg);
    let after = joint_loss(&mut enc, &mut decs, &batch);
    assert!(after < g.loss, "{after} !< {}", g.loss);
}

#[test]
fn single_task_modes_coincide_bitwise() {
    let train = toy_task(1, 40, 1);
    let val = toy_task(1, 8, 2);
    let cfg = fast_cfg(3);
    let mut bundles = Vec::new();
    for mode in DeployMode::ALL {
        let mut b = ModeBundle::new(mode, arch(Family::CsiNet), 1, cfg.seed).unwrap();
        train_bundle(&mut b, &[&train], &[&val], &cfg).unwrap();
        bundles.push(b);
    }
    for b in &bundles[1..] {
        assert_eq!(b.encoders[0].params().values(), bundles[0].encoders[0].params().values());
        assert_eq!(b.decoders[0].params().values(), bundles[0].decoders[0].params().values());
        assert_eq!(b.encoders[0].running_stats(), bundles[0].encoders[0].running_stats());
        assert_eq!(b.decoders[0].running_stats(), bundles[0].decoders[0].running_stats());
        assert!(b.gatenet.is_none());
    }
}

#[test]
fn multi_model_tasks_train_independently() {
    let train = [toy_task(1, 24, 1), toy_task(2, 24, 1)];
    let val = [toy_task(1, 8, 2), toy_task(2, 8, 2)];
    let cfg = fast_cfg(3);
    let a = arch(Family::SimpleCnn);
    let mut bundle = ModeBundle::new(DeployMode::MtoM, a, 2, cfg.seed).unwrap();
    train_bundle(&mut bundle, &[&train[0], &train[1]], &[&val[0], &val[1]], &cfg).unwrap();
    // Task 2 alone, as if trained first or in another process.
    let s = task_seed(cfg.seed, 1);
    let mut enc = Model::new(build_encoder(&a).unwrap(), mix(s, &[STREAM_ENCODER, 0])).unwrap();
    let mut dec = vec![Model::new(build_decoder(&a).unwrap(), mix(s, &[STREAM_DECODER, 0])).unwrap()];
    train_joint(&mut enc, &mut dec, &[&train[1]], &[&val[1]], &cfg, s).unwrap();
    assert_eq!(enc.params().values(), bundle.encoders[1].params().values());
    assert_eq!(dec[0].params().values(), bundle.decoders[1].params().values());
}

#[test]
fn early_stopping_restores_the_best_epoch() {
    let train = [toy_task(1, 32, 3), toy_task(2, 16, 3)];
    let val = [toy_task(1, 8, 4), toy_task(2, 8, 4)];
    let mut cfg = fast_cfg(12);
    cfg.lr = 0.05;
    cfg.patience = 2;
    let a = arch(Family::CsiNet);
    let mut enc = Model::new(build_encoder(&a).unwrap(), 1).unwrap();
    let mut decs: Vec<Model<f32>> = (0..2).map(|k| Model::new(build_decoder(&a).unwrap(), 2 + k).unwrap()).collect();
    let h = train_joint(&mut enc, &mut decs, &[&train[0], &train[1]], &[&val[0], &val[1]], &cfg, 9).unwrap();
    assert_eq!(h.val_loss[h.best_epoch], h.best_val);
    assert!(h.val_loss.iter().all(|&v| v >= h.best_val));
    let restored = (reconstruction_loss(&enc, &decs[0], &val[0], cfg.batch_size).unwrap()
        + reconstruction_loss(&enc, &decs[1], &val[1], cfg.batch_size).unwrap())
        / 2.0;
    assert_eq!(restored, h.best_val);
}

#[test]
fn non_finite_data_is_a_divergence() {
    let mut train = toy_task(1, 16, 1);
    train.data[5] = f32::NAN;
    let val = toy_task(1, 4, 2);
    let a = arch(Family::SimpleCnn);
    let mut enc = Model::new(build_encoder(&a).unwrap(), 1).unwrap();
    let mut dec = vec![Model::new(build_decoder(&a).unwrap(), 2).unwrap()];
    let err = train_joint(&mut enc, &mut dec, &[&train], &[&val], &fast_cfg(3), 1).unwrap_err();
    assert!(matches!(err, CsiError::Divergence { epoch: 0, .. }), "{err:?}");
}

#[test]
fn gate_loss_is_the_true_class_log_likelihood() {
    let spec = build_gatenet(8, 3).unwrap();
    let mut gate = Model::<f64>::new(spec, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::new((0..6 * 8).map(|_| rng.gen_range(-1.0..1.0)).collect(), 6, vec![8]);
    let labels = [0, 1, 2, 2, 1, 0];
    let (p, _) = gate.forward(&x, Mode::Train).unwrap();
    let manual = -labels.iter().enumerate().map(|(i, &l)| p.data[i * 3 + l].ln()).sum::<f64>() / 6.0;
    let (loss, grads) = gate_grads(&mut gate, &x, &labels, false).unwrap();
    assert!((loss - manual).abs() < 1e-12);

    // Fused softmax gradient against finite differences.
    let h = 1e-5;
    for _ in 0..30 {
        let i = rng.gen_range(0..gate.params().len());
        let orig = gate.params().values()[i];
        gate.params_mut().values_mut()[i] = orig + h;
        let up = gate_grads(&mut gate, &x, &labels, false).unwrap().0;
        gate.params_mut().values_mut()[i] = orig - h;
        let down = gate_grads(&mut gate, &x, &labels, false).unwrap().0;
        gate.params_mut().values_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        assert!(rel_err(grads[i], fd) < 1e-4, "param {i}: {} vs {fd}", grads[i]);
    }
}

#[test]
fn gatenet_separates_tasks_without_touching_the_encoder() {
    let train: Vec<TaskData> = (1..=3).map(|k| toy_task(k, 30, 7)).collect();
    let val: Vec<TaskData> = (1..=3).map(|k| toy_task(k, 10, 8)).collect();
    let tr: Vec<&TaskData> = train.iter().collect();
    let va: Vec<&TaskData> = val.iter().collect();
    let cfg = fast_cfg(8);
    let mut bundle = ModeBundle::new(DeployMode::StoM, arch(Family::SimpleCnn), 3, cfg.seed).unwrap();
    train_autoencoders(&mut bundle, &tr, &va, &cfg).unwrap();
    let frozen = bundle.encoders[0].clone();
    let mut gate = Model::new(build_gatenet(bundle.arch.code_len().unwrap(), 3).unwrap(), 1).unwrap();
    let h = train_gatenet(&bundle.encoders[0], &tr, &va, &mut gate, &cfg).unwrap();
    assert_eq!(frozen.params().values(), bundle.encoders[0].params().values());
    assert_eq!(frozen.running_stats(), bundle.encoders[0].running_stats());
    assert!(h.best_val.is_finite());
    bundle.gatenet = Some(gate);
    for d in &train {
        let r = reconstruct(&bundle, d, Routing::Inferred, 16).unwrap();
        assert!(r.routes.iter().all(|&g| g == d.task_id - 1), "task {}", d.task_id);
    }
}

#[test]
fn routing_rules() {
    let a = arch(Family::SimpleCnn);
    let mut bundle = ModeBundle::new(DeployMode::StoM, a, 3, 1).unwrap();
    let h = toy_task(2, 1, 1);
    assert!(infer(&bundle, h.row(0), 2, false).is_err());
    let (y, route) = infer(&bundle, h.row(0), 2, true).unwrap();
    assert_eq!((y.len(), route), (DIM, 2));
    // A zeroed GateNet is indifferent; ties go to the first decoder.
    bundle.gatenet = Some(Model::zeroed(build_gatenet(a.code_len().unwrap(), 3).unwrap()).unwrap());
    assert_eq!(infer(&bundle, h.row(0), 2, false).unwrap().1, 1);
    let explicit = reconstruct(&bundle, &h, Routing::Explicit(vec![2]), 4).unwrap();
    assert_eq!(explicit.routes, vec![2]);
    assert!(reconstruct(&bundle, &h, Routing::Explicit(vec![3]), 4).is_err());
    assert!(reconstruct(&bundle, &toy_task(4, 1, 1), Routing::Oracle, 4).is_err());
}

#[test]
fn bundle_shapes_follow_the_mode() {
    let a = arch(Family::SimpleCnn);
    let counts: Vec<(usize, usize)> = DeployMode::ALL
        .iter()
        .map(|&m| {
            let b = ModeBundle::new(m, a, 4, 0).unwrap();
            (b.encoders.len(), b.decoders.len())
        })
        .collect();
    assert_eq!(counts, vec![(1, 1), (4, 4), (1, 4)]);
    assert!(ModeBundle::new(DeployMode::StoM, a, 0, 0).is_err());
    let mut bad = fast_cfg(3);
    bad.split = [0.5, 0.2, 0.2];
    assert!(matches!(bad.validate(), Err(CsiError::Config(_))));
}
