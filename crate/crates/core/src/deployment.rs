//! Training and inference for the three deployment modes.
//!
//! * `StoS`: one autoencoder trained on the pooled cell.
//! * `MtoM`: one autoencoder per task, each trained on its own data.
//! * `StoM`: one shared encoder with a decoder per task, trained jointly, then
//!   a classifier on frozen codes that routes each code to its decoder.
//!
//! All three go through [`train_joint`], so with one task they coincide.

use std::fmt;
use std::str::FromStr;

use csi_nn::{adam_step, AdamConfig, AdamState, Mode as Pass, Model, Scalar, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config, CsiError, Result};
use crate::models::{build_decoder, build_encoder, build_gatenet, ArchSpec};
use crate::rng::{self, mix, STREAM_DECODER, STREAM_ENCODER, STREAM_GATE, STREAM_SHUFFLE, STREAM_SPLIT, STREAM_TASK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeployMode {
    #[serde(rename = "s2s")]
    StoS,
    #[serde(rename = "m2m")]
    MtoM,
    #[serde(rename = "s2m")]
    StoM,
}

impl DeployMode {
    pub const ALL: [DeployMode; 3] = [DeployMode::StoS, DeployMode::MtoM, DeployMode::StoM];
}

impl fmt::Display for DeployMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeployMode::StoS => "s2s",
            DeployMode::MtoM => "m2m",
            DeployMode::StoM => "s2m",
        })
    }
}

impl FromStr for DeployMode {
    type Err = CsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s2s" => Ok(DeployMode::StoS),
            "m2m" => Ok(DeployMode::MtoM),
            "s2m" => Ok(DeployMode::StoM),
            _ => Err(config(format!("unknown mode '{s}' (expected s2s, m2m or s2m)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub gate_max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub gate_patience: usize,
    pub seed: u64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            max_epochs: 100,
            gate_max_epochs: 30,
            batch_size: 128,
            patience: 20,
            gate_patience: 10,
            seed: 0,
            split: [0.85, 0.10, 0.05],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(config("train.lr must be positive"));
        }
        if self.batch_size == 0 {
            return Err(config("train.batch_size must be at least 1"));
        }
        if self.max_epochs == 0 || self.gate_max_epochs == 0 {
            return Err(config("train.max_epochs and train.gate_max_epochs must be at least 1"));
        }
        if self.patience >= self.max_epochs || self.gate_patience >= self.gate_max_epochs {
            return Err(config("train patience must be below the epoch limit"));
        }
        if self.split.iter().any(|f| !(*f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(config("train.split fractions must be nonnegative and sum to 1"));
        }
        if self.split[0] <= 0.0 || self.split[1] <= 0.0 {
            return Err(config("train.split needs nonzero training and validation fractions"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.lr)
    }
}

/// Row-major block of equally sized samples from one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub task_id: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl TaskData {
    pub fn new(task_id: usize, dim: usize, data: Vec<f32>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "data length is a multiple of the sample size");
        TaskData { task_id, dim, data }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn gather(&self, indices: &[usize]) -> Vec<f32> {
        let mut out = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            out.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> TaskData {
        TaskData::new(self.task_id, self.dim, self.gather(indices))
    }

    /// Concatenation in argument order; the result carries task id 0.
    pub fn pool(parts: &[&TaskData]) -> TaskData {
        let dim = parts.first().map_or(1, |p| p.dim);
        let mut data = Vec::new();
        for p in parts {
            assert_eq!(p.dim, dim, "pooled data share a sample size");
            data.extend_from_slice(&p.data);
        }
        TaskData::new(0, dim, data)
    }
}

/// Sample indices of one task's train, validation and test parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded permutation cut into `floor(f_train n)`, `floor(f_val n)` and the rest.
pub fn split_indices(n: usize, task_id: usize, fractions: [f64; 3], seed: u64) -> SplitIndices {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::rng(mix(seed, &[STREAM_SPLIT, task_id as u64])));
    let n_train = (fractions[0] * n as f64 + 1e-9).floor() as usize;
    let n_val = ((fractions[1] * n as f64 + 1e-9).floor() as usize).min(n - n_train);
    let mut train = perm[..n_train].to_vec();
    let mut val = perm[n_train..n_train + n_val].to_vec();
    let mut test = perm[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    SplitIndices { train, val, test }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val: f64,
}

impl History {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

/// Seed of the independent run for task `k` in multi-model mode. Task 0 keeps
/// the base seed, so a single-task run matches the pooled one.
pub fn task_seed(seed: u64, k: usize) -> u64 {
    if k == 0 {
        seed
    } else {
        mix(seed, &[STREAM_TASK, k as u64])
    }
}

/// One step's worth of joint objective and gradients.
pub struct JointGrads<T> {
    pub loss: f64,
    pub task_loss: Vec<f64>,
    pub encoder: Vec<T>,
    pub decoders: Vec<Vec<T>>,
}

/// `L = (1/T) sum_k (1/B_k) sum_n ||dec_k(enc(x_kn)) - x_kn||^2` over one batch
/// per task, with gradients for the shared encoder and every decoder.
/// When `commit` is set the batch-norm running statistics are updated.
pub fn joint_grads<T: Scalar>(
    encoder: &mut Model<T>,
    decoders: &mut [Model<T>],
    batches: &[Tensor<T>],
    commit: bool,
) -> Result<JointGrads<T>> {
    let n_tasks = decoders.len();
    if batches.len() != n_tasks || n_tasks == 0 {
        return Err(CsiError::Argument("one batch per decoder is required".into()));
    }
    let mut enc_grads = vec![T::zero(); encoder.params().len()];
    let mut dec_grads = Vec::with_capacity(n_tasks);
    let mut task_loss = Vec::with_capacity(n_tasks);
    for (dec, x) in decoders.iter_mut().zip(batches) {
        let (code, enc_cache) = encoder.forward(x, Pass::Train)?;
        let (y, dec_cache) = dec.forward(&code, Pass::Train)?;
        if y.shape != x.shape {
            return Err(CsiError::Argument("decoder output shape differs from the input".into()));
        }
        if commit {
            encoder.commit_batch_stats(&enc_cache)?;
            dec.commit_batch_stats(&dec_cache)?;
        }
        let b = x.batch;
        let mut sse = 0.0f64;
        let g_scale = T::from_f64_lossy(2.0 / (n_tasks * b) as f64);
        let grad: Vec<T> = y
            .data
            .iter()
            .zip(&x.data)
            .map(|(&yh, &xv)| {
                let e = yh - xv;
                sse += e.as_f64() * e.as_f64();
                g_scale * e
            })
            .collect();
        task_loss.push(sse / b as f64);
        let mut dg = vec![T::zero(); dec.params().len()];
        let gcode = dec.backward_into(dec_cache, &Tensor::new(grad, b, y.shape.clone()), &mut dg)?;
        encoder.backward_partial(enc_cache, usize::MAX, &gcode, &mut enc_grads, false)?;
        dec_grads.push(dg);
    }
    Ok(JointGrads {
        loss: task_loss.iter().sum::<f64>() / n_tasks as f64,
        task_loss,
        encoder: enc_grads,
        decoders: dec_grads,
    })
}

/// Cycles through seeded permutations of `0..n`, one fresh permutation per pass.
struct IndexStream {
    n: usize,
    seed: u64,
    pass: u64,
    perm: Vec<usize>,
    pos: usize,
}

impl IndexStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = IndexStream {
            n,
            seed,
            pass: 0,
            perm: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.perm = (0..self.n).collect();
        self.perm.shuffle(&mut rng::rng(mix(self.seed, &[self.pass])));
        self.pos = 0;
    }

    fn take(&mut self, count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.n {
                self.pass += 1;
                self.reshuffle();
            }
            let k = (count - out.len()).min(self.n - self.pos);
            out.extend_from_slice(&self.perm[self.pos..self.pos + k]);
            self.pos += k;
        }
        out
    }
}

fn tensor_of(data: &TaskData, indices: &[usize], shape: &[usize]) -> Tensor<f32> {
    Tensor::new(data.gather(indices), indices.len(), shape.to_vec())
}

/// Mean per-sample squared error of `dec(enc(x))` in eval mode.
pub fn reconstruction_loss(encoder: &Model<f32>, decoder: &Model<f32>, data: &TaskData, batch: usize) -> Result<f64> {
    let shape = encoder.spec().input_shape.clone();
    let mut sse = 0.0f64;
    for start in (0..data.len()).step_by(batch.max(1)) {
        let idx: Vec<usize> = (start..(start + batch).min(data.len())).collect();
        let x = tensor_of(data, &idx, &shape);
        let y = decoder.predict(&encoder.predict(&x)?)?;
        sse += y.data.iter().zip(&x.data).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
    }
    Ok(sse / data.len().max(1) as f64)
}

/// Joint training with early stopping on the validation objective.
///
/// Every epoch runs `ceil(max_k N_k / B)` steps. Step `j` uses the same batch
/// size for all tasks, `min(B, max_k N_k - j B)`, drawn from each task's own
/// cyclic shuffled stream. The best weights (parameters and running statistics)
/// are restored before returning.
pub fn train_joint(
    encoder: &mut Model<f32>,
    decoders: &mut [Model<f32>],
    train: &[&TaskData],
    val: &[&TaskData],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<History> {
    let n_tasks = decoders.len();
    if train.len() != n_tasks || val.len() != n_tasks || n_tasks == 0 {
        return Err(CsiError::Argument("train and validation sets must match the decoders".into()));
    }
    if train.iter().chain(val).any(|d| d.is_empty()) {
        return Err(CsiError::Argument("every task needs training and validation samples".into()));
    }
    let shape = encoder.spec().input_shape.clone();
    let dim: usize = shape.iter().product();
    if train.iter().chain(val).any(|d| d.dim != dim) {
        return Err(CsiError::Argument("sample size differs from the encoder input".into()));
    }
    let adam = cfg.adam();
    let mut enc_state = AdamState::new(encoder.params().len());
    let mut dec_states: Vec<_> = decoders.iter().map(|d| AdamState::new(d.params().len())).collect();
    let largest = train.iter().map(|d| d.len()).max().unwrap_or(0);
    let steps = largest.div_ceil(cfg.batch_size);

    let mut history = History {
        best_val: f64::INFINITY,
        ..History::default()
    };
    let mut best: Option<(Model<f32>, Vec<Model<f32>>)> = None;
    let mut wait = 0;
    for epoch in 0..cfg.max_epochs {
        let mut streams: Vec<IndexStream> = train
            .iter()
            .enumerate()
            .map(|(k, d)| IndexStream::new(d.len(), mix(seed, &[STREAM_SHUFFLE, k as u64, epoch as u64])))
            .collect();
        let mut epoch_loss = 0.0;
        for j in 0..steps {
            let b = cfg.batch_size.min(largest - j * cfg.batch_size);
            let batches: Vec<Tensor<f32>> = streams
                .iter_mut()
                .zip(train)
                .map(|(s, d)| tensor_of(d, &s.take(b), &shape))
                .collect();
            let g = joint_grads(encoder, decoders, &batches, true)?;
            if !g.loss.is_finite() {
                return Err(CsiError::Divergence {
                    epoch,
                    what: "training loss is not finite".into(),
                });
            }
            epoch_loss += g.loss;
            adam_step(encoder.params_mut().values_mut(), &g.encoder, &mut enc_state, &adam);
            for ((dec, grads), state) in decoders.iter_mut().zip(&g.decoders).zip(dec_states.iter_mut()) {
                adam_step(dec.params_mut().values_mut(), grads, state, &adam);
            }
        }
        let mut val_loss = 0.0;
        for (dec, v) in decoders.iter().zip(val) {
            val_loss += reconstruction_loss(encoder, dec, v, cfg.batch_size)?;
        }
        val_loss /= n_tasks as f64;
        if !val_loss.is_finite() {
            return Err(CsiError::Divergence {
                epoch,
                what: "validation loss is not finite".into(),
            });
        }
        history.train_loss.push(epoch_loss / steps as f64);
        history.val_loss.push(val_loss);
        log::debug!("epoch {epoch}: train {:.5} val {val_loss:.5}", epoch_loss / steps as f64);
        if val_loss < history.best_val {
            history.best_val = val_loss;
            history.best_epoch = epoch;
            best = Some((encoder.clone(), decoders.to_vec()));
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                break;
            }
        }
    }
    if let Some((enc, decs)) = best {
        *encoder = enc;
        decoders.clone_from_slice(&decs);
    }
    Ok(history)
}

/// Trained models of one deployment mode.
#[derive(Debug, Clone)]
pub struct ModeBundle {
    pub mode: DeployMode,
    pub arch: ArchSpec,
    pub n_tasks: usize,
    pub encoders: Vec<Model<f32>>,
    pub decoders: Vec<Model<f32>>,
    pub gatenet: Option<Model<f32>>,
}

impl ModeBundle {
    /// Freshly initialized models with seeds derived from `seed`.
    pub fn new(mode: DeployMode, arch: ArchSpec, n_tasks: usize, seed: u64) -> Result<Self> {
        if n_tasks == 0 {
            return Err(config("at least one task is required"));
        }
        let enc_spec = build_encoder(&arch)?;
        let dec_spec = build_decoder(&arch)?;
        let enc = |s: u64| Model::new(enc_spec.clone(), mix(s, &[STREAM_ENCODER, 0]));
        let dec = |s: u64, k: usize| Model::new(dec_spec.clone(), mix(s, &[STREAM_DECODER, k as u64]));
        let (encoders, decoders) = match mode {
            DeployMode::StoS => (vec![enc(seed)?], vec![dec(seed, 0)?]),
            DeployMode::MtoM => {
                let mut e = Vec::new();
                let mut d = Vec::new();
                for k in 0..n_tasks {
                    e.push(enc(task_seed(seed, k))?);
                    d.push(dec(task_seed(seed, k), 0)?);
                }
                (e, d)
            }
            DeployMode::StoM => (vec![enc(seed)?], (0..n_tasks).map(|k| dec(seed, k)).collect::<std::result::Result<_, _>>()?),
        };
        Ok(ModeBundle {
            mode,
            arch,
            n_tasks,
            encoders,
            decoders,
            gatenet: None,
        })
    }

    pub fn check_invariants(&self) -> Result<()> {
        let (e, d) = match self.mode {
            DeployMode::StoS => (1, 1),
            DeployMode::MtoM => (self.n_tasks, self.n_tasks),
            DeployMode::StoM => (1, self.n_tasks),
        };
        if self.encoders.len() != e || self.decoders.len() != d {
            return Err(CsiError::Integrity(format!(
                "{} bundle holds {} encoders and {} decoders",
                self.mode,
                self.encoders.len(),
                self.decoders.len()
            )));
        }
        if self.mode != DeployMode::StoM && self.gatenet.is_some() {
            return Err(CsiError::Integrity("only s2m bundles carry a GateNet".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    /// One history per trained autoencoder group (one for s2s and s2m, T for m2m).
    pub autoencoder: Vec<History>,
    pub gatenet: Option<History>,
}

/// Trains the autoencoders of `bundle`. `train[k]` and `val[k]` hold task `k`.
pub fn train_autoencoders(
    bundle: &mut ModeBundle,
    train: &[&TaskData],
    val: &[&TaskData],
    cfg: &TrainConfig,
) -> Result<Vec<History>> {
    bundle.check_invariants()?;
    if train.len() != bundle.n_tasks || val.len() != bundle.n_tasks {
        return Err(CsiError::Argument("one training and validation set per task is required".into()));
    }
    let seed = cfg.seed;
    match bundle.mode {
        DeployMode::StoS => {
            let t = TaskData::pool(train);
            let v = TaskData::pool(val);
            let h = train_joint(&mut bundle.encoders[0], &mut bundle.decoders, &[&t], &[&v], cfg, seed)?;
            Ok(vec![h])
        }
        DeployMode::MtoM => {
            let mut out = Vec::new();
            for k in 0..bundle.n_tasks {
                let h = train_joint(
                    &mut bundle.encoders[k],
                    std::slice::from_mut(&mut bundle.decoders[k]),
                    &[train[k]],
                    &[val[k]],
                    cfg,
                    task_seed(seed, k),
                )?;
                out.push(h);
            }
            Ok(out)
        }
        DeployMode::StoM => {
            let h = train_joint(&mut bundle.encoders[0], &mut bundle.decoders, train, val, cfg, seed)?;
            Ok(vec![h])
        }
    }
}

/// Codes of every sample, encoder in eval mode.
pub fn encode_all(encoder: &Model<f32>, data: &TaskData, batch: usize) -> Result<TaskData> {
    let shape = encoder.spec().input_shape.clone();
    let code_len = encoder.spec().output_len();
    let mut out = Vec::with_capacity(data.len() * code_len);
    for start in (0..data.len()).step_by(batch.max(1)) {
        let idx: Vec<usize> = (start..(start + batch).min(data.len())).collect();
        out.extend(encoder.predict(&tensor_of(data, &idx, &shape))?.data);
    }
    Ok(TaskData::new(data.task_id, code_len, out))
}

fn cross_entropy(probs: &[f32], labels: &[usize], n_tasks: usize) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -(probs[i * n_tasks + l] as f64).max(1e-30).ln())
        .sum::<f64>()
}

/// Mean negative log-likelihood of the true task over pooled codes.
pub fn gate_loss(gate: &Model<f32>, codes: &[&TaskData], batch: usize) -> Result<f64> {
    let n_tasks = codes.len();
    let mut total = 0.0;
    let mut count = 0;
    for (k, c) in codes.iter().enumerate() {
        for start in (0..c.len()).step_by(batch.max(1)) {
            let idx: Vec<usize> = (start..(start + batch).min(c.len())).collect();
            let p = gate.predict(&Tensor::new(c.gather(&idx), idx.len(), vec![c.dim]))?;
            total += cross_entropy(&p.data, &vec![k; idx.len()], n_tasks);
            count += idx.len();
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Cross-entropy gradient and loss for one labelled batch of codes.
/// The softmax is fused: the gradient enters at its input as `(p - y) / B`.
/// When `commit` is set the batch-norm running statistics are updated.
pub fn gate_grads<T: Scalar>(gate: &mut Model<T>, codes: &Tensor<T>, labels: &[usize], commit: bool) -> Result<(f64, Vec<T>)> {
    let (p, cache) = gate.forward(codes, Pass::Train)?;
    if commit {
        gate.commit_batch_stats(&cache)?;
    }
    let n_tasks = p.shape[0];
    let b = codes.batch;
    let inv_b = T::from_f64_lossy(1.0 / b as f64);
    let mut grad = p.data.clone();
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        loss -= p.data[i * n_tasks + l].as_f64().max(1e-300).ln();
        grad[i * n_tasks + l] -= T::one();
    }
    for g in grad.iter_mut() {
        *g *= inv_b;
    }
    let mut grads = vec![T::zero(); gate.params().len()];
    let upto = gate.spec().layers.len() - 1;
    gate.backward_partial(cache, upto, &Tensor::new(grad, b, p.shape.clone()), &mut grads, false)?;
    Ok((loss / b as f64, grads))
}

/// Trains the classifier on codes of the frozen shared encoder.
pub fn train_gatenet(
    encoder: &Model<f32>,
    train: &[&TaskData],
    val: &[&TaskData],
    gate: &mut Model<f32>,
    cfg: &TrainConfig,
) -> Result<History> {
    let n_tasks = train.len();
    if n_tasks < 2 || val.len() != n_tasks {
        return Err(CsiError::Argument("GateNet training needs at least two tasks".into()));
    }
    let train_codes = train
        .iter()
        .map(|d| encode_all(encoder, d, cfg.batch_size))
        .collect::<Result<Vec<_>>>()?;
    let val_codes = val
        .iter()
        .map(|d| encode_all(encoder, d, cfg.batch_size))
        .collect::<Result<Vec<_>>>()?;
    let pooled = TaskData::pool(&train_codes.iter().collect::<Vec<_>>());
    let labels: Vec<usize> = train_codes
        .iter()
        .enumerate()
        .flat_map(|(k, c)| std::iter::repeat(k).take(c.len()))
        .collect();
    let code_len = pooled.dim;
    let adam = cfg.adam();
    let mut state = AdamState::new(gate.params().len());
    let mut history = History {
        best_val: f64::INFINITY,
        ..History::default()
    };
    let mut best = None;
    let mut wait = 0;
    let val_refs: Vec<&TaskData> = val_codes.iter().collect();
    for epoch in 0..cfg.gate_max_epochs {
        let mut order: Vec<usize> = (0..pooled.len()).collect();
        order.shuffle(&mut rng::rng(mix(cfg.seed, &[STREAM_GATE, epoch as u64])));
        let mut epoch_loss = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = Tensor::new(pooled.gather(chunk), chunk.len(), vec![code_len]);
            let l: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = gate_grads(gate, &x, &l, true)?;
            if !loss.is_finite() {
                return Err(CsiError::Divergence {
                    epoch,
                    what: "GateNet loss is not finite".into(),
                });
            }
            adam_step(gate.params_mut().values_mut(), &grads, &mut state, &adam);
            epoch_loss += loss;
            steps += 1;
        }
        let val_loss = gate_loss(gate, &val_refs, cfg.batch_size)?;
        history.train_loss.push(epoch_loss / steps.max(1) as f64);
        history.val_loss.push(val_loss);
        if val_loss < history.best_val {
            history.best_val = val_loss;
            history.best_epoch = epoch;
            best = Some(gate.clone());
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.gate_patience {
                break;
            }
        }
    }
    if let Some(g) = best {
        *gate = g;
    }
    Ok(history)
}

/// Full training of a bundle: autoencoders, then for s2m the GateNet.
pub fn train_bundle(bundle: &mut ModeBundle, train: &[&TaskData], val: &[&TaskData], cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let autoencoder = train_autoencoders(bundle, train, val, cfg)?;
    let gatenet = if bundle.mode == DeployMode::StoM && bundle.n_tasks >= 2 {
        let spec = build_gatenet(bundle.arch.code_len()?, bundle.n_tasks)?;
        let mut gate = Model::new(spec, mix(cfg.seed, &[STREAM_GATE]))?;
        let h = train_gatenet(&bundle.encoders[0], train, val, &mut gate, cfg)?;
        bundle.gatenet = Some(gate);
        Some(h)
    } else {
        None
    };
    Ok(TrainReport { autoencoder, gatenet })
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Routing {
    /// Decoder chosen by the GateNet (s2m) or by the task label (m2m).
    Inferred,
    /// Decoder chosen by the true task label.
    Oracle,
    /// Decoder per sample, 0-based (s2m only).
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub data: TaskData,
    /// Decoder index used for each sample (0-based).
    pub routes: Vec<usize>,
}

/// Reconstructs every sample of `data`, whose `task_id` (1-based) is the truth.
pub fn reconstruct(bundle: &ModeBundle, data: &TaskData, routing: Routing, batch: usize) -> Result<Reconstruction> {
    bundle.check_invariants()?;
    let k = data
        .task_id
        .checked_sub(1)
        .filter(|&k| k < bundle.n_tasks)
        .ok_or_else(|| CsiError::Argument(format!("task id {} outside 1..={}", data.task_id, bundle.n_tasks)))?;
    let n = data.len();
    let encoder = match bundle.mode {
        DeployMode::MtoM => &bundle.encoders[k],
        _ => &bundle.encoders[0],
    };
    let codes = encode_all(encoder, data, batch)?;
    let routes: Vec<usize> = match (bundle.mode, routing) {
        (DeployMode::StoS, _) => vec![0; n],
        (DeployMode::StoM, Routing::Explicit(r)) => {
            if r.len() != n || r.iter().any(|&d| d >= bundle.n_tasks) {
                return Err(CsiError::Argument("explicit routes must name a decoder per sample".into()));
            }
            r
        }
        (DeployMode::MtoM, _) | (DeployMode::StoM, Routing::Oracle) => vec![k; n],
        (DeployMode::StoM, Routing::Inferred) if bundle.n_tasks == 1 => vec![0; n],
        (DeployMode::StoM, Routing::Inferred) => {
            let gate = bundle
                .gatenet
                .as_ref()
                .ok_or_else(|| CsiError::Argument("s2m inference without oracle labels needs a trained GateNet".into()))?;
            let mut r = Vec::with_capacity(n);
            for start in (0..n).step_by(batch.max(1)) {
                let idx: Vec<usize> = (start..(start + batch).min(n)).collect();
                let p = gate.predict(&Tensor::new(codes.gather(&idx), idx.len(), vec![codes.dim]))?;
                r.extend(p.data.chunks_exact(bundle.n_tasks).map(argmax));
            }
            r
        }
    };
    let mut out = vec![0.0f32; n * data.dim];
    for d in 0..bundle.decoders.len() {
        let idx: Vec<usize> = (0..n).filter(|&i| routes[i] == d).collect();
        for chunk in idx.chunks(batch.max(1)) {
            let y = bundle.decoders[d].predict(&Tensor::new(codes.gather(chunk), chunk.len(), vec![codes.dim]))?;
            for (j, &i) in chunk.iter().enumerate() {
                out[i * data.dim..(i + 1) * data.dim].copy_from_slice(y.sample(j));
            }
        }
    }
    Ok(Reconstruction {
        data: TaskData::new(data.task_id, data.dim, out),
        routes,
    })
}

/// Single-sample inference: the reconstruction and the chosen decoder (1-based).
pub fn infer(bundle: &ModeBundle, h: &[f32], task_id: usize, oracle: bool) -> Result<(Vec<f32>, usize)> {
    let data = TaskData::new(task_id, h.len(), h.to_vec());
    let routing = if oracle { Routing::Oracle } else { Routing::Inferred };
    let r = reconstruct(bundle, &data, routing, 1)?;
    Ok((r.data.data, r.routes[0] + 1))
}
