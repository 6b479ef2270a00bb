//! Generation-to-evaluation plumbing shared by the command line and tests.

use crate::channel_gen::{for_each_sample, validate_cell, ArrayConfig, ChannelSample, SubregionConfig};
use crate::cmatrix::CMatrix;
use crate::deployment::{split_indices, train_bundle, DeployMode, ModeBundle, SplitIndices, TaskData, TrainConfig};
use crate::error::{CsiError, Result};
use crate::evaluation::{evaluate_bundle, TaskEval};
use crate::models::ArchSpec;
use crate::preprocess::{split_normalize, truncate, AngleDelayCsi, DftPlan, NormFitter, NormParams};

/// Channel-major planes `[2][N_t][N_c]` to interleaved row-major `(re, im)`.
pub fn planes_to_interleaved(planes: &[f32], n_tx: usize, n_c: usize) -> Vec<f32> {
    let plane = n_tx * n_c;
    let mut out = Vec::with_capacity(2 * plane);
    for i in 0..plane {
        out.push(planes[i]);
        out.push(planes[plane + i]);
    }
    out
}

pub fn interleaved_to_planes(values: &[f32], n_tx: usize, n_c: usize) -> Vec<f32> {
    let plane = n_tx * n_c;
    let mut out = vec![0.0; 2 * plane];
    for i in 0..plane {
        out[i] = values[2 * i];
        out[plane + i] = values[2 * i + 1];
    }
    out
}

#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub task_id: usize,
    /// Every sample in index order, normalized, channel-major.
    pub all: TaskData,
    pub seeds: Vec<u64>,
    pub split: SplitIndices,
    pub train: TaskData,
    pub val: TaskData,
    pub test: TaskData,
}

impl PreparedTask {
    fn new(task_id: usize, all: TaskData, seeds: Vec<u64>, split: SplitIndices) -> Self {
        PreparedTask {
            task_id,
            train: all.subset(&split.train),
            val: all.subset(&split.val),
            test: all.subset(&split.test),
            all,
            seeds,
            split,
        }
    }

    pub fn sample(&self, i: usize, n_tx: usize, n_c: usize) -> AngleDelayCsi {
        AngleDelayCsi {
            n_tx,
            n_c,
            data: self.all.row(i).iter().map(|&v| v as f64).collect(),
            task_id: self.task_id,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub n_tx: usize,
    pub n_c: usize,
    pub norm: NormParams,
    /// Entries clipped into [0, 1] outside the training split.
    pub clipped: usize,
    pub tasks: Vec<PreparedTask>,
}

impl Prepared {
    pub fn train_sets(&self) -> Vec<&TaskData> {
        self.tasks.iter().map(|t| &t.train).collect()
    }

    pub fn val_sets(&self) -> Vec<&TaskData> {
        self.tasks.iter().map(|t| &t.val).collect()
    }

    pub fn test_sets(&self) -> Vec<&TaskData> {
        self.tasks.iter().map(|t| &t.test).collect()
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.all.len()).collect()
    }

    /// Rebuilds the per-task view from normalized records grouped by task.
    pub fn from_normalized(
        n_tx: usize,
        n_c: usize,
        norm: NormParams,
        groups: Vec<(Vec<f32>, Vec<u64>)>,
        fractions: [f64; 3],
        split_seed: u64,
    ) -> Result<Self> {
        let dim = 2 * n_tx * n_c;
        let mut tasks = Vec::with_capacity(groups.len());
        for (k, (data, seeds)) in groups.into_iter().enumerate() {
            if data.len() != seeds.len() * dim {
                return Err(CsiError::Integrity(format!("task {} has inconsistent sample data", k + 1)));
            }
            let split = split_indices(seeds.len(), k + 1, fractions, split_seed);
            tasks.push(PreparedTask::new(k + 1, TaskData::new(k + 1, dim, data), seeds, split));
        }
        Ok(Prepared {
            n_tx,
            n_c,
            norm,
            clipped: 0,
            tasks,
        })
    }
}

/// Generates the cell, maps every sample to the truncated angle-delay domain,
/// fits the normalizer on the training split and normalizes everything.
/// `on_raw` sees each spatial-frequency sample before it is dropped.
pub fn prepare_cell_with(
    cell: &[SubregionConfig],
    array: &ArrayConfig,
    n_c: usize,
    correlation_distance: f64,
    base_seed: u64,
    fractions: [f64; 3],
    mut on_raw: impl FnMut(&ChannelSample) -> Result<()>,
) -> Result<Prepared> {
    validate_cell(cell, array, correlation_distance)?;
    if n_c == 0 || n_c > array.n_subcarriers {
        return Err(CsiError::Config(format!(
            "n_c must lie in 1..={} (the subcarrier count)",
            array.n_subcarriers
        )));
    }
    let plan = DftPlan::new(array.n_tx, array.n_subcarriers);
    let mut truncated: Vec<Vec<CMatrix>> = vec![Vec::new(); cell.len()];
    let mut seeds: Vec<Vec<u64>> = vec![Vec::new(); cell.len()];
    for_each_sample(cell, array, base_seed, |s| {
        on_raw(&s)?;
        let k = s.task_id - 1;
        truncated[k].push(truncate(&plan.to_angle_delay(&s.matrix), n_c)?);
        seeds[k].push(s.seed);
        Ok(())
    })?;
    let splits: Vec<SplitIndices> = cell
        .iter()
        .map(|r| split_indices(r.sample_count, r.task_id, fractions, base_seed))
        .collect();
    let mut fitter = NormFitter::default();
    for (k, split) in splits.iter().enumerate() {
        for &i in &split.train {
            fitter.push(&truncated[k][i]);
        }
    }
    let norm = fitter.finish(format!("train split of seed {base_seed}"))?;
    let dim = 2 * array.n_tx * n_c;
    let mut clipped = 0;
    let mut tasks = Vec::with_capacity(cell.len());
    for (k, (mats, split)) in truncated.into_iter().zip(splits).enumerate() {
        let mut data = Vec::with_capacity(mats.len() * dim);
        for h in &mats {
            let (x, c) = split_normalize(h, &norm, k + 1);
            clipped += c;
            data.extend(x.to_f32());
        }
        tasks.push(PreparedTask::new(k + 1, TaskData::new(k + 1, dim, data), std::mem::take(&mut seeds[k]), split));
    }
    Ok(Prepared {
        n_tx: array.n_tx,
        n_c,
        norm,
        clipped,
        tasks,
    })
}

pub fn prepare_cell(
    cell: &[SubregionConfig],
    array: &ArrayConfig,
    n_c: usize,
    correlation_distance: f64,
    base_seed: u64,
    fractions: [f64; 3],
) -> Result<Prepared> {
    prepare_cell_with(cell, array, n_c, correlation_distance, base_seed, fractions, |_| Ok(()))
}

/// Trains one mode on prepared data and evaluates it on the test splits.
pub fn run_mode(prepared: &Prepared, mode: DeployMode, arch: &ArchSpec, cfg: &TrainConfig) -> Result<(ModeBundle, Vec<TaskEval>)> {
    let mut bundle = ModeBundle::new(mode, *arch, prepared.tasks.len(), cfg.seed)?;
    train_bundle(&mut bundle, &prepared.train_sets(), &prepared.val_sets(), cfg)?;
    let evals = evaluate_bundle(&bundle, &prepared.test_sets(), prepared.norm.zero_level(), cfg.batch_size)?;
    Ok((bundle, evals))
}

/// Mean over tasks of the per-task NMSE in dB.
pub fn mean_nmse_db(evals: &[TaskEval]) -> f64 {
    evals.iter().map(|e| e.nmse_db).sum::<f64>() / evals.len().max(1) as f64
}

/// Single-region layout whose angle and delay ranges follow its diameter.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepTemplate {
    pub center: [f64; 2],
    pub cluster_count: usize,
    pub los: bool,
    pub sample_count: usize,
    /// Radians added on each side of the disc's angular extent.
    pub angle_margin: f64,
    /// Seconds of scattering delay beyond the direct path.
    pub excess_delay: f64,
}

impl Default for SweepTemplate {
    fn default() -> Self {
        SweepTemplate {
            center: [60.0, 25.0],
            cluster_count: 6,
            los: false,
            sample_count: 2000,
            angle_margin: 0.02,
            excess_delay: 0.3e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SweepPoint {
    pub radius: f64,
    pub nmse_db: f64,
}

/// Trains and evaluates the pooled mode once per radius under a fixed budget.
/// The diameters deliberately exceed the correlation distance, so that check
/// is not applied here.
pub fn range_sweep(
    template: &SweepTemplate,
    radii: &[f64],
    arch: &ArchSpec,
    array: &ArrayConfig,
    cfg: &TrainConfig,
    base_seed: u64,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(radii.len());
    for &radius in radii {
        let region = SubregionConfig::geometric(
            1,
            template.center,
            2.0 * radius,
            template.cluster_count,
            template.los,
            template.sample_count,
            template.angle_margin,
            template.excess_delay,
        )?;
        let prepared = prepare_cell(&[region], array, arch.n_c, f64::INFINITY, base_seed, cfg.split)?;
        let (_, evals) = run_mode(&prepared, DeployMode::StoS, arch, cfg)?;
        out.push(SweepPoint {
            radius,
            nmse_db: mean_nmse_db(&evals),
        });
    }
    Ok(out)
}
