//! Reconstruction quality, routing accuracy, complexity accounting and code
//! embeddings.

use csi_nn::{count_flops, count_params};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::deployment::{reconstruct, DeployMode, ModeBundle, Routing, TaskData};
use crate::error::{CsiError, Result};
use crate::models::{build_decoder, build_encoder, build_gatenet, ArchSpec};

/// Reported when the reconstruction error is zero.
pub const NMSE_FLOOR_DB: f64 = -100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Nmse {
    pub db: f64,
    /// Samples that entered the mean.
    pub used: usize,
    /// Zero-norm samples left out.
    pub excluded: usize,
}

/// `10 log10(mean_n ||h_n - g_n||^2 / ||h_n||^2)` with entries measured from `center`.
///
/// With `center` set to the normalized value of a zero channel entry this equals
/// the NMSE of the underlying complex channels.
pub fn nmse_db(original: &TaskData, recon: &TaskData, center: f64) -> Result<Nmse> {
    if original.dim != recon.dim || original.len() != recon.len() {
        return Err(CsiError::Argument("reconstruction does not match the originals".into()));
    }
    let c = center as f32;
    let mut sum = 0.0f64;
    let (mut used, mut excluded) = (0, 0);
    for i in 0..original.len() {
        let (h, g) = (original.row(i), recon.row(i));
        let power: f64 = h.iter().map(|&v| ((v - c) as f64).powi(2)).sum();
        if power == 0.0 {
            excluded += 1;
            continue;
        }
        let err: f64 = h.iter().zip(g).map(|(&a, &b)| ((a - b) as f64).powi(2)).sum();
        sum += err / power;
        used += 1;
    }
    if used == 0 {
        return Err(CsiError::Argument("no sample with nonzero power".into()));
    }
    let mean = sum / used as f64;
    let db = if mean > 0.0 {
        (10.0 * mean.log10()).max(NMSE_FLOOR_DB)
    } else {
        NMSE_FLOOR_DB
    };
    Ok(Nmse { db, used, excluded })
}

/// Percentage of samples routed to their own decoder, per task.
/// `routes[k]` holds the 0-based decisions for samples of task `k`.
pub fn gate_accuracy(routes: &[Vec<usize>]) -> Vec<f64> {
    routes
        .iter()
        .enumerate()
        .map(|(k, r)| {
            if r.is_empty() {
                0.0
            } else {
                100.0 * r.iter().filter(|&&g| g == k).count() as f64 / r.len() as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskEval {
    pub task_id: usize,
    pub nmse_db: f64,
    /// Same models with the true label choosing the decoder.
    pub oracle_nmse_db: f64,
    pub gap_db: f64,
    /// Routing accuracy in percent (s2m only).
    pub accuracy: Option<f64>,
    pub samples: usize,
}

/// Evaluates a bundle on per-task test sets (`tests[k]` is task `k + 1`).
pub fn evaluate_bundle(bundle: &ModeBundle, tests: &[&TaskData], center: f64, batch: usize) -> Result<Vec<TaskEval>> {
    let mut out = Vec::with_capacity(tests.len());
    for data in tests {
        let inferred = reconstruct(bundle, data, Routing::Inferred, batch)?;
        let n = nmse_db(data, &inferred.data, center)?;
        let (oracle_db, accuracy) = if bundle.mode == DeployMode::StoM {
            let oracle = reconstruct(bundle, data, Routing::Oracle, batch)?;
            let k = data.task_id - 1;
            let acc = 100.0 * inferred.routes.iter().filter(|&&r| r == k).count() as f64 / inferred.routes.len().max(1) as f64;
            (nmse_db(data, &oracle.data, center)?.db, Some(acc))
        } else {
            (n.db, None)
        };
        out.push(TaskEval {
            task_id: data.task_id,
            nmse_db: n.db,
            oracle_nmse_db: oracle_db,
            gap_db: n.db - oracle_db,
            accuracy,
            samples: data.len(),
        });
    }
    Ok(out)
}

/// `NMSE(routed) - NMSE(oracle)` per task, in dB.
pub fn nmse_gap(bundle: &ModeBundle, tests: &[&TaskData], center: f64, batch: usize) -> Result<Vec<f64>> {
    if bundle.mode != DeployMode::StoM || bundle.gatenet.is_none() {
        return Err(CsiError::Argument("the NMSE gap needs an s2m bundle with a trained GateNet".into()));
    }
    Ok(evaluate_bundle(bundle, tests, center, batch)?
        .into_iter()
        .map(|e| e.gap_db)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComplexityRow {
    pub mode: String,
    pub encoder_params: u64,
    pub decoder_params: u64,
    pub training_flops: u64,
    pub online_flops: u64,
}

/// Memory and time complexity of the three modes. `common` is the single
/// autoencoder of s2s, `simple` the per-task autoencoder of m2m and s2m.
pub fn complexity_table(common: &ArchSpec, simple: &ArchSpec, sample_counts: &[usize]) -> Result<Vec<ComplexityRow>> {
    let t = sample_counts.len() as u64;
    if t == 0 {
        return Err(CsiError::Argument("at least one task is required".into()));
    }
    let n_total: u64 = sample_counts.iter().map(|&n| n as u64).sum();
    let ae = |a: &ArchSpec| -> Result<(u64, u64, u64)> {
        let e = build_encoder(a)?;
        let d = build_decoder(a)?;
        Ok((count_params(&e), count_params(&d), count_flops(&e)? + count_flops(&d)?))
    };
    let (ce, cd, cf) = ae(common)?;
    let (se, sd, sf) = ae(simple)?;
    let (gp, gf) = if t >= 2 {
        let g = build_gatenet(simple.code_len()?, t as usize)?;
        (count_params(&g), count_flops(&g)?)
    } else {
        (0, 0)
    };
    Ok(vec![
        ComplexityRow {
            mode: "s2s".into(),
            encoder_params: ce,
            decoder_params: cd,
            training_flops: n_total * cf,
            online_flops: cf,
        },
        ComplexityRow {
            mode: "m2m".into(),
            encoder_params: t * se,
            decoder_params: t * sd,
            training_flops: n_total * sf,
            online_flops: sf,
        },
        ComplexityRow {
            mode: "s2m".into(),
            encoder_params: se,
            decoder_params: t * sd + gp,
            training_flops: n_total * (sf + gf),
            online_flops: sf + gf,
        },
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Embedding {
    /// One row of `dims` coordinates per sample.
    pub points: Vec<Vec<f64>>,
    /// Variance along each component, decreasing.
    pub explained: Vec<f64>,
    /// Unit loading vectors, one per component.
    pub components: Vec<Vec<f64>>,
    /// Components whose variance vanished; their coordinates are zero.
    pub degenerate: usize,
}

/// Relative eigenvalue below which a component counts as absent.
const RANK_TOL: f64 = 1e-10;

/// Projection onto the leading principal components of the sample covariance.
/// Each component is signed so that its first nonzero loading is positive.
pub fn pca_embed(codes: &[Vec<f64>], dims: usize) -> Result<Embedding> {
    let n = codes.len();
    let d = codes.first().map_or(0, |c| c.len());
    if dims == 0 || n < dims || d < dims || codes.iter().any(|c| c.len() != d) {
        return Err(CsiError::Argument(format!(
            "PCA to {dims} dimensions needs at least {dims} samples of a common length >= {dims}"
        )));
    }
    let mut mean = vec![0.0; d];
    for c in codes {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let centered = DMatrix::from_fn(n, d, |i, j| codes[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut components = Vec::with_capacity(dims);
    let mut explained = Vec::with_capacity(dims);
    let mut degenerate = 0;
    for &idx in order.iter().take(dims) {
        let lambda = eig.eigenvalues[idx].max(0.0);
        if lambda <= RANK_TOL * top.max(f64::MIN_POSITIVE) {
            degenerate += 1;
            explained.push(0.0);
            components.push(vec![0.0; d]);
            continue;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        explained.push(lambda);
        components.push(v);
    }
    if degenerate > 0 {
        log::warn!("PCA input has rank below {dims}; {degenerate} axis(es) set to zero");
    }
    let points = (0..n)
        .map(|i| {
            components
                .iter()
                .map(|v| v.iter().enumerate().map(|(j, w)| w * centered[(i, j)]).sum())
                .collect()
        })
        .collect();
    Ok(Embedding {
        points,
        explained,
        components,
        degenerate,
    })
}
