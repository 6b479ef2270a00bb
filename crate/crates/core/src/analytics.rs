//! Angular and delay power profiles, energy coverage intervals, correlation
//! matrices and histograms.

use serde::Serialize;

use crate::error::{CsiError, Result};
use crate::preprocess::AngleDelayCsi;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FeatureKind {
    Pas,
    Pdp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
    pub source: Option<usize>,
}

impl FeatureVector {
    pub fn with_source(mut self, source: usize) -> Self {
        self.source = Some(source);
        self
    }

    /// Index of the strongest bin, lowest index on ties.
    pub fn peak(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// Power per angle bin: `(1/N_t) * sum over delay bins and both planes of x^2`.
pub fn pas(h: &AngleDelayCsi) -> FeatureVector {
    let values = (0..h.n_tx)
        .map(|a| {
            (0..h.n_c)
                .map(|d| h.re(a, d).powi(2) + h.im(a, d).powi(2))
                .sum::<f64>()
                / h.n_tx as f64
        })
        .collect();
    FeatureVector {
        kind: FeatureKind::Pas,
        values,
        source: None,
    }
}

/// Power per delay bin: `(1/N_c) * sum over angle bins and both planes of x^2`.
pub fn pdp(h: &AngleDelayCsi) -> FeatureVector {
    let values = (0..h.n_c)
        .map(|d| {
            (0..h.n_tx)
                .map(|a| h.re(a, d).powi(2) + h.im(a, d).powi(2))
                .sum::<f64>()
                / h.n_c as f64
        })
        .collect();
    FeatureVector {
        kind: FeatureKind::Pdp,
        values,
        source: None,
    }
}

/// Shifts a normalized tensor so that a zero channel entry maps to zero.
pub fn centered(h: &AngleDelayCsi, zero_level: f64) -> AngleDelayCsi {
    AngleDelayCsi {
        data: h.data.iter().map(|v| v - zero_level).collect(),
        ..h.clone()
    }
}

/// Per-entry magnitude map `N_t x N_c` of a normalized tensor.
pub fn magnitude_map(h: &AngleDelayCsi, zero_level: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(h.n_tx * h.n_c);
    for a in 0..h.n_tx {
        for d in 0..h.n_c {
            out.push((h.re(a, d) - zero_level).hypot(h.im(a, d) - zero_level));
        }
    }
    out
}

/// Smallest contiguous bin interval `[lo, hi]` holding at least `level` of the
/// aggregated energy; ties go to the lower start.
pub fn coverage_interval(features: &[FeatureVector], level: f64) -> Result<(usize, usize)> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(CsiError::Argument(format!("coverage level {level} outside (0, 1]")));
    }
    let first = features
        .first()
        .ok_or_else(|| CsiError::Argument("coverage needs at least one feature vector".into()))?;
    let n = first.values.len();
    let mut total = vec![0.0f64; n];
    for f in features {
        if f.kind != first.kind || f.values.len() != n {
            return Err(CsiError::Argument("feature vectors differ in kind or length".into()));
        }
        for (t, v) in total.iter_mut().zip(&f.values) {
            *t += v;
        }
    }
    let energy: f64 = total.iter().sum();
    if !(energy > 0.0) {
        return Err(CsiError::Argument("feature vectors carry no energy".into()));
    }
    let target = level * energy * (1.0 - 1e-12);
    let mut prefix = vec![0.0f64; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + total[i];
    }
    for width in 1..=n {
        for lo in 0..=n - width {
            if prefix[lo + width] - prefix[lo] >= target {
                return Ok((lo, lo + width - 1));
            }
        }
    }
    Ok((0, n - 1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrix {
    pub n: usize,
    /// Row-major `n x n`.
    pub values: Vec<f64>,
    /// Samples with zero variance; their off-diagonal entries are 0.
    pub flagged: Vec<usize>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Mean off-diagonal correlation within and across groups.
    pub fn block_means(&self, groups: &[usize]) -> (f64, f64) {
        assert_eq!(groups.len(), self.n, "one group per sample");
        let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..self.n {
            for j in 0..self.n {
                if i == j {
                    continue;
                }
                if groups[i] == groups[j] {
                    within += self.get(i, j);
                    nw += 1;
                } else {
                    cross += self.get(i, j);
                    nc += 1;
                }
            }
        }
        (within / nw.max(1) as f64, cross / nc.max(1) as f64)
    }
}

/// Pearson correlation between flattened samples.
pub fn pearson_matrix(samples: &[Vec<f64>]) -> Result<CorrelationMatrix> {
    let n = samples.len();
    if n < 2 {
        return Err(CsiError::Argument("correlation needs at least two samples".into()));
    }
    let len = samples[0].len();
    if len == 0 || samples.iter().any(|s| s.len() != len) {
        return Err(CsiError::Argument("samples must share a nonzero length".into()));
    }
    let mut flagged = Vec::new();
    let unit: Vec<Option<Vec<f64>>> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mean = s.iter().sum::<f64>() / len as f64;
            let centered: Vec<f64> = s.iter().map(|v| v - mean).collect();
            let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                Some(centered.into_iter().map(|v| v / norm).collect())
            } else {
                flagged.push(i);
                None
            }
        })
        .collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            let r = match (&unit[i], &unit[j]) {
                (Some(a), Some(b)) => a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0),
                _ => 0.0,
            };
            values[i * n + j] = r;
            values[j * n + i] = r;
        }
    }
    Ok(CorrelationMatrix { n, values, flagged })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.width
    }
}

/// Empirical density over `bins` equal-width bins spanning the data range.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(CsiError::Argument("histogram needs at least one bin".into()));
    }
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(CsiError::Argument("histogram needs finite values".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, span) = if hi > lo { (lo, hi - lo) } else { (lo - 0.5, 1.0) };
    let width = span / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let total = values.len() as f64;
    Ok(Histogram {
        lo,
        width,
        density: counts.iter().map(|&c| c as f64 / (total * width)).collect(),
    })
}

/// Peak-bin positions, the per-sample statistic behind the profile histograms.
pub fn peak_positions(features: &[FeatureVector]) -> Vec<f64> {
    features.iter().map(|f| f.peak() as f64).collect()
}
