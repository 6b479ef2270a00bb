//! Spatial-frequency to angle-delay mapping, truncation and [0, 1] scaling.
//!
//! `H_ad = F_a H_sf F_d`: a unitary DFT over antennas followed by a unitary
//! inverse DFT over subcarriers, so a path of delay `tau` lands in delay bin
//! `tau * N_f * df`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::cmatrix::CMatrix;
use crate::error::{CsiError, Result};

pub struct DftPlan {
    n_tx: usize,
    n_f: usize,
    ant_fwd: Arc<dyn Fft<f64>>,
    ant_inv: Arc<dyn Fft<f64>>,
    freq_fwd: Arc<dyn Fft<f64>>,
    freq_inv: Arc<dyn Fft<f64>>,
}

impl DftPlan {
    pub fn new(n_tx: usize, n_f: usize) -> Self {
        let mut planner = FftPlanner::new();
        DftPlan {
            n_tx,
            n_f,
            ant_fwd: planner.plan_fft_forward(n_tx),
            ant_inv: planner.plan_fft_inverse(n_tx),
            freq_fwd: planner.plan_fft_forward(n_f),
            freq_inv: planner.plan_fft_inverse(n_f),
        }
    }

    fn apply(&self, h: &CMatrix, ant: &Arc<dyn Fft<f64>>, freq: &Arc<dyn Fft<f64>>) -> CMatrix {
        assert_eq!((h.rows, h.cols), (self.n_tx, self.n_f), "plan dimensions");
        let (nt, nf) = (self.n_tx, self.n_f);
        let mut out = h.clone();
        // Rows: transform over frequency.
        for row in out.data.chunks_exact_mut(nf) {
            freq.process(row);
        }
        // Columns: transform over antennas.
        let mut col = vec![Complex64::new(0.0, 0.0); nt];
        for c in 0..nf {
            for r in 0..nt {
                col[r] = out.data[r * nf + c];
            }
            ant.process(&mut col);
            for r in 0..nt {
                out.data[r * nf + c] = col[r];
            }
        }
        let norm = 1.0 / ((nt * nf) as f64).sqrt();
        for z in out.data.iter_mut() {
            *z *= norm;
        }
        out
    }

    pub fn to_angle_delay(&self, h_sf: &CMatrix) -> CMatrix {
        self.apply(h_sf, &self.ant_fwd, &self.freq_inv)
    }

    pub fn from_angle_delay(&self, h_ad: &CMatrix) -> CMatrix {
        self.apply(h_ad, &self.ant_inv, &self.freq_fwd)
    }
}

pub fn to_angle_delay(h_sf: &CMatrix) -> CMatrix {
    DftPlan::new(h_sf.rows, h_sf.cols).to_angle_delay(h_sf)
}

pub fn from_angle_delay(h_ad: &CMatrix) -> CMatrix {
    DftPlan::new(h_ad.rows, h_ad.cols).from_angle_delay(h_ad)
}

/// Keeps the first `n_c` delay bins (columns).
pub fn truncate(h_ad: &CMatrix, n_c: usize) -> Result<CMatrix> {
    if n_c == 0 || n_c > h_ad.cols {
        return Err(CsiError::Argument(format!(
            "truncation length {n_c} outside 1..={}",
            h_ad.cols
        )));
    }
    Ok(CMatrix::from_fn(h_ad.rows, n_c, |r, c| h_ad.get(r, c)))
}

/// Inverse of [`truncate`] up to the discarded bins, which come back as zeros.
pub fn zero_pad(h: &CMatrix, n_f: usize) -> CMatrix {
    assert!(n_f >= h.cols, "cannot pad to fewer columns");
    CMatrix::from_fn(h.rows, n_f, |r, c| {
        if c < h.cols {
            h.get(r, c)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub offset: f64,
    pub scale: f64,
    pub fitted_on: String,
}

impl NormParams {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.offset) / self.scale
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.scale + self.offset
    }

    /// Normalized value of a zero entry.
    pub fn zero_level(&self) -> f64 {
        self.apply(0.0)
    }
}

/// Running extrema over real and imaginary parts.
#[derive(Debug, Clone)]
pub struct NormFitter {
    min: f64,
    max: f64,
    seen: bool,
}

impl Default for NormFitter {
    fn default() -> Self {
        NormFitter {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            seen: false,
        }
    }
}

impl NormFitter {
    pub fn push(&mut self, h: &CMatrix) {
        for z in &h.data {
            self.min = self.min.min(z.re).min(z.im);
            self.max = self.max.max(z.re).max(z.im);
            self.seen = true;
        }
    }

    pub fn finish(&self, fitted_on: impl Into<String>) -> Result<NormParams> {
        if !self.seen {
            return Err(CsiError::Argument("normalizer needs at least one entry".into()));
        }
        let span = self.max - self.min;
        Ok(NormParams {
            offset: self.min,
            scale: if span > 0.0 { span } else { 1.0 },
            fitted_on: fitted_on.into(),
        })
    }
}

pub fn fit_normalizer(training: &[CMatrix], fitted_on: impl Into<String>) -> Result<NormParams> {
    let mut fitter = NormFitter::default();
    for h in training {
        fitter.push(h);
    }
    fitter.finish(fitted_on)
}

/// Real network input, channel-major `[2][N_t][N_c]` (real plane, then imaginary).
#[derive(Debug, Clone, PartialEq)]
pub struct AngleDelayCsi {
    pub n_tx: usize,
    pub n_c: usize,
    pub data: Vec<f64>,
    pub task_id: usize,
}

impl AngleDelayCsi {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> [usize; 3] {
        [2, self.n_tx, self.n_c]
    }

    pub fn re(&self, a: usize, d: usize) -> f64 {
        self.data[a * self.n_c + d]
    }

    pub fn im(&self, a: usize, d: usize) -> f64 {
        self.data[(self.n_tx + a) * self.n_c + d]
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Splits into real/imaginary planes and scales into [0, 1], clipping anything
/// outside. Returns the tensor and the number of clipped entries.
pub fn split_normalize(h: &CMatrix, p: &NormParams, task_id: usize) -> (AngleDelayCsi, usize) {
    let plane = h.rows * h.cols;
    let mut data = vec![0.0; 2 * plane];
    let mut clipped = 0;
    for (i, z) in h.data.iter().enumerate() {
        for (slot, v) in [(i, z.re), (plane + i, z.im)] {
            let x = p.apply(v);
            let c = x.clamp(0.0, 1.0);
            if c != x {
                clipped += 1;
            }
            data[slot] = c;
        }
    }
    (
        AngleDelayCsi {
            n_tx: h.rows,
            n_c: h.cols,
            data,
            task_id,
        },
        clipped,
    )
}

pub fn denormalize(x: &AngleDelayCsi, p: &NormParams) -> CMatrix {
    let plane = x.n_tx * x.n_c;
    CMatrix::from_fn(x.n_tx, x.n_c, |r, c| {
        let i = r * x.n_c + c;
        Complex64::new(p.invert(x.data[i]), p.invert(x.data[plane + i]))
    })
}
