//! Clustered geometry-based stochastic channel synthesis.
//!
//! The base station sits at the origin with a uniform linear array whose
//! broadside points along +x. A user at `(x, y)` has azimuth `asin(y / r)`.
//! Each cluster is discretized into equal-weight subpaths, so for subcarrier
//! `f_n` the channel column is
//! `h_n = sum_l sum_s (a_l / sqrt(S)) exp(j(theta - 2 pi f_n tau)) conj(a_t(phi))`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmatrix::CMatrix;
use crate::error::{config, CsiError, Result};
use crate::rng::{self, STREAM_UE};

pub const LIGHT_SPEED: f64 = 2.998e8;

/// Angles are kept this far inside the open interval (-pi/2, pi/2).
const ANGLE_GUARD: f64 = 1e-9;

/// Subcarriers between exact re-evaluations of the phase recurrence.
const ANCHOR_EVERY: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_tx: usize,
    pub n_subcarriers: usize,
    /// Hz.
    pub center_freq: f64,
    /// Hz.
    pub bandwidth: f64,
    /// Meters; half a wavelength at the center frequency when absent.
    pub element_spacing: Option<f64>,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        ArrayConfig {
            n_tx: 32,
            n_subcarriers: 512,
            center_freq: 2.655e9,
            bandwidth: 10e6,
            element_spacing: None,
        }
    }
}

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 {
            return Err(config("array.n_tx must be at least 1"));
        }
        if self.n_subcarriers == 0 {
            return Err(config("array.n_subcarriers must be at least 1"));
        }
        if !(self.center_freq.is_finite() && self.center_freq > 0.0) {
            return Err(config("array.center_freq must be positive"));
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0 && self.bandwidth < 2.0 * self.center_freq) {
            return Err(config("array.bandwidth must be positive and below twice the center frequency"));
        }
        if let Some(d) = self.element_spacing {
            if !(d.is_finite() && d > 0.0) {
                return Err(config("array.element_spacing must be positive"));
            }
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.element_spacing
            .unwrap_or(LIGHT_SPEED / self.center_freq / 2.0)
    }

    /// Tones include both band edges.
    pub fn subcarrier_spacing(&self) -> f64 {
        if self.n_subcarriers > 1 {
            self.bandwidth / (self.n_subcarriers - 1) as f64
        } else {
            self.bandwidth
        }
    }

    pub fn subcarrier_freq(&self, n: usize) -> f64 {
        if self.n_subcarriers == 1 {
            self.center_freq
        } else {
            self.center_freq - self.bandwidth / 2.0 + n as f64 * self.subcarrier_spacing()
        }
    }

    /// Largest delay that does not alias on the subcarrier grid.
    pub fn delay_window(&self) -> f64 {
        1.0 / self.subcarrier_spacing()
    }

    /// Delay spacing between adjacent bins after the inverse DFT over frequency.
    pub fn delay_resolution(&self) -> f64 {
        self.delay_window() / self.n_subcarriers as f64
    }
}

/// Transmit steering vector `(1/N_t) exp(-j w m sin(phi))` with `w = 2 pi d f / c`.
pub fn array_response(phi: f64, freq: f64, cfg: &ArrayConfig) -> Result<Vec<Complex64>> {
    if !phi.is_finite() || !freq.is_finite() {
        return Err(CsiError::Argument("array response needs finite angle and frequency".into()));
    }
    if phi.abs() >= FRAC_PI_2 {
        return Err(CsiError::Argument(format!("angle {phi} outside (-pi/2, pi/2)")));
    }
    if freq <= 0.0 {
        return Err(CsiError::Argument("frequency must be positive".into()));
    }
    let w = 2.0 * PI * cfg.spacing() * freq / LIGHT_SPEED;
    let scale = 1.0 / cfg.n_tx as f64;
    Ok((0..cfg.n_tx)
        .map(|m| Complex64::from_polar(scale, -w * m as f64 * phi.sin()))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathCluster {
    pub mean_aod: f64,
    pub angular_spread: f64,
    pub mean_delay: f64,
    pub delay_spread: f64,
    pub amplitude: f64,
    pub subpath_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subpath {
    pub cluster: usize,
    pub aod: f64,
    pub delay: f64,
    pub phase: f64,
    /// Complex weight magnitude, `a_l / sqrt(S)`.
    pub gain: f64,
}

/// Everything drawn for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraws {
    pub clusters: Vec<PathCluster>,
    pub subpaths: Vec<Subpath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubregionConfig {
    pub task_id: usize,
    /// Meters.
    pub center: [f64; 2],
    /// Meters.
    pub diameter: f64,
    pub cluster_count: usize,
    pub los: bool,
    /// Radians.
    pub aod_range: [f64; 2],
    /// Seconds.
    pub delay_range: [f64; 2],
    pub sample_count: usize,
    /// Half-width of the per-cluster subpath angle draw, radians.
    #[serde(default = "default_angular_spread")]
    pub angular_spread: f64,
    /// Half-width of the per-cluster subpath delay draw, seconds.
    #[serde(default = "default_delay_spread")]
    pub delay_spread: f64,
    #[serde(default = "default_subpaths")]
    pub subpaths: usize,
    /// Decay constant of the cluster power profile, seconds.
    #[serde(default = "default_amplitude_decay")]
    pub amplitude_decay: f64,
}

fn default_angular_spread() -> f64 {
    2f64.to_radians()
}

fn default_delay_spread() -> f64 {
    20e-9
}

fn default_subpaths() -> usize {
    20
}

fn default_amplitude_decay() -> f64 {
    1e-6
}

impl SubregionConfig {
    /// A region whose ranges follow from its geometry as seen from the base
    /// station: angles span the disc plus `angle_margin` on each side, delays
    /// span the direct-path delays of the disc plus up to `excess_delay`.
    #[allow(clippy::too_many_arguments)]
    pub fn geometric(
        task_id: usize,
        center: [f64; 2],
        diameter: f64,
        cluster_count: usize,
        los: bool,
        sample_count: usize,
        angle_margin: f64,
        excess_delay: f64,
    ) -> Result<Self> {
        let dist = center[0].hypot(center[1]);
        let radius = diameter / 2.0;
        if !(diameter > 0.0) || dist <= radius {
            return Err(config(format!(
                "region {task_id}: the disc must have positive diameter and exclude the base station"
            )));
        }
        let center_aod = (center[1] / dist).asin();
        let half = (radius / dist).asin() + angle_margin;
        let lo = (center_aod - half).max(-FRAC_PI_2 + ANGLE_GUARD);
        let hi = (center_aod + half).min(FRAC_PI_2 - ANGLE_GUARD);
        Ok(SubregionConfig {
            task_id,
            center,
            diameter,
            cluster_count,
            los,
            aod_range: [lo, hi],
            delay_range: [(dist - radius) / LIGHT_SPEED, (dist + radius) / LIGHT_SPEED + excess_delay],
            sample_count,
            angular_spread: default_angular_spread(),
            delay_spread: default_delay_spread(),
            subpaths: default_subpaths(),
            amplitude_decay: default_amplitude_decay(),
        })
    }

    pub fn validate(&self, cfg: &ArrayConfig, correlation_distance: f64) -> Result<()> {
        let k = self.task_id;
        let err = |m: &str| Err(config(format!("region {k}: {m}")));
        if !(self.diameter > 0.0) {
            return err("diameter must be positive");
        }
        if self.diameter > correlation_distance {
            return err("diameter exceeds the spatial correlation distance");
        }
        if self.cluster_count == 0 {
            return err("cluster_count must be at least 1");
        }
        if self.subpaths == 0 {
            return err("subpaths must be at least 1");
        }
        let [a0, a1] = self.aod_range;
        if !(a0 <= a1 && a0 > -FRAC_PI_2 && a1 < FRAC_PI_2) {
            return err("aod_range must be an ordered interval inside (-pi/2, pi/2)");
        }
        let [d0, d1] = self.delay_range;
        if !(0.0 <= d0 && d0 <= d1) {
            return err("delay_range must be an ordered nonnegative interval");
        }
        if d1 + self.delay_spread > cfg.delay_window() {
            return err("delay_range exceeds the resolvable delay window");
        }
        if !(self.angular_spread >= 0.0 && self.delay_spread >= 0.0 && self.amplitude_decay > 0.0) {
            return err("spreads must be nonnegative and amplitude_decay positive");
        }
        let dist = self.center[0].hypot(self.center[1]);
        if self.los && dist <= self.diameter / 2.0 {
            return err("a LOS region must not contain the base station");
        }
        Ok(())
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let r = (p[0] - self.center[0]).hypot(p[1] - self.center[1]);
        r <= self.diameter / 2.0 * (1.0 + 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    /// `N_t x N_f`, column `n` is `h_n`.
    pub matrix: CMatrix,
    pub task_id: usize,
    pub seed: u64,
}

fn clamp_angle(phi: f64) -> f64 {
    phi.clamp(-FRAC_PI_2 + ANGLE_GUARD, FRAC_PI_2 - ANGLE_GUARD)
}

fn uniform_around<R: Rng>(rng: &mut R, mean: f64, half: f64) -> f64 {
    if half > 0.0 {
        rng.gen_range(mean - half..=mean + half)
    } else {
        mean
    }
}

/// Draws cluster and subpath parameters for one sample.
pub fn draw_paths(region: &SubregionConfig, ue: [f64; 2], seed: u64, cfg: &ArrayConfig) -> Result<ChannelDraws> {
    let mut rng = rng::rng(seed);
    let mut clusters = Vec::with_capacity(region.cluster_count);
    for l in 0..region.cluster_count {
        if region.los && l == 0 {
            let dist = ue[0].hypot(ue[1]);
            clusters.push(PathCluster {
                mean_aod: clamp_angle((ue[1] / dist).asin()),
                angular_spread: 0.0,
                mean_delay: dist / LIGHT_SPEED,
                delay_spread: 0.0,
                amplitude: 0.0,
                subpath_count: 1,
            });
            continue;
        }
        let [a0, a1] = region.aod_range;
        let [d0, d1] = region.delay_range;
        let mean_aod = if a1 > a0 { rng.gen_range(a0..=a1) } else { a0 };
        let mean_delay = if d1 > d0 { rng.gen_range(d0..=d1) } else { d0 };
        clusters.push(PathCluster {
            mean_aod,
            angular_spread: region.angular_spread,
            mean_delay,
            // Keeps every subpath delay nonnegative.
            delay_spread: region.delay_spread.min(mean_delay),
            amplitude: 0.0,
            subpath_count: region.subpaths,
        });
    }
    let first = clusters
        .iter()
        .map(|c| c.mean_delay)
        .fold(f64::INFINITY, f64::min);
    for c in clusters.iter_mut() {
        c.amplitude = (-(c.mean_delay - first) / region.amplitude_decay).exp();
    }
    let norm = clusters.iter().map(|c| c.amplitude * c.amplitude).sum::<f64>().sqrt();
    for c in clusters.iter_mut() {
        c.amplitude /= norm;
    }

    let window = cfg.delay_window();
    let mut subpaths = Vec::new();
    for (l, c) in clusters.iter().enumerate() {
        let gain = c.amplitude / (c.subpath_count as f64).sqrt();
        let deterministic = region.los && l == 0;
        for _ in 0..c.subpath_count {
            let aod = clamp_angle(uniform_around(&mut rng, c.mean_aod, c.angular_spread));
            let delay = uniform_around(&mut rng, c.mean_delay, c.delay_spread);
            let phase = if deterministic {
                0.0
            } else {
                rng.gen_range(0.0..2.0 * PI)
            };
            if delay > window {
                return Err(CsiError::DelayWindow { delay, window });
            }
            subpaths.push(Subpath {
                cluster: l,
                aod,
                delay,
                phase,
                gain,
            });
        }
    }
    Ok(ChannelDraws { clusters, subpaths })
}

/// Evaluates the discretized cluster sum on the full antenna/subcarrier grid.
pub fn synthesize(subpaths: &[Subpath], cfg: &ArrayConfig) -> CMatrix {
    let (nt, nf) = (cfg.n_tx, cfg.n_subcarriers);
    let df = cfg.subcarrier_spacing();
    let d_over_c = cfg.spacing() / LIGHT_SPEED;
    let f0 = cfg.subcarrier_freq(0);
    let scale = 1.0 / nt as f64;
    // Frequency-major accumulators so the inner loop runs over antennas.
    let mut acc_re = vec![0.0f64; nf * nt];
    let mut acc_im = vec![0.0f64; nf * nt];
    let mut kappa = vec![0.0f64; nt];
    let (mut zr, mut zi) = (vec![0.0f64; nt], vec![0.0f64; nt]);
    let (mut rr, mut ri) = (vec![0.0f64; nt], vec![0.0f64; nt]);
    for p in subpaths {
        let sin_phi = p.aod.sin();
        // Phase at (m, n) is theta - 2 pi f_n (tau - m d sin(phi) / c).
        for m in 0..nt {
            kappa[m] = p.delay - m as f64 * d_over_c * sin_phi;
            let (s, c) = (-2.0 * PI * df * kappa[m]).sin_cos();
            rr[m] = c;
            ri[m] = s;
        }
        let amp = p.gain * scale;
        let mut n0 = 0;
        while n0 < nf {
            let fa = f0 + n0 as f64 * df;
            for m in 0..nt {
                let cycles = (fa * kappa[m]).fract();
                let (s, c) = (p.phase - 2.0 * PI * cycles).sin_cos();
                zr[m] = amp * c;
                zi[m] = amp * s;
            }
            let end = (n0 + ANCHOR_EVERY).min(nf);
            for n in n0..end {
                let row_re = &mut acc_re[n * nt..(n + 1) * nt];
                let row_im = &mut acc_im[n * nt..(n + 1) * nt];
                for m in 0..nt {
                    row_re[m] += zr[m];
                    row_im[m] += zi[m];
                    let (a, b) = (zr[m], zi[m]);
                    zr[m] = a * rr[m] - b * ri[m];
                    zi[m] = a * ri[m] + b * rr[m];
                }
            }
            n0 = end;
        }
    }
    CMatrix::from_fn(nt, nf, |m, n| Complex64::new(acc_re[n * nt + m], acc_im[n * nt + m]))
}

/// One channel realization. Pure in its arguments.
pub fn generate_channel(region: &SubregionConfig, ue: [f64; 2], seed: u64, cfg: &ArrayConfig) -> Result<ChannelSample> {
    generate_channel_with_draws(region, ue, seed, cfg).map(|(s, _)| s)
}

pub fn generate_channel_with_draws(
    region: &SubregionConfig,
    ue: [f64; 2],
    seed: u64,
    cfg: &ArrayConfig,
) -> Result<(ChannelSample, ChannelDraws)> {
    if !region.contains(ue) {
        return Err(CsiError::Argument(format!(
            "user position ({}, {}) lies outside region {}",
            ue[0], ue[1], region.task_id
        )));
    }
    let draws = draw_paths(region, ue, seed, cfg)?;
    let matrix = synthesize(&draws.subpaths, cfg);
    debug_assert!(matrix.is_finite());
    Ok((
        ChannelSample {
            matrix,
            task_id: region.task_id,
            seed,
        },
        draws,
    ))
}

/// Uniform position inside the region disc, keyed by the sample seed.
pub fn user_position(region: &SubregionConfig, sample_seed: u64) -> [f64; 2] {
    let mut rng = rng::rng(rng::mix(sample_seed, &[STREAM_UE]));
    let r = region.diameter / 2.0 * rng.gen_range(0.0f64..1.0).sqrt();
    let t = rng.gen_range(0.0..2.0 * PI);
    [region.center[0] + r * t.cos(), region.center[1] + r * t.sin()]
}

/// Sample `index` of `region`, regenerable in isolation.
pub fn generate_sample(region: &SubregionConfig, index: usize, base_seed: u64, cfg: &ArrayConfig) -> Result<ChannelSample> {
    let seed = rng::sample_seed(base_seed, region.task_id, index);
    generate_channel(region, user_position(region, seed), seed, cfg)
}

pub fn validate_cell(cell: &[SubregionConfig], cfg: &ArrayConfig, correlation_distance: f64) -> Result<()> {
    cfg.validate()?;
    if cell.is_empty() {
        return Err(config("the cell needs at least one region"));
    }
    for (i, region) in cell.iter().enumerate() {
        if region.task_id != i + 1 {
            return Err(config("region task ids must be 1..T in order"));
        }
        region.validate(cfg, correlation_distance)?;
    }
    Ok(())
}

/// Streams every sample of the cell, task by task, in index order.
pub fn for_each_sample(
    cell: &[SubregionConfig],
    cfg: &ArrayConfig,
    base_seed: u64,
    mut f: impl FnMut(ChannelSample) -> Result<()>,
) -> Result<()> {
    for region in cell {
        for index in 0..region.sample_count {
            f(generate_sample(region, index, base_seed, cfg)?)?;
        }
    }
    Ok(())
}

pub fn generate_dataset(cell: &[SubregionConfig], cfg: &ArrayConfig, base_seed: u64) -> Result<Vec<ChannelSample>> {
    let mut out = Vec::with_capacity(cell.iter().map(|r| r.sample_count).sum());
    for_each_sample(cell, cfg, base_seed, |s| {
        out.push(s);
        Ok(())
    })?;
    Ok(out)
}
