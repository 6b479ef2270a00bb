//! Built-in cell layouts.

use crate::channel_gen::SubregionConfig;
use crate::error::Result;

pub const CORRELATION_DISTANCE: f64 = 20.0;

fn region(
    task_id: usize,
    center: [f64; 2],
    cluster_count: usize,
    los: bool,
    aod_range: [f64; 2],
    delay_us: [f64; 2],
    sample_count: usize,
) -> SubregionConfig {
    SubregionConfig {
        task_id,
        center,
        diameter: CORRELATION_DISTANCE,
        cluster_count,
        los,
        aod_range,
        delay_range: [delay_us[0] * 1e-6, delay_us[1] * 1e-6],
        sample_count,
        angular_spread: 2f64.to_radians(),
        delay_spread: 20e-9,
        subpaths: 20,
        amplitude_decay: 1e-6,
    }
}

/// Three regions with disjoint angle and delay ranges: a dense scattering
/// region, a sparse line-of-sight region and a medium one.
pub fn desk_cell(samples_per_task: usize) -> Vec<SubregionConfig> {
    vec![
        region(1, [60.0, 20.0], 12, false, [0.05, 0.55], [0.25, 1.6], samples_per_task),
        region(2, [40.0, -45.0], 3, true, [-0.95, -0.70], [0.20, 0.60], samples_per_task),
        region(3, [80.0, -15.0], 6, false, [-0.45, -0.05], [1.7, 2.8], samples_per_task),
    ]
}

/// Five regions at reference positions and cluster counts, 50,000 samples each.
pub fn full_cell() -> Result<Vec<SubregionConfig>> {
    let layout: [([f64; 2], usize, bool); 5] = [
        ([50.0, 0.0], 40, false),
        ([-100.0, -50.0], 40, false),
        ([10.0, -70.0], 5, true),
        ([90.0, -160.0], 5, true),
        ([0.0, 170.0], 10, false),
    ];
    layout
        .iter()
        .enumerate()
        .map(|(i, &(center, clusters, los))| {
            SubregionConfig::geometric(i + 1, center, CORRELATION_DISTANCE, clusters, los, 50_000, 0.15, 1.0e-6)
        })
        .collect()
}
