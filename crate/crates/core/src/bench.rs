//! Wall-clock latency of forward passes.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::arch::ModelGraph;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchStats {
    pub height: usize,
    pub width: usize,
    pub threads: usize,
    pub warmup: usize,
    pub repeats: usize,
    pub median_s: f64,
    pub p95_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub mean_s: f64,
    pub madds: u64,
    /// `madds / median_s`.
    pub madds_per_s: f64,
}

/// Median (mean of the middle pair for even counts) of unsorted values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Nearest-rank percentile, `q` in (0, 1].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Summary statistics of per-run times in seconds.
pub fn summarize(
    times: &[f64],
    madds: u64,
    hw: (usize, usize),
    warmup: usize,
) -> Result<BenchStats> {
    if times.is_empty() {
        return Err(Error::usage("need at least one timed repeat"));
    }
    let med = median(times);
    Ok(BenchStats {
        height: hw.0,
        width: hw.1,
        threads: rayon::current_num_threads(),
        warmup,
        repeats: times.len(),
        median_s: med,
        p95_s: percentile(times, 0.95),
        min_s: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_s: times.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_s: times.iter().sum::<f64>() / times.len() as f64,
        madds,
        madds_per_s: madds as f64 / med,
    })
}

/// Times `repeats` inference passes on `image` after `warmup` untimed ones.
/// Returns the statistics and the raw times.
pub fn bench_forward(
    g: &ModelGraph<f32>,
    image: &Tensor<f32>,
    warmup: usize,
    repeats: usize,
) -> Result<(BenchStats, Vec<f64>)> {
    if repeats == 0 {
        return Err(Error::usage("repeats must be >= 1"));
    }
    let (_, tally) = g.forward_with_tally(image)?;
    for _ in 0..warmup {
        g.forward(image)?;
    }
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        g.forward(image)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    let stats = summarize(&times, tally.madds, (image.height(), image.width()), warmup)?;
    Ok((stats, times))
}

pub fn write_bench_csv(path: impl AsRef<Path>, stats: &BenchStats) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.serialize(stats)?;
    w.flush()?;
    Ok(())
}
