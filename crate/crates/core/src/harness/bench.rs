//! Scoring throughput measurement.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::detector::anomaly_scores_batched;
use crate::error::{Error, Result};
use crate::ingest::SampleSet;
use crate::model::ModelHandles;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    /// Untimed scoring passes run until this much time has elapsed.
    pub warmup: Duration,
    pub runs: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            warmup: Duration::from_secs(5),
            runs: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub batch_size: usize,
    pub flows: usize,
    pub runs: usize,
    pub mean_seconds: f64,
    pub mean_flows_per_s: f64,
    /// Sample standard deviation over the timed runs.
    pub std_flows_per_s: f64,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Scores all of `data` `runs` times per batch size after a warm-up and
/// reports flows per second.
pub fn bench_throughput(
    model: &ModelHandles,
    data: &SampleSet,
    batch_sizes: &[usize],
    opts: &BenchOptions,
) -> Result<Vec<BenchRow>> {
    if data.is_empty() {
        return Err(Error::Config("benchmark needs at least one sample".into()));
    }
    if opts.runs == 0 || batch_sizes.contains(&0) {
        return Err(Error::Config("runs and batch sizes must be positive".into()));
    }
    let mut rows = Vec::with_capacity(batch_sizes.len());
    for &b in batch_sizes {
        let start = Instant::now();
        loop {
            anomaly_scores_batched(model, data, b)?;
            if start.elapsed() >= opts.warmup {
                break;
            }
        }
        let mut secs = Vec::with_capacity(opts.runs);
        for _ in 0..opts.runs {
            let t = Instant::now();
            let scores = anomaly_scores_batched(model, data, b)?;
            secs.push(t.elapsed().as_secs_f64());
            std::hint::black_box(scores);
        }
        let rates: Vec<f64> = secs.iter().map(|s| data.len() as f64 / s).collect();
        let (mean_rate, std_rate) = mean_std(&rates);
        rows.push(BenchRow {
            batch_size: b,
            flows: data.len(),
            runs: opts.runs,
            mean_seconds: mean_std(&secs).0,
            mean_flows_per_s: mean_rate,
            std_flows_per_s: std_rate,
        });
    }
    Ok(rows)
}
