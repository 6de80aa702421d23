//! Measures scoring throughput for a few batch sizes.
//!
//!     cargo run --release --example throughput

use std::time::Duration;

use arcade::harness::{bench_throughput, synth_generate, BenchOptions, SynthConfig};
use arcade::model::{build_model, ModelConfig};

// glibc malloc returns large inference buffers to the OS after every batch
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth_generate(&SynthConfig {
        n_normal_flows: 1000,
        n_anomaly_flows: 24,
        ..SynthConfig::default()
    })?
    .samples;
    let model = build_model(&ModelConfig::new(2, 5), 0)?;
    let opts = BenchOptions {
        warmup: Duration::from_secs(1),
        runs: 5,
    };
    println!("{:>6} {:>12} {:>10}", "batch", "flows/s", "std");
    for row in bench_throughput(&model, &data, &[1, 64, 256], &opts)? {
        println!("{:>6} {:>12.0} {:>10.0}", row.batch_size, row.mean_flows_per_s, row.std_flows_per_s);
    }
    Ok(())
}
