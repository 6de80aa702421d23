//! Turns a pcap/pcapng capture into fixed-size flow samples.
//!
//!     cargo run --release --example preprocess_capture -- capture.pcap [n]
//!
//! Without arguments a synthetic capture is generated first.

use arcade::harness::{synth_generate, SynthConfig};
use arcade::ingest::{open_capture, preprocess, IngestConfig, SampleSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = match args.next() {
        Some(p) => p.into(),
        None => {
            let p = std::env::temp_dir().join("arcade-example.pcap");
            synth_generate(&SynthConfig {
                n_normal_flows: 50,
                n_anomaly_flows: 10,
                ..SynthConfig::default()
            })?
            .write_pcap(&p)?;
            p
        }
    };
    let cfg = IngestConfig {
        n: args.next().map(|s| s.parse()).transpose()?.unwrap_or(2),
        ..IngestConfig::default()
    };

    let mut reader = open_capture(&path)?;
    let (samples, stats) = preprocess(reader.by_ref(), &cfg)?;
    let set = SampleSet::from_samples(cfg.n, cfg.l, &samples)?;
    println!("{}: {:?}", path.display(), reader.stats());
    println!("flows: {stats:?}");
    println!("{} samples of {} values", set.len(), set.width());

    if let Some(first) = samples.first() {
        let origin = first.origin.expect("samples from captures carry their origin");
        println!("first sample: {:?} starting at {:.6} s", origin.key, origin.first_timestamp);
        let head: Vec<String> = first.values[..24].iter().map(|v| format!("{:02x}", (v * 255.0).round() as u8)).collect();
        println!("  bytes (addresses zeroed): {}", head.join(" "));
    }
    Ok(())
}
