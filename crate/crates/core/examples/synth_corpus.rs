//! Generates a small labeled synthetic corpus and writes it as a pcap and a
//! sample file.
//!
//!     cargo run --release --example synth_corpus -- [out_dir]

use std::path::PathBuf;

use arcade::harness::{synth_generate, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("arcade-synth"));
    std::fs::create_dir_all(&out)?;

    let cfg = SynthConfig {
        seed: 42,
        n_normal_flows: 300,
        n_anomaly_flows: 60,
        ..SynthConfig::default()
    };
    let corpus = synth_generate(&cfg)?;
    corpus.write_pcap(out.join("synth.pcap"))?;
    corpus.samples.write(out.join("synth.arcd"))?;

    let labels = corpus.samples.labels.as_deref().unwrap_or_default();
    let anomalies = labels.iter().filter(|l| l.is_anomaly()).count();
    println!(
        "{} packets -> {} samples ({} normal, {anomalies} anomalous), n = {}, l = {}",
        corpus.packets.len(),
        corpus.samples.len(),
        corpus.samples.len() - anomalies,
        cfg.n,
        cfg.l
    );
    println!("wrote {}", out.display());
    Ok(())
}
