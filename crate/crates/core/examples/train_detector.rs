//! Trains a detector on synthetic normal traffic and saves a checkpoint.
//!
//!     cargo run --release --example train_detector -- [epochs]

use arcade::harness::{synth_generate, SynthConfig};
use arcade::ingest::Label;
use arcade::model::{build_model, ModelConfig};
use arcade::trainer::{latent_dim_from_pca, train, training_checkpoint, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(4);
    let corpus = synth_generate(&SynthConfig {
        seed: 1,
        n_normal_flows: 600,
        n_anomaly_flows: 1,
        ..SynthConfig::default()
    })?;
    let all = corpus.samples;
    let normal: Vec<usize> = (0..all.len()).filter(|&i| all.label(i) == Some(Label::Normal)).collect();
    let data = all.select(&normal);

    let d = latent_dim_from_pca(&data)?;
    let mut model = build_model(&ModelConfig::new(2, d), 7)?;
    let counts = model.param_counts();
    println!("d = {d}; parameters: encoder {} decoder {} critic {}", counts.encoder, counts.decoder, counts.critic);

    let cfg = TrainConfig {
        epochs_phase1: epochs.saturating_sub(epochs / 3),
        epochs_phase2: epochs / 3,
        seed: 7,
        ..TrainConfig::default()
    };
    let state = train(&data, &mut model, &cfg, |rec, _| {
        println!(
            "epoch {:>2}  lr {:.0e}  L_C {:>8.4}  L_G {:.4}  MSSIM {:.4}",
            rec.epoch, rec.lr, rec.critic_loss, rec.generator_loss, rec.mssim
        );
        Ok(())
    })?;

    let path = std::env::temp_dir().join("arcade-example.ckpt");
    training_checkpoint(&model, &state, &cfg)?.save(&path)?;
    println!("saved {}", path.display());
    Ok(())
}
