//! Stops training half way, saves a checkpoint, resumes from it and checks
//! that the result matches an uninterrupted run.
//!
//!     cargo run --release --example checkpoint_resume

use arcade::harness::{synth_generate, SynthConfig};
use arcade::ingest::Label;
use arcade::model::{build_model, Checkpoint, ModelConfig};
use arcade::trainer::{resume, train, train_from, training_checkpoint, TrainConfig, TrainState};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let all = synth_generate(&SynthConfig {
        n_normal_flows: 256,
        n_anomaly_flows: 1,
        ..SynthConfig::default()
    })?
    .samples;
    let idx: Vec<usize> = (0..all.len()).filter(|&i| all.label(i) == Some(Label::Normal)).collect();
    let data = all.select(&idx);
    let cfg = TrainConfig {
        epochs_phase1: 2,
        epochs_phase2: 2,
        ..TrainConfig::default()
    };
    let fresh = build_model(&ModelConfig::new(2, 4), 5)?;

    let mut straight = fresh.clone();
    train(&data, &mut straight, &cfg, |_, _| Ok(()))?;

    let mut first = fresh;
    let state = train_from(&data, &mut first, &cfg, TrainState::new(&cfg), 2, |_, _| Ok(()))?;
    let path = std::env::temp_dir().join("arcade-halfway.ckpt");
    training_checkpoint(&first, &state, &cfg)?.save(&path)?;
    println!("stopped after {} epochs, saved {}", state.epoch, path.display());

    let (mut model, state, cfg) = resume(&Checkpoint::load(&path)?)?;
    let state = train_from(&data, &mut model, &cfg, state, cfg.total_epochs(), |rec, _| {
        println!("resumed epoch {} MSSIM {:.4}", rec.epoch, rec.mssim);
        Ok(())
    })?;
    println!("finished at epoch {}; identical to uninterrupted run: {}", state.epoch, model == straight);
    Ok(())
}
