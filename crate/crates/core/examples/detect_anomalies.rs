//! Scores held-out traffic, fits a 99th-percentile threshold on the training
//! scores and reports detection metrics overall and per anomaly class.
//!
//!     cargo run --release --example detect_anomalies

use arcade::detector::{anomaly_scores, evaluate_per_class, fit_threshold, split_dataset, ScoreReport, ThresholdPolicy};
use arcade::harness::{synth_generate, SynthConfig};
use arcade::ingest::Label;
use arcade::model::{build_model, ModelConfig};
use arcade::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth_generate(&SynthConfig {
        seed: 3,
        n_normal_flows: 800,
        n_anomaly_flows: 200,
        ..SynthConfig::default()
    })?
    .samples;
    let labels = data.labels.clone().expect("synthetic samples are labeled");
    let pooled: Vec<Label> = labels.iter().map(|l| if l.is_anomaly() { Label::Anomaly(1) } else { Label::Normal }).collect();
    let split = split_dataset(&pooled, 150, 3)?;
    let train_set = data.select(&split.train);
    let test_set = data.select(&split.test);

    let mut model = build_model(&ModelConfig::new(2, 5), 3)?;
    let cfg = TrainConfig {
        epochs_phase1: 6,
        epochs_phase2: 2,
        seed: 3,
        ..TrainConfig::default()
    };
    train(&train_set, &mut model, &cfg, |_, _| Ok(()))?;

    let tau = fit_threshold(&anomaly_scores(&model, &train_set)?, ThresholdPolicy::Percentile99)?;
    let scores = anomaly_scores(&model, &test_set)?;
    let test_labels = test_set.labels.clone().unwrap_or_default();
    let report = ScoreReport::new(scores.clone(), test_labels.clone(), tau, ThresholdPolicy::Percentile99)?;
    println!("{}", serde_json::to_string_pretty(&report.summary_json())?);

    for (class, m) in evaluate_per_class(&scores, &test_labels, tau)? {
        println!("class {class}: AUROC {:.4}  DR {:.3}  FAR {:.3}", m.auroc.unwrap_or(f64::NAN), m.dr, m.far);
    }
    Ok(())
}
