//! A declarative experiment: sweeps the adversarial weight over two seeds
//! and writes CSV tables and SVG plots.
//!
//!     cargo run --release --example lambda_sweep -- [out_dir]

use arcade::harness::{run_experiment, ExperimentSpec};

const SPEC: &str = r#"
name = "lambda-sweep"
seeds = [1, 2]

[source.synth]
n_normal_flows = 700
n_anomaly_flows = 120

[train.config]
epochs_phase1 = 3
epochs_phase2 = 1

[evaluate]
test_quota = 60

[sweep]
lambda_g = [0.0, 0.01]
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = ExperimentSpec::from_toml_str(SPEC)?;
    spec.output.dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("arcade-experiments"));
    let report = run_experiment(&spec)?;

    println!("{}", report.dir.display());
    for p in &report.points {
        println!(
            "lambda_g {:<5} n {}  AUROC {:.4} +- {:.4}  F1 {:.3}",
            p.lambda_g,
            p.n,
            p.auroc_mean.unwrap_or(f64::NAN),
            p.auroc_std.unwrap_or(f64::NAN),
            p.f1_mean.unwrap_or(f64::NAN)
        );
    }
    for f in &report.failures {
        println!("failed: {f:?}");
    }
    Ok(())
}
