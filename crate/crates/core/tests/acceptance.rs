//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use arcade::detector::{anomaly_scores, auroc, evaluate, fit_threshold, ThresholdPolicy};
use arcade::harness::{run_experiment, synth_generate, ExperimentReport, ExperimentSpec, SynthConfig};
use arcade::ingest::{Label, SampleSet};
use arcade::model::{build_model, Checkpoint, ModelConfig, ModelHandles};
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let took = start.elapsed();
    o.detail = format!("{}; {:.1} s", o.detail, took.as_secs_f64());
    if let Some(limit) = limit {
        if took >= limit {
            o.pass = false;
            o.detail = format!("{} (limit {} s)", o.detail, limit.as_secs());
        }
    }
    o
}

fn architecture() -> Outcome {
    let c = build_model(&ModelConfig::new(2, 50), 0).unwrap().param_counts();
    let got = (c.encoder, c.decoder, c.critic);
    outcome(got == (90_528, 93_600, 100_105), format!("encoder/decoder/critic = {got:?}"))
}

fn loss_oracles() -> Outcome {
    let mssim_gap = mssim_oracle_gap(100, 2024);
    let mut gp_gap = linear_penalty_gap(&[0.6, 0.8], 8, 1).max(linear_penalty_gap(&[3.0, 4.0], 8, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..20 {
        let w: Vec<f64> = (0..16).map(|_| rand::Rng::gen_range(&mut rng, -1.5..1.5)).collect();
        gp_gap = gp_gap.max(linear_penalty_gap(&w, 8, seed));
    }
    outcome(
        mssim_gap < 1e-6 && gp_gap < 1e-5,
        format!("max |MSSIM - enumeration| = {mssim_gap:.2e} (< 1e-6), max |GP - (|w|-1)^2| = {gp_gap:.2e} (< 1e-5)"),
    )
}

fn gradients() -> Outcome {
    let mut worst = (String::new(), 0.0f64);
    for seed in [1, 2] {
        let m = tiny_model(seed);
        let batch = tiny_batch(seed + 10);
        let errs = finite_difference_errors(&m, &batch, generator_loss_and_grads)
            .into_iter()
            .map(|(k, e)| (format!("L_G {k}"), e))
            .chain(
                finite_difference_errors(&m, &batch, critic_loss_and_grads)
                    .into_iter()
                    .map(|(k, e)| (format!("L_C {k}"), e)),
            );
        for (k, e) in errs {
            if e > worst.1 || worst.0.is_empty() {
                worst = (k, e);
            }
        }
    }
    outcome(worst.1 < 1e-3, format!("max relative error {:.2e} at {} (< 1e-3)", worst.1, worst.0))
}

fn regularization_spec(out: &Path) -> ExperimentSpec {
    let text = format!(
        r#"
name = "regularization"
seeds = [1, 2, 3]

[source.synth]

[train.config]
epochs_phase1 = 10
epochs_phase2 = 5

[sweep]
lambda_g = [0.0, 0.01]

[output]
dir = "{}"
"#,
        out.display()
    );
    ExperimentSpec::from_toml_str(&text).unwrap()
}

fn regularization(report: &ExperimentReport) -> Outcome {
    if !report.failures.is_empty() {
        return outcome(false, format!("failures: {:?}", report.failures));
    }
    let mean = |lg: f64| report.point(lg, 2).and_then(|p| p.auroc_mean);
    let (Some(plain), Some(reg)) = (mean(0.0), mean(0.01)) else {
        return outcome(false, "missing AUROC".into());
    };
    let per_seed = |lg: f64| {
        report
            .seed_results(lg, 2)
            .map(|s| format!("{:.4}", s.auroc.unwrap_or(f64::NAN)))
            .collect::<Vec<_>>()
            .join(", ")
    };
    outcome(
        reg >= plain - 0.01,
        format!(
            "mean AUROC lambda_g=0.01: {reg:.4} [{}], lambda_g=0: {plain:.4} [{}]; regularization {}",
            per_seed(0.01),
            per_seed(0.0),
            if reg > plain { "improves" } else { "does not improve" }
        ),
    )
}

fn fresh_normals(seed: u64, count: usize) -> SampleSet {
    let set = synth_generate(&SynthConfig {
        seed,
        n_normal_flows: count,
        n_anomaly_flows: 1,
        ..SynthConfig::default()
    })
    .unwrap()
    .samples;
    let idx: Vec<usize> = (0..set.len()).filter(|&i| set.label(i) == Some(Label::Normal)).collect();
    set.select(&idx)
}

fn far_at(scores: &[f64], tau: f64) -> f64 {
    let (m, _) = evaluate(scores, &vec![false; scores.len()], tau).unwrap();
    m.far
}

fn threshold_far(model: &ModelHandles, tau: f64) -> Outcome {
    let fresh = fresh_normals(10_001, 10_000);
    let scores = anomaly_scores(model, &fresh).unwrap();
    let far = far_at(&scores, tau);
    // a threshold fitted on a second fresh normal sample, for comparison
    let other = anomaly_scores(model, &fresh_normals(10_002, 10_000)).unwrap();
    let fresh_tau = fit_threshold(&other, ThresholdPolicy::Percentile99).unwrap();
    outcome(
        fresh.len() >= 10_000 && (0.005..=0.015).contains(&far),
        format!(
            "FAR {:.2}% on {} fresh normal scores at the training-fit 99th percentile (tolerance [0.5%, 1.5%]); \
             threshold fitted on other fresh normals gives {:.2}%",
            far * 100.0,
            fresh.len(),
            far_at(&scores, fresh_tau) * 100.0
        ),
    )
}

fn golden() -> Outcome {
    let mut bad = Vec::new();
    for name in ["padding", "fin", "timeout"] {
        let (got, want) = golden_case(name);
        if got != want {
            bad.push(name);
        }
    }
    outcome(bad.is_empty(), format!("3 captures, mismatched: {bad:?}"))
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (s, l) = random_score_set(&mut rng);
        worst = worst.max((auroc(&s, &l).unwrap() - trapezoid_auroc(&s, &l)).abs());
    }
    let labels = [false, false, true, true];
    let perfect = auroc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap();
    let coin = auroc(&[0.1, 0.9, 0.2, 0.8], &labels).unwrap();
    outcome(
        worst < 1e-9 && perfect == 1.0 && coin == 0.5,
        format!("max |AUROC - trapezoid| = {worst:.1e} (< 1e-9), perfect = {perfect}, coin flip = {coin}"),
    )
}

fn determinism_spec(out: &Path) -> ExperimentSpec {
    let text = format!(
        r#"
name = "determinism"
seeds = [1, 2]

[source.synth]
seed = 3
n_normal_flows = 600
n_anomaly_flows = 100

[train.config]
epochs_phase1 = 2
epochs_phase2 = 1

[evaluate]
test_quota = 40

[sweep]
lambda_g = [0.0, 0.01]

[output]
dir = "{}"
"#,
        out.display()
    );
    ExperimentSpec::from_toml_str(&text).unwrap()
}

fn determinism() -> Outcome {
    let a_dir = tempfile::tempdir().unwrap();
    let b_dir = tempfile::tempdir().unwrap();
    let a = run_experiment(&determinism_spec(a_dir.path())).unwrap();
    let b = run_experiment(&determinism_spec(b_dir.path())).unwrap();
    let mut same = a.failures.is_empty() && a.points == b.points && a.seeds == b.seeds && a.failures == b.failures;
    let files = ["summary.csv", "seeds.csv", "epochs.csv"];
    for f in files {
        same &= std::fs::read(a.dir.join(f)).unwrap() == std::fs::read(b.dir.join(f)).unwrap();
    }
    for s in &a.seeds {
        let rel = format!("points/lg{}-n{}/seed{}/scores.csv", s.lambda_g, s.n, s.seed);
        same &= std::fs::read(a.dir.join(&rel)).unwrap() == std::fs::read(b.dir.join(&rel)).unwrap();
    }
    outcome(
        same,
        format!(
            "{} points x {} seeds, summaries, per-seed results and score files {}",
            a.points.len(),
            a.seeds.len() / a.points.len().max(1),
            if same { "identical" } else { "differ" }
        ),
    )
}

#[test]
fn acceptance() {
    let mut lines = Vec::new();
    let mut record = |id: u32, name: &str, o: Outcome| {
        let line = format!("{} criterion {id} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        println!("{line}");
        lines.push((o.pass, line));
    };

    record(1, "architecture", timed(Some(Duration::from_secs(1)), architecture));
    record(2, "loss oracles", timed(Some(Duration::from_secs(10)), loss_oracles));
    record(3, "gradients", timed(Some(Duration::from_secs(30)), gradients));

    let out = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let report = run_experiment(&regularization_spec(out.path()));
    let took = start.elapsed();
    let (mut reg, model) = match &report {
        Ok(r) => {
            let ck = r.dir.join("points/lg0.01-n2/seed1/model.ckpt");
            let seed1 = r.seed_results(0.01, 2).find(|s| s.seed == 1).map(|s| s.threshold);
            (regularization(r), Checkpoint::load(ck).and_then(|c| c.to_model()).ok().zip(seed1))
        }
        Err(e) => (outcome(false, format!("experiment error: {e}")), None),
    };
    reg.detail = format!("{}; {:.1} s", reg.detail, took.as_secs_f64());
    if took >= Duration::from_secs(15 * 60) {
        reg.pass = false;
        reg.detail += " (limit 900 s)";
    }
    record(4, "adversarial regularization", reg);

    let far = match model {
        Some((m, tau)) => timed(None, || threshold_far(&m, tau)),
        None => outcome(false, "no trained model from criterion 4".into()),
    };
    record(5, "threshold FAR", far);
    record(6, "golden captures", timed(None, golden));
    record(7, "metric oracles", timed(None, metric_oracles));
    record(8, "determinism", timed(None, determinism));

    let failed: Vec<&String> = lines.iter().filter(|(p, _)| !p).map(|(_, l)| l).collect();
    assert!(failed.is_empty(), "failed criteria:\n{failed:#?}");
}

/// Needs a labeled sample file preprocessed at n = 2 from the USTC-TFC
/// captures, named by `ARCADE_USTC_ARCD`. Runs for hours.
#[test]
#[ignore]
fn full_scale_ustc() {
    let path = std::env::var("ARCADE_USTC_ARCD").expect("set ARCADE_USTC_ARCD to a labeled n = 2 sample file");
    let out = tempfile::tempdir().unwrap();
    let text = format!(
        "name = \"ustc\"\nseeds = [1]\n[source.arcd]\npath = \"{path}\"\n[evaluate]\nepoch_eval = \"none\"\n[output]\ndir = \"{}\"\n",
        out.path().display()
    );
    let report = run_experiment(&ExperimentSpec::from_toml_str(&text).unwrap()).unwrap();
    let a = report.point(0.01, 2).and_then(|p| p.auroc_mean);
    let pass = a.is_some_and(|a| a >= 0.995);
    println!("{} criterion 9 (full-scale USTC-TFC): mean AUROC {a:?} (>= 0.995)", if pass { "PASS" } else { "FAIL" });
    assert!(pass);
}
