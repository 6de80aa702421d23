//! Declarative experiments: data -> split -> train -> score -> evaluate for
//! every sweep point and seed, with CSV tables and SVG plots.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bench::mean_std;
use super::plot::{line_plot, Series};
use super::synth::{synth_generate, SynthConfig};
use crate::detector::{anomaly_scores, auroc, fit_threshold, split_dataset, write_scores_csv, ScoreReport, ThresholdPolicy};
use crate::error::{Error, Result};
use crate::ingest::{open_capture, preprocess, IngestConfig, Label, SampleSet};
use crate::model::{build_model, ModelConfig};
use crate::trainer::{latent_dim_from_pca, train, training_checkpoint, write_history_csv, EpochRecord, TrainConfig};

/// Latent size: fixed, or chosen by 95% explained variance of the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "LatentDimRepr", into = "LatentDimRepr")]
pub enum LatentDim {
    #[default]
    Auto,
    Fixed(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LatentDimRepr {
    Fixed(usize),
    Named(String),
}

impl TryFrom<LatentDimRepr> for LatentDim {
    type Error = Error;

    fn try_from(r: LatentDimRepr) -> Result<Self> {
        match r {
            LatentDimRepr::Fixed(d) => Ok(LatentDim::Fixed(d)),
            LatentDimRepr::Named(s) => s.parse(),
        }
    }
}

impl From<LatentDim> for LatentDimRepr {
    fn from(d: LatentDim) -> Self {
        match d {
            LatentDim::Auto => LatentDimRepr::Named("auto".into()),
            LatentDim::Fixed(d) => LatentDimRepr::Fixed(d),
        }
    }
}

impl std::str::FromStr for LatentDim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(LatentDim::Auto),
            other => other
                .parse()
                .map(LatentDim::Fixed)
                .map_err(|_| Error::Config(format!("latent dimension must be \"auto\" or an integer, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyCapture {
    pub path: PathBuf,
    /// Label byte, at least 1.
    pub class: u8,
}

/// Where labeled samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated traffic; `n` and `l` come from the preprocess stage.
    Synth(SynthConfig),
    /// A labeled sample file; its `n` must match every swept `n`.
    Arcd { path: PathBuf },
    /// Captures labeled per file.
    Captures {
        normal: Vec<PathBuf>,
        #[serde(default)]
        anomaly: Vec<AnomalyCapture>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainStage {
    pub latent_dim: LatentDim,
    pub config: TrainConfig,
}

/// Held-out set scored after every epoch for the convergence curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpochEval {
    None,
    Validation,
    Test,
}

/// Which classes the test quota balances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balance {
    /// Normal against all anomaly classes pooled.
    Binary,
    /// Normal and every anomaly class separately.
    PerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateStage {
    /// Threshold policy, fitted on the training-set scores.
    pub policy: ThresholdPolicy,
    /// Test samples per class before the validation carve-out.
    pub test_quota: usize,
    pub balance: Balance,
    pub epoch_eval: EpochEval,
}

impl Default for EvaluateStage {
    fn default() -> Self {
        EvaluateStage {
            policy: ThresholdPolicy::Percentile99,
            test_quota: 400,
            balance: Balance::Binary,
            epoch_eval: EpochEval::Validation,
        }
    }
}

/// Empty axes fall back to the stage configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub lambda_g: Vec<f64>,
    pub n: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Parent of the `<name>-<hash>` report directory.
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: PathBuf::from("experiments"),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub source: DataSource,
    #[serde(default)]
    pub preprocess: IngestConfig,
    #[serde(default)]
    pub train: TrainStage,
    #[serde(default)]
    pub evaluate: EvaluateStage,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentSpec {
    pub fn from_toml_str(s: &str) -> Result<ExperimentSpec> {
        let spec: ExperimentSpec = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
        ExperimentSpec::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let safe = |c: char| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.');
        if self.name.is_empty() || !self.name.chars().all(safe) || self.name.starts_with('.') {
            return Err(Error::Config(format!(
                "experiment name {:?} must be non-empty and use only [A-Za-z0-9._-]",
                self.name
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.preprocess.validate()?;
        self.train.config.validate()?;
        if self.sweep.lambda_g.iter().any(|l| !(*l >= 0.0)) || self.sweep.n.contains(&0) {
            return Err(Error::Config("sweep values must be non-negative (n positive)".into()));
        }
        if let DataSource::Captures { normal, anomaly } = &self.source {
            if normal.is_empty() || anomaly.iter().any(|a| a.class == 0) {
                return Err(Error::Config("captures need normal files and anomaly classes >= 1".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding the output location.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputSpec::default();
        let json = serde_json::to_vec(&canonical).expect("specs always serialize");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `<output.dir>/<name>-<first 16 hex digits of the hash>`.
    pub fn report_dir(&self) -> PathBuf {
        self.output.dir.join(format!("{}-{}", self.name, &self.hash()[..16]))
    }

    /// Sweep points in run order: `n` outer, `lambda_g` inner.
    pub fn points(&self) -> Vec<(f64, usize)> {
        let lgs = if self.sweep.lambda_g.is_empty() {
            vec![self.train.config.adversarial.lambda_g]
        } else {
            self.sweep.lambda_g.clone()
        };
        let ns = if self.sweep.n.is_empty() {
            vec![self.preprocess.n]
        } else {
            self.sweep.n.clone()
        };
        ns.iter().flat_map(|&n| lgs.iter().map(move |&lg| (lg, n))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Preprocess,
    Split,
    Train,
    Score,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

/// Outcome of one seed at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub lambda_g: f64,
    pub n: usize,
    pub seed: u64,
    pub d: usize,
    pub auroc: Option<f64>,
    pub f1: f64,
    pub dr: f64,
    pub far: f64,
    pub threshold: f64,
    pub history: Vec<EpochRecord>,
    /// Held-out AUROC after each epoch, if configured.
    pub epoch_auroc: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub lambda_g: f64,
    pub n: usize,
    pub seed: u64,
    pub stage: Stage,
    pub error: String,
}

/// Mean and sample standard deviation over the seeds of one point; absent
/// when the point failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub lambda_g: f64,
    pub n: usize,
    pub completed_seeds: usize,
    pub failed: bool,
    pub auroc_mean: Option<f64>,
    pub auroc_std: Option<f64>,
    pub f1_mean: Option<f64>,
    pub f1_std: Option<f64>,
    pub dr_mean: Option<f64>,
    pub far_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub spec_hash: String,
    pub dir: PathBuf,
    pub points: Vec<PointSummary>,
    pub seeds: Vec<SeedResult>,
    pub failures: Vec<Failure>,
}

impl ExperimentReport {
    pub fn point(&self, lambda_g: f64, n: usize) -> Option<&PointSummary> {
        self.points.iter().find(|p| p.lambda_g == lambda_g && p.n == n)
    }

    pub fn seed_results(&self, lambda_g: f64, n: usize) -> impl Iterator<Item = &SeedResult> {
        self.seeds.iter().filter(move |s| s.lambda_g == lambda_g && s.n == n)
    }
}

fn load_data(spec: &ExperimentSpec, n: usize) -> Result<SampleSet> {
    let ingest = IngestConfig {
        n,
        ..spec.preprocess.clone()
    };
    ingest.validate()?;
    match &spec.source {
        DataSource::Synth(cfg) => {
            let cfg = SynthConfig {
                n,
                l: ingest.l,
                ..cfg.clone()
            };
            Ok(synth_generate(&cfg)?.samples)
        }
        DataSource::Arcd { path } => {
            let set = SampleSet::read(path)?;
            if set.n != n || set.l != ingest.l {
                return Err(Error::Config(format!(
                    "{} holds n = {}, l = {} samples; the point needs n = {n}, l = {}",
                    path.display(),
                    set.n,
                    set.l,
                    ingest.l
                )));
            }
            Ok(set)
        }
        DataSource::Captures { normal, anomaly } => {
            let mut set = SampleSet::new(n, ingest.l);
            let files = normal
                .iter()
                .map(|p| (p, Label::Normal))
                .chain(anomaly.iter().map(|a| (&a.path, Label::Anomaly(a.class))));
            for (path, label) in files {
                let (samples, stats) = preprocess(open_capture(path)?, &ingest)?;
                info!("{}: {} samples ({stats:?})", path.display(), samples.len());
                for s in samples {
                    set.push(&s.values, Some(label))?;
                }
            }
            Ok(set)
        }
    }
}

type StageResult<T> = std::result::Result<T, (Stage, Error)>;

fn at(stage: Stage) -> impl FnOnce(Error) -> (Stage, Error) {
    move |e| (stage, e)
}

fn run_seed(
    spec: &ExperimentSpec,
    data: &SampleSet,
    (lambda_g, n): (f64, usize),
    seed: u64,
    dir: &Path,
) -> StageResult<SeedResult> {
    let labels = data
        .labels
        .as_deref()
        .ok_or_else(|| (Stage::Split, Error::Split("the data carries no labels".into())))?;
    let split_labels: Vec<Label> = match spec.evaluate.balance {
        Balance::PerClass => labels.to_vec(),
        Balance::Binary => labels
            .iter()
            .map(|l| if l.is_anomaly() { Label::Anomaly(1) } else { Label::Normal })
            .collect(),
    };
    let split = split_dataset(&split_labels, spec.evaluate.test_quota, seed).map_err(at(Stage::Split))?;
    let train_set = data.select(&split.train);
    let eval_set = match spec.evaluate.epoch_eval {
        EpochEval::None => None,
        EpochEval::Validation => Some(data.select(&split.validation)),
        EpochEval::Test => Some(data.select(&split.test)),
    };

    let d = match spec.train.latent_dim {
        LatentDim::Auto => latent_dim_from_pca(&train_set).map_err(at(Stage::Train))?,
        LatentDim::Fixed(d) => d,
    };
    let mcfg = ModelConfig {
        l: data.l,
        ..ModelConfig::new(n, d)
    };
    let mut model = build_model(&mcfg, seed).map_err(at(Stage::Train))?;
    let mut tcfg = spec.train.config.clone();
    tcfg.seed = seed;
    tcfg.adversarial.lambda_g = lambda_g;
    info!("lambda_g {lambda_g} n {n} seed {seed}: d = {d}, {} training samples", train_set.len());

    let mut epoch_auroc = Vec::new();
    let state = train(&train_set, &mut model, &tcfg, |_, m| {
        if let Some(set) = &eval_set {
            let scores = anomaly_scores(m, set)?;
            let flags: Vec<bool> = set.labels.iter().flatten().map(|l| l.is_anomaly()).collect();
            epoch_auroc.push(auroc(&scores, &flags).ok());
        }
        Ok(())
    })
    .map_err(at(Stage::Train))?;
    fs::create_dir_all(dir).map_err(|e| (Stage::Train, e.into()))?;
    training_checkpoint(&model, &state, &tcfg)
        .and_then(|ck| ck.save(dir.join("model.ckpt")))
        .map_err(at(Stage::Train))?;
    write_history_csv(dir.join("losses.csv"), &state.history).map_err(at(Stage::Train))?;

    let test = data.select(&split.test);
    let test_labels = test.labels.clone().unwrap_or_default();
    let test_scores = anomaly_scores(&model, &test).map_err(at(Stage::Score))?;
    let train_scores = anomaly_scores(&model, &train_set).map_err(at(Stage::Score))?;
    write_scores_csv(dir.join("scores.csv"), &test_scores, Some(&test_labels)).map_err(at(Stage::Score))?;

    let eval = || -> Result<ScoreReport> {
        let tau = fit_threshold(&train_scores, spec.evaluate.policy)?;
        let report = ScoreReport::new(test_scores, test_labels, tau, spec.evaluate.policy)?;
        let mut json = report.summary_json();
        json["d"] = d.into();
        json["seed"] = seed.into();
        json["lambda_g"] = lambda_g.into();
        json["n"] = n.into();
        fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&json)?)?;
        Ok(report)
    };
    let report = eval().map_err(at(Stage::Evaluate))?;

    Ok(SeedResult {
        lambda_g,
        n,
        seed,
        d,
        auroc: report.metrics.auroc,
        f1: report.metrics.f1,
        dr: report.metrics.dr,
        far: report.metrics.far,
        threshold: report.threshold,
        history: state.history,
        epoch_auroc,
    })
}

fn summarize(lambda_g: f64, n: usize, results: &[SeedResult], failed: bool) -> PointSummary {
    let stat = |f: &dyn Fn(&SeedResult) -> Option<f64>| -> Option<(f64, f64)> {
        if failed || results.is_empty() {
            return None;
        }
        let v: Option<Vec<f64>> = results.iter().map(f).collect();
        v.map(|v| mean_std(&v))
    };
    let auroc = stat(&|r| r.auroc);
    let f1 = stat(&|r| Some(r.f1));
    PointSummary {
        lambda_g,
        n,
        completed_seeds: results.len(),
        failed,
        auroc_mean: auroc.map(|s| s.0),
        auroc_std: auroc.map(|s| s.1),
        f1_mean: f1.map(|s| s.0),
        f1_std: f1.map(|s| s.1),
        dr_mean: stat(&|r| Some(r.dr)).map(|s| s.0),
        far_mean: stat(&|r| Some(r.far)).map(|s| s.0),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Serde(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_tables(report: &ExperimentReport) -> Result<()> {
    let dir = &report.dir;
    write_csv(
        &dir.join("summary.csv"),
        &[
            "lambda_g", "n", "status", "seeds", "auroc_mean", "auroc_std", "f1_mean", "f1_std", "dr_mean", "far_mean",
        ],
        report.points.iter().map(|p| {
            vec![
                p.lambda_g.to_string(),
                p.n.to_string(),
                if p.failed { "failed" } else { "ok" }.to_string(),
                p.completed_seeds.to_string(),
                opt(p.auroc_mean),
                opt(p.auroc_std),
                opt(p.f1_mean),
                opt(p.f1_std),
                opt(p.dr_mean),
                opt(p.far_mean),
            ]
        }),
    )?;
    write_csv(
        &dir.join("seeds.csv"),
        &["lambda_g", "n", "seed", "d", "auroc", "f1", "dr", "far", "threshold"],
        report.seeds.iter().map(|s| {
            vec![
                s.lambda_g.to_string(),
                s.n.to_string(),
                s.seed.to_string(),
                s.d.to_string(),
                opt(s.auroc),
                s.f1.to_string(),
                s.dr.to_string(),
                s.far.to_string(),
                s.threshold.to_string(),
            ]
        }),
    )?;
    write_csv(
        &dir.join("epochs.csv"),
        &["lambda_g", "n", "seed", "epoch", "lr", "L_C", "L_G", "MSSIM", "GP", "auroc"],
        report.seeds.iter().flat_map(|s| {
            s.history.iter().enumerate().map(move |(i, h)| {
                vec![
                    s.lambda_g.to_string(),
                    s.n.to_string(),
                    s.seed.to_string(),
                    h.epoch.to_string(),
                    h.lr.to_string(),
                    h.critic_loss.to_string(),
                    h.generator_loss.to_string(),
                    h.mssim.to_string(),
                    h.gradient_penalty.to_string(),
                    opt(s.epoch_auroc.get(i).copied().flatten()),
                ]
            })
        }),
    )?;
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(report)?)?;
    Ok(())
}

fn write_plots(report: &ExperimentReport) -> Result<()> {
    // mean held-out AUROC per epoch, one line per (lambda_g, n)
    let mut by_point: BTreeMap<(String, usize), Vec<&SeedResult>> = BTreeMap::new();
    for s in &report.seeds {
        by_point.entry((s.lambda_g.to_string(), s.n)).or_default().push(s);
    }
    let epoch_series: Vec<Series> = by_point
        .iter()
        .filter(|(_, seeds)| seeds.iter().any(|s| !s.epoch_auroc.is_empty()))
        .map(|((lg, n), seeds)| {
            let epochs = seeds.iter().map(|s| s.epoch_auroc.len()).min().unwrap_or(0);
            let points = (0..epochs)
                .map(|e| {
                    let v: Vec<f64> = seeds.iter().filter_map(|s| s.epoch_auroc[e]).collect();
                    let y = if v.is_empty() { f64::NAN } else { mean_std(&v).0 };
                    ((e + 1) as f64, y)
                })
                .collect();
            Series {
                name: format!("lambda_g = {lg}, n = {n}"),
                points,
            }
        })
        .collect();
    line_plot(report.dir.join("auroc_vs_epoch.svg"), "Held-out AUROC during training", "epoch", "AUROC", &epoch_series)?;

    let mut by_lg: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for p in &report.points {
        if let Some(a) = p.auroc_mean {
            by_lg.entry(p.lambda_g.to_string()).or_default().push((p.n as f64, a));
        }
    }
    let n_series: Vec<Series> = by_lg
        .into_iter()
        .map(|(lg, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series {
                name: format!("lambda_g = {lg}"),
                points,
            }
        })
        .collect();
    line_plot(report.dir.join("auroc_vs_n.svg"), "Test AUROC by packets per sample", "n", "AUROC", &n_series)
}

/// Runs every sweep point for every seed. A stage failure stops the
/// remaining seeds of its point, is recorded, and the next point proceeds.
/// Returns an error only for invalid specs or unwritable report files.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    spec.validate()?;
    let dir = spec.report_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("spec.json"), serde_json::to_vec_pretty(spec)?)?;
    let mut report = ExperimentReport {
        name: spec.name.clone(),
        spec_hash: spec.hash(),
        dir: dir.clone(),
        points: Vec::new(),
        seeds: Vec::new(),
        failures: Vec::new(),
    };

    let mut cache: Option<(usize, std::result::Result<SampleSet, String>)> = None;
    for (lambda_g, n) in spec.points() {
        if cache.as_ref().map(|c| c.0) != Some(n) {
            cache = Some((n, load_data(spec, n).map_err(|e| e.to_string())));
        }
        let data = &cache.as_ref().expect("just filled").1;
        let mut results = Vec::new();
        let mut failed = false;
        for &seed in &spec.seeds {
            let point_dir = dir.join("points").join(format!("lg{lambda_g}-n{n}")).join(format!("seed{seed}"));
            let outcome = match data {
                Ok(data) => run_seed(spec, data, (lambda_g, n), seed, &point_dir),
                Err(e) => Err((Stage::Preprocess, Error::Config(e.clone()))),
            };
            match outcome {
                Ok(r) => results.push(r),
                Err((stage, e)) => {
                    warn!("lambda_g {lambda_g} n {n} seed {seed}: {stage} failed: {e}");
                    report.failures.push(Failure {
                        lambda_g,
                        n,
                        seed,
                        stage,
                        error: e.to_string(),
                    });
                    failed = true;
                    break;
                }
            }
        }
        report.points.push(summarize(lambda_g, n, &results, failed));
        report.seeds.extend(results);
    }
    write_tables(&report)?;
    write_plots(&report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        name = "tiny"
        [source.synth]
        n_normal_flows = 10
        n_anomaly_flows = 5
    "#;

    #[test]
    fn parses_defaults_and_rejects_unknown_keys() {
        let spec = ExperimentSpec::from_toml_str(MINIMAL).unwrap();
        assert_eq!(spec.seeds, vec![1]);
        assert_eq!(spec.points(), vec![(0.01, 2)]);
        assert_eq!(spec.train.latent_dim, LatentDim::Auto);
        let bad = format!("{MINIMAL}\n[sweep]\nlambda = [0.0]\n");
        assert!(ExperimentSpec::from_toml_str(&bad).is_err());
    }

    #[test]
    fn latent_dim_forms() {
        let spec = ExperimentSpec::from_toml_str(&format!("{MINIMAL}\n[train]\nlatent_dim = 12\n")).unwrap();
        assert_eq!(spec.train.latent_dim, LatentDim::Fixed(12));
        assert!(ExperimentSpec::from_toml_str(&format!("{MINIMAL}\n[train]\nlatent_dim = \"big\"\n")).is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentSpec::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output.dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seeds = vec![2];
        assert_ne!(a.hash(), b.hash());
        assert!(a.report_dir().ends_with(format!("tiny-{}", &a.hash()[..16])));
    }

    #[test]
    fn sweep_order() {
        let mut spec = ExperimentSpec::from_toml_str(MINIMAL).unwrap();
        spec.sweep = Sweep {
            lambda_g: vec![0.0, 0.01],
            n: vec![2, 5],
        };
        assert_eq!(spec.points(), vec![(0.0, 2), (0.01, 2), (0.0, 5), (0.01, 5)]);
    }
}
