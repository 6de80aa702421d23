//! Reconstruction-error scoring, thresholds, metrics and dataset splits.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Label, SampleSet};
use crate::model::ModelHandles;

/// `A(x) = ||x - D(E(x))||^2` for every sample, batch norm in inference mode.
pub fn anomaly_scores(model: &ModelHandles, data: &SampleSet) -> Result<Vec<f64>> {
    anomaly_scores_batched(model, data, 256)
}

/// [`anomaly_scores`] evaluating `batch_size` samples per forward pass.
pub fn anomaly_scores_batched(model: &ModelHandles, data: &SampleSet, batch_size: usize) -> Result<Vec<f64>> {
    if data.width() != model.config.w() {
        return Err(Error::Length {
            expected: model.config.w(),
            got: data.width(),
        });
    }
    if data.is_empty() {
        return Ok(Vec::new());
    }
    let recon = model.reconstruct_chunked(&data.data, batch_size)?;
    Ok(data
        .data
        .chunks(data.width())
        .zip(recon.chunks(data.width()))
        .map(|(x, r)| x.iter().zip(r).map(|(&a, b)| (f64::from(a) - b).powi(2)).sum())
        .collect())
}

pub fn anomaly_score(model: &ModelHandles, x: &[f32]) -> Result<f64> {
    let r = model.reconstruct(x)?;
    Ok(x.iter().zip(&r).map(|(&a, b)| (f64::from(a) - b).powi(2)).sum())
}

/// Serialized as `"p99"`, `"max"` or a decimal threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ThresholdPolicy {
    /// Nearest-rank 99th percentile of the normal scores.
    Percentile99,
    /// Largest normal score.
    Max,
    /// A fixed threshold.
    Custom(f64),
}

impl std::str::FromStr for ThresholdPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p99" | "percentile_99" => Ok(ThresholdPolicy::Percentile99),
            "max" => Ok(ThresholdPolicy::Max),
            other => other
                .parse::<f64>()
                .map(ThresholdPolicy::Custom)
                .map_err(|_| Error::Config(format!("unknown threshold policy {other:?}"))),
        }
    }
}

impl std::fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ThresholdPolicy::Percentile99 => f.write_str("p99"),
            ThresholdPolicy::Max => f.write_str("max"),
            ThresholdPolicy::Custom(t) => write!(f, "{t}"),
        }
    }
}

impl TryFrom<String> for ThresholdPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ThresholdPolicy> for String {
    fn from(p: ThresholdPolicy) -> String {
        p.to_string()
    }
}

/// Nearest-rank percentile: the `ceil(p * N)`-th smallest value.
pub fn nearest_rank(scores: &[f64], p: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Metric("no scores".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("percentile {p} outside [0, 1]")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

pub fn fit_threshold(normal_scores: &[f64], policy: ThresholdPolicy) -> Result<f64> {
    if normal_scores.is_empty() {
        return Err(Error::Metric("cannot fit a threshold on no scores".into()));
    }
    if normal_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric("scores must be finite".into()));
    }
    match policy {
        ThresholdPolicy::Percentile99 => {
            if normal_scores.len() < 100 {
                return Err(Error::Metric(format!(
                    "the 99th percentile needs at least 100 scores, got {}",
                    normal_scores.len()
                )));
            }
            nearest_rank(normal_scores, 0.99)
        }
        ThresholdPolicy::Max => Ok(normal_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        ThresholdPolicy::Custom(t) => Ok(t),
    }
}

/// Area under the ROC curve with anomalies as positives, via the
/// Mann-Whitney statistic with midranks for ties.
pub fn auroc(scores: &[f64], is_anomaly: &[bool]) -> Result<f64> {
    if scores.len() != is_anomaly.len() {
        return Err(Error::Length {
            expected: scores.len(),
            got: is_anomaly.len(),
        });
    }
    let pos = is_anomaly.iter().filter(|&&a| a).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUROC needs both normal and anomalous samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| is_anomaly[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `None` when only one class is present.
    pub auroc: Option<f64>,
    pub f1: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    /// Detection rate (recall on anomalies).
    pub dr: f64,
    /// False-alarm rate on normal samples.
    pub far: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Threshold metrics (anomaly iff `score > tau`) and AUROC. The AUROC
/// error of a single-class set is returned alongside the other metrics.
pub fn evaluate(scores: &[f64], is_anomaly: &[bool], tau: f64) -> Result<(Metrics, Option<Error>)> {
    if scores.len() != is_anomaly.len() {
        return Err(Error::Length {
            expected: scores.len(),
            got: is_anomaly.len(),
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &a) in scores.iter().zip(is_anomaly) {
        match (s > tau, a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let (auroc, err) = match auroc(scores, is_anomaly) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e)),
    };
    Ok((
        Metrics {
            auroc,
            f1,
            accuracy: ratio(tp + tn, scores.len()),
            precision,
            recall,
            dr: recall,
            far: ratio(fp, fp + tn),
            tp,
            fp,
            tn,
            fn_,
        },
        err,
    ))
}

/// Scores, threshold and metrics of one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
    pub threshold: f64,
    pub policy: ThresholdPolicy,
    pub metrics: Metrics,
    /// Normal samples against each anomaly class alone.
    pub per_class: BTreeMap<u8, Metrics>,
}

impl ScoreReport {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>, threshold: f64, policy: ThresholdPolicy) -> Result<ScoreReport> {
        let flags: Vec<bool> = labels.iter().map(|l| l.is_anomaly()).collect();
        let (metrics, _) = evaluate(&scores, &flags, threshold)?;
        let per_class = evaluate_per_class(&scores, &labels, threshold)?;
        Ok(ScoreReport {
            scores,
            labels,
            threshold,
            policy,
            metrics,
            per_class,
        })
    }

    /// Summary without the per-sample vectors.
    pub fn summary_json(&self) -> serde_json::Value {
        let normal = self.labels.iter().filter(|l| !l.is_anomaly()).count();
        serde_json::json!({
            "threshold": self.threshold,
            "policy": self.policy,
            "counts": {"normal": normal, "anomaly": self.labels.len() - normal},
            "metrics": self.metrics,
            "per_class": self.per_class,
        })
    }
}

/// Each anomaly class evaluated against all normal samples, through the
/// same [`evaluate`] path as the pooled evaluation.
pub fn evaluate_per_class(scores: &[f64], labels: &[Label], tau: f64) -> Result<BTreeMap<u8, Metrics>> {
    if scores.len() != labels.len() {
        return Err(Error::Length {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let mut classes: Vec<u8> = labels
        .iter()
        .filter_map(|l| match l {
            Label::Anomaly(k) => Some(*k),
            Label::Normal => None,
        })
        .collect();
    classes.sort_unstable();
    classes.dedup();
    let mut out = BTreeMap::new();
    for class in classes {
        let (s, f): (Vec<f64>, Vec<bool>) = scores
            .iter()
            .zip(labels)
            .filter(|(_, l)| matches!(l, Label::Normal) || **l == Label::Anomaly(class))
            .map(|(s, l)| (*s, l.is_anomaly()))
            .unzip();
        out.insert(class, evaluate(&s, &f, tau)?.0);
    }
    Ok(out)
}

/// Writes `index,label,score` rows; `label` is empty for unlabeled data.
pub fn write_scores_csv(path: impl AsRef<Path>, scores: &[f64], labels: Option<&[Label]>) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != scores.len() {
            return Err(Error::Length {
                expected: scores.len(),
                got: l.len(),
            });
        }
    }
    let csv_err = |e: csv::Error| Error::Serde(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["index", "label", "score"]).map_err(csv_err)?;
    for (i, s) in scores.iter().enumerate() {
        let label = labels.map(|l| l[i].to_byte().to_string()).unwrap_or_default();
        w.write_record([i.to_string(), label, s.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_scores_csv`]. Labels are returned only if
/// every row has one.
pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Option<Vec<Label>>)> {
    #[derive(Deserialize)]
    struct Row {
        score: f64,
        label: Option<u8>,
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Serde(e.to_string()))?;
        scores.push(row.score);
        labels.push(row.label.map(Label::from_byte));
    }
    let labels = labels.into_iter().collect::<Option<Vec<_>>>();
    Ok((scores, labels))
}

/// Index sets of a train / validation / test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    /// Normal samples only.
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    /// Balanced test set after the validation carve-out.
    pub test: Vec<usize>,
}

/// Fraction of each class's test quota moved to validation.
pub const VALIDATION_FRACTION: f64 = 0.05;

/// Balanced split: every class (normal and each anomaly class) contributes
/// `test_quota` samples to the test pool; `floor(5%)` of each class's quota
/// moves to validation; the remaining normal samples form the training set.
pub fn split_dataset(labels: &[Label], test_quota: usize, seed: u64) -> Result<SplitIndices> {
    let mut by_class: BTreeMap<Label, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(*l).or_default().push(i);
    }
    if by_class.len() < 2 || !by_class.contains_key(&Label::Normal) {
        return Err(Error::Split("need normal samples and at least one anomaly class".into()));
    }
    let carve = (test_quota as f64 * VALIDATION_FRACTION).floor() as usize;
    if carve == 0 {
        return Err(Error::Split(format!(
            "a test quota of {test_quota} per class leaves an empty validation set; use at least 20"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = SplitIndices {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (label, mut idx) in by_class {
        let needed = test_quota + usize::from(label == Label::Normal);
        if idx.len() < needed {
            return Err(Error::Split(format!(
                "class {label:?} has {} samples, needs at least {needed}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let rest = idx.split_off(test_quota);
        split.validation.extend_from_slice(&idx[..carve]);
        split.test.extend_from_slice(&idx[carve..]);
        if label == Label::Normal {
            split.train = rest;
        }
    }
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}
