mod common;

use arcade::detector::{auroc, evaluate, evaluate_per_class, fit_threshold, split_dataset, ThresholdPolicy};
use arcade::ingest::Label;
use common::{random_score_set, trapezoid_auroc};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn auroc_matches_trapezoidal_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let (s, l) = random_score_set(&mut rng);
        assert!((auroc(&s, &l).unwrap() - trapezoid_auroc(&s, &l)).abs() < 1e-9);
    }
}

#[test]
fn separation_extremes() {
    let l = [false, false, true, true];
    assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &l).unwrap(), 1.0);
    assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &l).unwrap(), 0.0);
    assert_eq!(auroc(&[0.1, 0.9, 0.2, 0.8], &l).unwrap(), 0.5);
}

#[test]
fn single_class_keeps_threshold_metrics() {
    let (m, err) = evaluate(&[0.1, 0.7, 0.9], &[false; 3], 0.5).unwrap();
    assert!(err.is_some());
    assert_eq!(m.auroc, None);
    assert_eq!((m.fp, m.tn), (2, 1));
}

#[test]
fn max_threshold_has_no_false_alarms_on_its_own_scores() {
    let s = [0.3, 0.1, 0.7, 0.7, 0.2];
    let tau = fit_threshold(&s, ThresholdPolicy::Max).unwrap();
    let (m, _) = evaluate(&s, &[false; 5], tau).unwrap();
    assert_eq!(m.far, 0.0);
}

#[test]
fn per_class_uses_the_same_metrics() {
    let scores = [0.1, 0.2, 0.3, 0.9, 0.4, 0.95];
    let labels = [
        Label::Normal,
        Label::Normal,
        Label::Normal,
        Label::Anomaly(1),
        Label::Anomaly(2),
        Label::Anomaly(2),
    ];
    let per = evaluate_per_class(&scores, &labels, 0.35).unwrap();
    let (only1, _) = evaluate(&[0.1, 0.2, 0.3, 0.9], &[false, false, false, true], 0.35).unwrap();
    assert_eq!(per[&1], only1);
    assert_eq!(per.len(), 2);
}

#[test]
fn split_example() {
    let mut labels = vec![Label::Normal; 1000];
    labels.extend(vec![Label::Anomaly(1); 100]);
    let split = split_dataset(&labels, 100, 4).unwrap();
    let count = |idx: &[usize], anomalous: bool| idx.iter().filter(|&&i| labels[i].is_anomaly() == anomalous).count();
    assert_eq!((count(&split.validation, false), count(&split.validation, true)), (5, 5));
    assert_eq!((count(&split.test, false), count(&split.test, true)), (95, 95));
    assert_eq!(split.train.len(), 900);
    assert_eq!(count(&split.train, true), 0);
    assert_eq!(split, split_dataset(&labels, 100, 4).unwrap());
    assert_ne!(split, split_dataset(&labels, 100, 5).unwrap());
    assert!(split_dataset(&labels, 19, 4).is_err());
}

proptest! {
    #[test]
    fn auroc_ignores_increasing_transforms(
        raw in prop::collection::vec((0.0f64..10.0, any::<bool>()), 2..60),
    ) {
        let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
        prop_assume!(labels.iter().any(|l| *l) && labels.iter().any(|l| !*l));
        let moved: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp() + 3.0).collect();
        let a = auroc(&scores, &labels).unwrap();
        prop_assert!((a - auroc(&moved, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn raising_the_threshold_is_monotone(
        raw in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..60),
        t1 in 0.0f64..1.0,
        t2 in 0.0f64..1.0,
    ) {
        let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let (a, _) = evaluate(&scores, &labels, lo).unwrap();
        let (b, _) = evaluate(&scores, &labels, hi).unwrap();
        prop_assert!(b.far <= a.far);
        prop_assert!(b.dr <= a.dr);
    }
}
