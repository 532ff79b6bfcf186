mod common;

use common::metric_oracles::*;
use longdoc::metrics::{evaluate, PredictionSet};

#[test]
fn metrics_match_brute_force_oracles() {
    let rep = metric_oracles(200);
    assert!(rep.max_roc_dev <= 1e-9, "{rep:?}");
    assert!(rep.max_pr_dev <= 1e-9, "{rep:?}");
    assert_eq!(rep.threshold_mismatches, 0, "{rep:?}");
}

#[test]
fn micro_averaging_pools_over_labels() {
    // Two notes, two labels. Label 0 perfect, label 1 one false positive.
    let mut p = PredictionSet::new(2);
    p.push_note(&[0.9f64, 0.8], &longdoc::corpus::SparseLabels::new(vec![0])).unwrap();
    p.push_note(&[0.1f64, 0.7], &longdoc::corpus::SparseLabels::new(vec![1])).unwrap();
    let r = evaluate(&p, 0.5);
    // tp = 2, fp = 1, fn = 0
    assert!((r.micro_precision - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.micro_recall, 1.0);
    assert!((r.micro_f1 - 0.8).abs() < 1e-12);
}
