//! Brute-force metric oracles.

use super::rng;
use longdoc::metrics::{best_threshold, default_grid, pr_auc, roc_auc, PredictionSet};
use rand::Rng;

/// Random prediction set with at least one positive and one negative;
/// about half the sets have scores rounded to two decimals to force ties.
pub fn random_set(r: &mut impl Rng) -> PredictionSet {
    let n = r.gen_range(2..=500);
    let rounded = r.gen_bool(0.5);
    let rate = r.gen_range(0.05..0.95);
    let mut scores = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let mut s: f64 = r.gen();
        if rounded {
            s = (s * 100.0).round() / 100.0;
        }
        scores.push(s);
        truth.push(match i {
            0 => true,
            1 => false,
            _ => r.gen_bool(rate),
        });
    }
    PredictionSet::from_pairs(1, scores, truth).unwrap()
}

/// P(score of a random positive > score of a random negative), ties half.
pub fn pairwise_auc(p: &PredictionSet) -> f64 {
    let pos: Vec<f64> = p.scores().iter().zip(p.truth()).filter(|x| *x.1).map(|x| *x.0).collect();
    let neg: Vec<f64> = p.scores().iter().zip(p.truth()).filter(|x| !*x.1).map(|x| *x.0).collect();
    let mut wins = 0.0;
    for &a in &pos {
        for &b in &neg {
            wins += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Precision and recall recounted from scratch at every distinct score,
/// integrated over recall by trapezoids from (0, 1).
pub fn naive_pr_auc(p: &PredictionSet) -> f64 {
    let mut thresholds: Vec<f64> = p.scores().to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let total_pos = p.truth().iter().filter(|&&t| t).count() as f64;
    let (mut r0, mut p0, mut area) = (0.0, 1.0, 0.0);
    for t in thresholds {
        let (mut tp, mut fp) = (0.0, 0.0);
        for (&s, &y) in p.scores().iter().zip(p.truth()) {
            if s >= t {
                if y {
                    tp += 1.0
                } else {
                    fp += 1.0
                }
            }
        }
        let (rec, prec) = (tp / total_pos, tp / (tp + fp));
        area += (rec - r0) * (prec + p0) / 2.0;
        (r0, p0) = (rec, prec);
    }
    area
}

/// Every grid point evaluated from raw counts; first maximum wins.
pub fn exhaustive_threshold(p: &PredictionSet, grid: &[f64]) -> (f64, f64) {
    let mut best = (grid[0], -1.0);
    for &t in grid {
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for (&s, &y) in p.scores().iter().zip(p.truth()) {
            match (s >= t, y) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    best
}

#[derive(Debug, Default)]
pub struct MetricReport {
    pub max_roc_dev: f64,
    pub max_pr_dev: f64,
    pub threshold_mismatches: usize,
}

pub fn metric_oracles(sets: usize) -> MetricReport {
    let mut r = rng(41);
    let grid = default_grid();
    let mut rep = MetricReport::default();
    for _ in 0..sets {
        let p = random_set(&mut r);
        rep.max_roc_dev = rep.max_roc_dev.max((roc_auc(&p).unwrap() - pairwise_auc(&p)).abs());
        rep.max_pr_dev = rep.max_pr_dev.max((pr_auc(&p).unwrap() - naive_pr_auc(&p)).abs());
        let (t, f1) = best_threshold(&p, &grid).unwrap();
        let (te, f1e) = exhaustive_threshold(&p, &grid);
        if t != te || (f1 - f1e).abs() > 1e-12 {
            rep.threshold_mismatches += 1;
        }
    }
    rep
}
