//! Micro-averaged evaluation over (note, label) pairs.
//!
//! Every (note, label) pair is one binary instance. A pair is predicted
//! positive when its probability is at least the threshold. AUCs are computed
//! over the pooled pairs by sweeping every distinct score.

use std::fmt::Write as _;

use crate::corpus::SparseLabels;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionSet {
    num_labels: usize,
    scores: Vec<f64>,
    truth: Vec<bool>,
}

impl PredictionSet {
    pub fn new(num_labels: usize) -> Self {
        Self {
            num_labels,
            ..Self::default()
        }
    }

    /// Pooled pairs given directly; `scores.len()` must be a multiple of `num_labels`.
    pub fn from_pairs(num_labels: usize, scores: Vec<f64>, truth: Vec<bool>) -> Result<Self> {
        if scores.len() != truth.len() || num_labels == 0 || scores.len() % num_labels != 0 {
            return Err(Error::Shape {
                op: "prediction set",
                left: vec![scores.len(), num_labels],
                right: vec![truth.len()],
            });
        }
        Ok(Self {
            num_labels,
            scores,
            truth,
        })
    }

    pub fn push_note<F: Copy + Into<f64>>(&mut self, probs: &[F], labels: &SparseLabels) -> Result<()> {
        if probs.len() != self.num_labels {
            return Err(Error::LabelMismatch {
                checkpoint: probs.len(),
                corpus: self.num_labels,
            });
        }
        self.scores.extend(probs.iter().map(|&p| p.into()));
        self.truth.extend((0..self.num_labels).map(|c| labels.contains(c)));
        Ok(())
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn num_notes(&self) -> usize {
        if self.num_labels == 0 {
            0
        } else {
            self.scores.len() / self.num_labels
        }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn truth(&self) -> &[bool] {
        &self.truth
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion_at(preds: &PredictionSet, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &y) in preds.scores.iter().zip(&preds.truth) {
        match (s >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn micro_precision(tp: u64, fp: u64) -> f64 {
    ratio(tp, tp + fp)
}

pub fn micro_recall(tp: u64, fn_: u64) -> f64 {
    ratio(tp, tp + fn_)
}

/// Harmonic mean of micro precision and recall; zero when both are zero.
pub fn micro_f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let p = micro_precision(tp, fp);
    let r = micro_recall(tp, fn_);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// 0.01, 0.02, …, 0.99.
pub fn default_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

/// Grid point with the highest micro F1; ties go to the smallest threshold.
pub fn best_threshold(preds: &PredictionSet, grid: &[f64]) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::Empty("threshold grid".into()));
    }
    let mut pos: Vec<f64> = Vec::new();
    let mut neg: Vec<f64> = Vec::new();
    for (&s, &y) in preds.scores.iter().zip(&preds.truth) {
        if y {
            pos.push(s)
        } else {
            neg.push(s)
        }
    }
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let at_least = |sorted: &[f64], t: f64| (sorted.len() - sorted.partition_point(|&v| v < t)) as u64;

    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        let tp = at_least(&pos, t);
        let fp = at_least(&neg, t);
        let fn_ = pos.len() as u64 - tp;
        let f1 = micro_f1(tp, fp, fn_);
        best = match best {
            Some((bt, bf)) if bf > f1 || (bf == f1 && bt <= t) => Some((bt, bf)),
            _ => Some((t, f1)),
        };
    }
    Ok(best.expect("grid is non-empty"))
}

/// Cumulative (tp, fp) after each group of tied scores, highest score first.
fn sweep(preds: &PredictionSet) -> (Vec<(u64, u64)>, u64, u64) {
    let mut order: Vec<usize> = (0..preds.scores.len()).collect();
    order.sort_by(|&a, &b| preds.scores[b].total_cmp(&preds.scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for (i, &idx) in order.iter().enumerate() {
        if preds.truth[idx] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order
            .get(i + 1)
            .map_or(true, |&next| preds.scores[next] != preds.scores[idx]);
        if last_of_group {
            points.push((tp, fp));
        }
    }
    (points, tp, fp)
}

/// Area under the ROC curve by the trapezoid rule from (0,0). `None` when
/// either class is absent.
pub fn roc_auc(preds: &PredictionSet) -> Option<f64> {
    let (points, p, n) = sweep(preds);
    if p == 0 || n == 0 {
        return None;
    }
    Some(trapezoid_roc(&points, p, n))
}

pub(crate) fn trapezoid_roc(points: &[(u64, u64)], p: u64, n: u64) -> f64 {
    let (mut x0, mut y0, mut area) = (0.0, 0.0, 0.0);
    for &(tp, fp) in points {
        let (x, y) = (fp as f64 / n as f64, tp as f64 / p as f64);
        area += (x - x0) * (y + y0) / 2.0;
        (x0, y0) = (x, y);
    }
    area
}

/// Area under the precision-recall curve by the trapezoid rule over recall,
/// starting from (recall 0, precision 1). `None` when either class is absent.
pub fn pr_auc(preds: &PredictionSet) -> Option<f64> {
    let (points, p, n) = sweep(preds);
    if p == 0 || n == 0 {
        return None;
    }
    Some(trapezoid_pr(&points, p))
}

pub(crate) fn trapezoid_pr(points: &[(u64, u64)], p: u64) -> f64 {
    let (mut r0, mut p0, mut area) = (0.0, 1.0, 0.0);
    for &(tp, fp) in points {
        let r = tp as f64 / p as f64;
        let prec = tp as f64 / (tp + fp) as f64;
        area += (r - r0) * (prec + p0) / 2.0;
        (r0, p0) = (r, prec);
    }
    area
}

/// (x, y) points of the ROC and PR curves, for plotting.
pub fn curves(preds: &PredictionSet) -> Option<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    let (points, p, n) = sweep(preds);
    if p == 0 || n == 0 {
        return None;
    }
    let mut roc = vec![(0.0, 0.0)];
    let mut pr = vec![(0.0, 1.0)];
    for &(tp, fp) in &points {
        roc.push((fp as f64 / n as f64, tp as f64 / p as f64));
        pr.push((tp as f64 / p as f64, tp as f64 / (tp + fp) as f64));
    }
    Some((roc, pr))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub pr_auc: Option<f64>,
    pub roc_auc: Option<f64>,
    pub counts: Confusion,
    pub num_notes: usize,
    pub num_labels: usize,
}

pub fn evaluate(preds: &PredictionSet, threshold: f64) -> EvalReport {
    let c = confusion_at(preds, threshold);
    EvalReport {
        threshold,
        micro_precision: micro_precision(c.tp, c.fp),
        micro_recall: micro_recall(c.tp, c.fn_),
        micro_f1: micro_f1(c.tp, c.fp, c.fn_),
        pr_auc: pr_auc(preds),
        roc_auc: roc_auc(preds),
        counts: c,
        num_notes: preds.num_notes(),
        num_labels: preds.num_labels(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl EvalReport {
    /// `key=value` lines; missing AUCs are written as `NA`.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let c = &self.counts;
        let _ = writeln!(s, "threshold={:.6}", self.threshold);
        let _ = writeln!(s, "micro_precision={:.6}", self.micro_precision);
        let _ = writeln!(s, "micro_recall={:.6}", self.micro_recall);
        let _ = writeln!(s, "micro_f1={:.6}", self.micro_f1);
        let _ = writeln!(s, "pr_auc={}", opt(self.pr_auc));
        let _ = writeln!(s, "roc_auc={}", opt(self.roc_auc));
        let _ = writeln!(s, "tp={}\nfp={}\nfn={}\ntn={}", c.tp, c.fp, c.fn_, c.tn);
        let _ = writeln!(s, "notes={}\nlabels={}", self.num_notes, self.num_labels);
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "threshold", "micro F1", "precision", "recall", "PR-AUC", "ROC-AUC"
        );
        let _ = writeln!(
            s,
            "{:>10.2} {:>10.4} {:>10.4} {:>10.4} {:>10} {:>10}",
            self.threshold,
            self.micro_f1,
            self.micro_precision,
            self.micro_recall,
            self.pr_auc.map_or("NA".into(), |v| format!("{v:.4}")),
            self.roc_auc.map_or("NA".into(), |v| format!("{v:.4}")),
        );
        s
    }
}
