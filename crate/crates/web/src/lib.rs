//! Browser bindings for three small pieces of `longdoc`: parameter accounting,
//! window planning for long inputs, and ROC / PR curves for pasted scores.
//!
//! Every export returns a JSON string. The `*_json` functions do the work and
//! are plain Rust so they can be tested natively.

use longdoc::encoder::{count_parameters, EncoderConfig};
use longdoc::label_attention::{attention_param_count, classifier_param_count};
use longdoc::long_context::{padded_len, plan_segments};
use longdoc::metrics::{best_threshold, curves, default_grid, evaluate, PredictionSet};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct ParamReport {
    encoder: u64,
    attention: u64,
    classifier: u64,
    total: u64,
}

#[derive(Serialize)]
struct Plan {
    len: usize,
    padded_len: usize,
    segments: Vec<(usize, usize)>,
    /// Owner window per real token.
    owner: Vec<usize>,
}

#[derive(Serialize)]
struct Curves {
    roc: Vec<(f64, f64)>,
    pr: Vec<(f64, f64)>,
    roc_auc: Option<f64>,
    pr_auc: Option<f64>,
    threshold: f64,
    micro_f1: f64,
    micro_precision: f64,
    micro_recall: f64,
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn param_counts_json(
    num_blocks: usize,
    hidden: usize,
    heads: usize,
    intermediate: usize,
    vocab_size: usize,
    num_labels: usize,
) -> Result<String, String> {
    let cfg = EncoderConfig {
        num_blocks,
        hidden,
        heads,
        intermediate,
        vocab_size,
        ..EncoderConfig::small_bert()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let encoder = count_parameters(&cfg);
    let attention = attention_param_count(hidden, num_labels);
    let classifier = classifier_param_count(hidden, num_labels);
    to_json(&ParamReport {
        encoder,
        attention,
        classifier,
        total: encoder + attention + classifier,
    })
}

pub fn segment_plan_json(len: usize, seg_len: usize, stride: usize) -> Result<String, String> {
    if len == 0 {
        return Err("length must be at least 1".into());
    }
    let padded = padded_len(len, seg_len, stride).map_err(|e| e.to_string())?;
    let plan = plan_segments(padded, seg_len, stride).map_err(|e| e.to_string())?;
    to_json(&Plan {
        len,
        padded_len: padded,
        segments: plan.segments,
        owner: plan.owner[..len].to_vec(),
    })
}

/// One `score,label` pair per line, label 0 or 1. Blank lines are skipped.
fn parse_pairs(text: &str) -> Result<(Vec<f64>, Vec<bool>), String> {
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || format!("line {}: expected `score,label`, got `{line}`", n + 1);
        let (s, y) = line.split_once(',').ok_or_else(bad)?;
        let s: f64 = s.trim().parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&s) {
            return Err(format!("line {}: score {s} outside [0, 1]", n + 1));
        }
        let y = match y.trim() {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        scores.push(s);
        truth.push(y);
    }
    Ok((scores, truth))
}

pub fn curves_json(pairs: &str) -> Result<String, String> {
    let (scores, truth) = parse_pairs(pairs)?;
    if scores.is_empty() {
        return Err("no score,label pairs".into());
    }
    let n = scores.len();
    let preds = PredictionSet::from_pairs(n, scores, truth).map_err(|e| e.to_string())?;
    let (threshold, _) = best_threshold(&preds, &default_grid()).map_err(|e| e.to_string())?;
    let report = evaluate(&preds, threshold);
    let (roc, pr) = curves(&preds).unwrap_or_default();
    to_json(&Curves {
        roc,
        pr,
        roc_auc: report.roc_auc,
        pr_auc: report.pr_auc,
        threshold,
        micro_f1: report.micro_f1,
        micro_precision: report.micro_precision,
        micro_recall: report.micro_recall,
    })
}

#[wasm_bindgen]
pub fn param_counts(
    num_blocks: usize,
    hidden: usize,
    heads: usize,
    intermediate: usize,
    vocab_size: usize,
    num_labels: usize,
) -> Result<String, JsValue> {
    param_counts_json(num_blocks, hidden, heads, intermediate, vocab_size, num_labels).map_err(JsValue::from)
}

#[wasm_bindgen]
pub fn segment_plan(len: usize, seg_len: usize, stride: usize) -> Result<String, JsValue> {
    segment_plan_json(len, seg_len, stride).map_err(JsValue::from)
}

#[wasm_bindgen]
pub fn metric_curves(pairs: &str) -> Result<String, JsValue> {
    curves_json(pairs).map_err(JsValue::from)
}
