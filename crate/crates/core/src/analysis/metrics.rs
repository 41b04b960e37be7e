use serde::{Deserialize, Serialize};

use crate::error::{AenError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean loss when per-example losses were supplied, else 0.
    pub loss: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Set when nothing was predicted positive, so precision was reported as 0.
    pub precision_undefined: bool,
}

impl MetricsReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize, loss: f64) -> Self {
        let n = tp + fp + tn + fn_;
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        MetricsReport {
            n,
            accuracy: ratio(tp + tn, n),
            precision,
            recall,
            f1,
            loss,
            tp,
            fp,
            tn,
            fn_,
            precision_undefined: tp + fp == 0,
        }
    }
}

pub fn compute_metrics(predictions: &[u8], labels: &[u8], losses: Option<&[f64]>) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(AenError::DimensionMismatch {
            expected: labels.len(),
            found: predictions.len(),
        });
    }
    if predictions.is_empty() {
        return Err(AenError::domain("no predictions to score"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            (0, 1) => fn_ += 1,
            _ => return Err(AenError::domain(format!("labels must be 0 or 1, got ({p}, {l})"))),
        }
    }
    let loss = match losses {
        Some(ls) if ls.len() != labels.len() => {
            return Err(AenError::DimensionMismatch {
                expected: labels.len(),
                found: ls.len(),
            })
        }
        Some(ls) => ls.iter().sum::<f64>() / ls.len() as f64,
        None => 0.0,
    };
    Ok(MetricsReport::from_counts(tp, fp, tn, fn_, loss))
}


/// A published result row, kept for side-by-side reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub model: &'static str,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

const fn row(model: &'static str, accuracy: f64, precision: f64, recall: f64, f1: f64) -> ReferenceRow {
    ReferenceRow {
        model,
        accuracy,
        precision,
        recall,
        f1,
    }
}

/// Published test metrics (two decimals) on 5000 held-out generated pairs.
pub const REFERENCE_METRICS: &[ReferenceRow] = &[
    row("aen", 0.88, 0.63, 0.90, 0.74),
    row("llama-3.2-3b cot", 0.43, 0.24, 0.90, 0.38),
    row("llama-3.2-3b plain", 0.49, 0.27, 0.95, 0.42),
    row("llama-3.2-3b multishot", 0.84, 0.69, 0.31, 0.43),
    row("phi-3.5-mini cot", 0.71, 0.38, 0.90, 0.54),
    row("phi-3.5-mini plain", 0.65, 0.34, 0.88, 0.49),
    row("phi-3.5-mini multishot", 0.75, 0.42, 0.78, 0.54),
];
