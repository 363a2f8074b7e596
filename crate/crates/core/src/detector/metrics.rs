use serde::{Deserialize, Serialize};

use super::{Behavior, DetectorScores, InputType};
use crate::error::{Error, Result};

/// `2pr / (p + r)`, 0 when `p + r = 0`.
pub fn f1_from_pr(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `score >= threshold` per character.
pub fn threshold_decisions(scores: &DetectorScores, threshold: f64) -> Result<Vec<bool>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Validation(format!("threshold {threshold} not in (0, 1)")));
    }
    Ok(scores.0.iter().map(|&s| s >= threshold).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl DetectorMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
        let precision = ratio(tp, fp);
        let recall = ratio(tp, fn_);
        Self {
            precision,
            recall,
            f1: f1_from_pr(precision, recall),
            tp,
            fp,
            fn_,
        }
    }
}

/// Micro-averaged metrics over all characters of aligned decision/reference sequences.
pub fn evaluate_detector(decisions: &[Vec<bool>], references: &[Vec<bool>]) -> Result<DetectorMetrics> {
    if decisions.len() != references.len() {
        return Err(Error::Shape(format!(
            "{} decision sequences for {} references",
            decisions.len(),
            references.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (i, (d, r)) in decisions.iter().zip(references).enumerate() {
        if d.len() != r.len() {
            return Err(Error::Shape(format!("utterance {i}: {} decisions for {} references", d.len(), r.len())));
        }
        for (&p, &y) in d.iter().zip(r) {
            match (p, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(DetectorMetrics::from_counts(tp, fp, fn_))
}

/// One row of a detection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub behavior: Behavior,
    pub input_type: InputType,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MetricsRecord {
    pub fn new(behavior: Behavior, input_type: InputType, m: &DetectorMetrics) -> Self {
        Self {
            behavior,
            input_type,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
        }
    }
}
