//! The four-way tally and the accuracy metric.
//!
//! Reports split by ground truth (TP = genuinely vulnerable, FP = secure)
//! and by whether the model classified them correctly. Accuracy is
//! `(tp_correct + fp_correct) / total`. Per-class rates come along because
//! the aggregate hides asymmetric behavior between the two subsets.

use crate::reports::{Predicted, Verdict};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("verdict for unknown case `{case_id}`")]
    UnknownCase { case_id: String },
    #[error("accuracy undefined on zero classified reports")]
    EmptyCounts,
}

/// The four tallies: ground-truth TP and FP cases, each split into
/// correctly and incorrectly classified.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvaluationCounts {
    pub tp_correct: u64,
    pub fp_correct: u64,
    pub tp_incorrect: u64,
    pub fp_incorrect: u64,
}

impl EvaluationCounts {
    pub fn new(tp_correct: u64, fp_correct: u64, tp_incorrect: u64, fp_incorrect: u64) -> Self {
        EvaluationCounts {
            tp_correct,
            fp_correct,
            tp_incorrect,
            fp_incorrect,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp_correct + self.fp_correct + self.tp_incorrect + self.fp_incorrect
    }
}

/// Accuracy with per-class breakdown. A rate is NaN when its class is
/// empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub tp_rate: f64,
    pub fp_rate: f64,
    pub counts: EvaluationCounts,
}

/// Tallies verdicts against ground truth. Truth maps `case_id` to `true`
/// when the case is secure (the report is a false positive).
pub fn tally(
    verdicts: &[Verdict],
    truth: &BTreeMap<String, bool>,
) -> Result<EvaluationCounts, EvalError> {
    let mut c = EvaluationCounts::default();
    for v in verdicts {
        let is_fp = truth.get(&v.case_id).ok_or_else(|| EvalError::UnknownCase {
            case_id: v.case_id.clone(),
        })?;
        let predicted_fp = v.predicted == Predicted::FalsePositive;
        match (is_fp, predicted_fp) {
            (false, false) => c.tp_correct += 1,
            (false, true) => c.tp_incorrect += 1,
            (true, true) => c.fp_correct += 1,
            (true, false) => c.fp_incorrect += 1,
        }
    }
    Ok(c)
}

/// `(tp_correct + fp_correct) / (tp_correct + fp_correct + tp_incorrect +
/// fp_incorrect)`.
pub fn accuracy(c: &EvaluationCounts) -> Result<f64, EvalError> {
    if c.total() == 0 {
        return Err(EvalError::EmptyCounts);
    }
    Ok((c.tp_correct + c.fp_correct) as f64 / c.total() as f64)
}

/// One-pass accuracy straight off the verdict list, kept independent of
/// [`tally`] so the two routes can cross-check each other.
pub fn accuracy_direct(
    verdicts: &[Verdict],
    truth: &BTreeMap<String, bool>,
) -> Result<f64, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::EmptyCounts);
    }
    let mut correct = 0u64;
    for v in verdicts {
        let is_fp = truth.get(&v.case_id).ok_or_else(|| EvalError::UnknownCase {
            case_id: v.case_id.clone(),
        })?;
        if (v.predicted == Predicted::FalsePositive) == *is_fp {
            correct += 1;
        }
    }
    Ok(correct as f64 / verdicts.len() as f64)
}

pub fn metrics(c: &EvaluationCounts) -> Result<Metrics, EvalError> {
    Ok(Metrics {
        accuracy: accuracy(c)?,
        tp_rate: c.tp_correct as f64 / (c.tp_correct + c.tp_incorrect) as f64,
        fp_rate: c.fp_correct as f64 / (c.fp_correct + c.fp_incorrect) as f64,
        counts: *c,
    })
}

/// Per-family accuracy: `family -> (correct, total)`, families sorted.
/// Truth maps `case_id` to `(is_fp, family)`.
pub fn per_family_counts(
    verdicts: &[Verdict],
    truth: &BTreeMap<String, (bool, String)>,
) -> Result<BTreeMap<String, (u64, u64)>, EvalError> {
    let mut out: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for v in verdicts {
        let (is_fp, family) = truth.get(&v.case_id).ok_or_else(|| EvalError::UnknownCase {
            case_id: v.case_id.clone(),
        })?;
        let entry = out.entry(family.clone()).or_insert((0, 0));
        entry.1 += 1;
        if (v.predicted == Predicted::FalsePositive) == *is_fp {
            entry.0 += 1;
        }
    }
    Ok(out)
}
