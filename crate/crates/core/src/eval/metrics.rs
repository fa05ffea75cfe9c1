use std::fmt;

use num_traits::{FromPrimitive, Num, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Numeric type metrics are computed in. Implemented for every type with the
/// needed arithmetic, e.g. `f64`, `f32` and `Ratio<u64>`.
pub trait Scalar: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + fmt::Debug {}

impl<T> Scalar for T where T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + fmt::Debug {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassificationOutcome {
    TP,
    FP,
    FN,
    TN,
}

pub fn classify(predicted_positive: bool, actually_positive: bool) -> ClassificationOutcome {
    match (predicted_positive, actually_positive) {
        (true, true) => ClassificationOutcome::TP,
        (true, false) => ClassificationOutcome::FP,
        (false, true) => ClassificationOutcome::FN,
        (false, false) => ClassificationOutcome::TN,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self { tp, fn_, fp, tn }
    }

    pub fn record(&mut self, outcome: ClassificationOutcome) {
        match outcome {
            ClassificationOutcome::TP => self.tp += 1,
            ClassificationOutcome::FP => self.fp += 1,
            ClassificationOutcome::FN => self.fn_ += 1,
            ClassificationOutcome::TN => self.tn += 1,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fn_: self.fn_ + other.fn_,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
        }
    }

    pub fn actual_positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn actual_negatives(&self) -> u64 {
        self.fp + self.tn
    }

    pub fn total(&self) -> u64 {
        self.actual_positives() + self.actual_negatives()
    }
}

/// Precision, recall and F1; each is `None` when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary<F> {
    pub precision: Option<F>,
    pub recall: Option<F>,
    pub f1: Option<F>,
}

fn ratio<F: Scalar>(num: u64, den: u64) -> Option<F> {
    if den == 0 {
        return None;
    }
    Some(F::from_u64(num)? / F::from_u64(den)?)
}

pub fn metrics<F: Scalar>(c: &ConfusionCounts) -> MetricsSummary<F> {
    let precision = ratio::<F>(c.tp, c.tp + c.fp);
    let recall = ratio::<F>(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r != F::zero() => {
            let two = F::one() + F::one();
            Some(two * p * r / (p + r))
        }
        _ => None,
    };
    MetricsSummary { precision, recall, f1 }
}

/// Σtp / Σ(tp + fn) over all types; `None` when there are no positives.
pub fn overall_recall<F: Scalar>(per_type: &[ConfusionCounts]) -> Option<F> {
    let total = per_type.iter().fold(ConfusionCounts::default(), |a, c| a.merge(*c));
    ratio(total.tp, total.actual_positives())
}

/// A fraction as a percentage with one decimal, dropping a trailing `.0`:
/// 0.74 gives `74%`, 1/3 gives `33.3%`.
pub fn format_percent<F: Scalar>(value: F) -> String {
    let pct = value.to_f64().unwrap_or(f64::NAN) * 100.0;
    let text = format!("{pct:.1}");
    let text = text.strip_suffix(".0").unwrap_or(&text);
    format!("{text}%")
}

pub fn format_optional_percent<F: Scalar>(value: Option<F>) -> String {
    value.map_or_else(|| "-".to_string(), format_percent)
}
