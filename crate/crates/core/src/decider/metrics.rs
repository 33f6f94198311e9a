use alloc::vec::Vec;

use super::model::Real;
use super::{DeciderError, DeciderModel, Label, PairInput};

/// Mean of `−ln p[label]` with `p` clamped to `[1e-12, 1]`.
pub fn cross_entropy_loss(probs: &[[f64; 2]], labels: &[Label]) -> Result<f64, DeciderError> {
    if probs.len() != labels.len() {
        return Err(DeciderError::LabelCount {
            inputs: probs.len(),
            labels: labels.len(),
        });
    }
    if probs.is_empty() {
        return Err(DeciderError::Empty);
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, l)| -libm::log(p[l.index()].clamp(1e-12, 1.0)))
        .sum();
    Ok(total / probs.len() as f64)
}

/// Binary confusion counts with Match as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_predictions(actual: &[Label], predicted: &[Label]) -> Self {
        let mut c = Self::default();
        for (&a, &p) in actual.iter().zip(predicted) {
            c.record(a, p);
        }
        c
    }

    pub fn record(&mut self, actual: Label, predicted: Label) {
        match (actual, predicted) {
            (Label::Match, Label::Match) => self.tp += 1,
            (Label::NotMatch, Label::Match) => self.fp += 1,
            (Label::Match, Label::NotMatch) => self.fn_ += 1,
            (Label::NotMatch, Label::NotMatch) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of samples whose true label is this class.
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    fn from_counts(tp: u64, fp: u64, fn_: u64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            support: tp + fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub matched: ClassMetrics,
    pub not_matched: ClassMetrics,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
    /// Set when one class never occurs in the true labels; its F1 is 0.
    pub missing_class: bool,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion) -> Self {
        let c = confusion;
        let matched = ClassMetrics::from_counts(c.tp, c.fp, c.fn_);
        let not_matched = ClassMetrics::from_counts(c.tn, c.fn_, c.fp);
        Self {
            macro_f1: (matched.f1 + not_matched.f1) / 2.0,
            accuracy: ratio(c.tp + c.tn, c.total()),
            missing_class: matched.support == 0 || not_matched.support == 0,
            matched,
            not_matched,
            confusion,
        }
    }

    pub fn class(&self, label: Label) -> &ClassMetrics {
        match label {
            Label::Match => &self.matched,
            Label::NotMatch => &self.not_matched,
        }
    }
}

/// Argmax predictions of `model` scored against `labels`.
pub fn evaluate<T: Real>(
    model: &DeciderModel<T>,
    inputs: &[PairInput],
    labels: &[Label],
) -> Result<EvalReport, DeciderError> {
    if inputs.is_empty() {
        return Err(DeciderError::Empty);
    }
    if inputs.len() != labels.len() {
        return Err(DeciderError::LabelCount {
            inputs: inputs.len(),
            labels: labels.len(),
        });
    }
    let probs = model.forward(inputs)?;
    let predicted: Vec<Label> = probs.iter().map(|p| Label::from_bool(p[1] > p[0])).collect();
    Ok(EvalReport::from_confusion(Confusion::from_predictions(labels, &predicted)))
}
