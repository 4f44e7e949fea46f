//! ROC AUC and the high-sensitivity threshold behind the "very low risk" class.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SENSITIVITY: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub target_sensitivity: f64,
    pub achieved_sensitivity: f64,
    /// `None` when the calibration set has no negatives.
    pub achieved_specificity: Option<f64>,
    /// `None` when the calibration set is single-class.
    pub auc: Option<f64>,
    pub calibration_set_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskClass {
    VeryLowRisk,
    NotVeryLowRisk,
}

impl RiskClass {
    pub fn label(self) -> &'static str {
        match self {
            RiskClass::VeryLowRisk => "very low risk",
            RiskClass::NotVeryLowRisk => "not very low risk",
        }
    }
}

impl fmt::Display for RiskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn check_inputs(preds: &[f64], labels: &[u8]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Schema(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("non-finite prediction".into()));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Mann–Whitney concordance: P(pred_pos > pred_neg) with ties counting 0.5.
/// Computed from mid-ranks in O(n log n).
pub fn auc(preds: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(preds, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[a].total_cmp(&preds[b]));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && preds[order[j + 1]] == preds[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; tied block i..=j shares the mid-rank.
        let mid_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                positive_rank_sum += mid_rank;
            }
        }
        i = j + 1;
    }
    let (np, nn) = (positives as f64, negatives as f64);
    Ok((positive_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Largest τ in {positive predictions} ∪ {0} whose sensitivity (positive iff
/// pred ≥ τ) reaches `target`.
pub fn sensitivity_threshold(preds: &[f64], labels: &[u8], target: f64) -> Result<Calibration> {
    check_inputs(preds, labels)?;
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Calibration(format!("target sensitivity {target} outside [0, 1]")));
    }
    let mut positive_preds: Vec<f64> = preds
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&p, _)| p)
        .collect();
    if positive_preds.is_empty() {
        return Err(Error::Calibration("no positive labels to calibrate on".into()));
    }
    positive_preds.sort_by(|a, b| b.total_cmp(a));
    let total = positive_preds.len() as f64;
    let mut threshold = 0.0;
    // Walk candidates from the top; the first whose TPR reaches the target is
    // the largest qualifying one. TPR(τ) counts every positive with pred ≥ τ.
    let mut k = 0;
    while k < positive_preds.len() {
        let candidate = positive_preds[k];
        while k < positive_preds.len() && positive_preds[k] >= candidate {
            k += 1;
        }
        if k as f64 / total >= target {
            threshold = candidate;
            break;
        }
    }
    let (sensitivity, specificity) = rates(preds, labels, threshold);
    Ok(Calibration {
        threshold,
        target_sensitivity: target,
        achieved_sensitivity: sensitivity,
        achieved_specificity: specificity,
        auc: auc(preds, labels).ok(),
        calibration_set_size: preds.len(),
    })
}

/// (sensitivity, specificity) at τ with positive iff pred ≥ τ.
pub fn rates(preds: &[f64], labels: &[u8], threshold: f64) -> (f64, Option<f64>) {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &l) in preds.iter().zip(labels) {
        if l == 1 {
            pos += 1;
            tp += usize::from(p >= threshold);
        } else {
            neg += 1;
            tn += usize::from(p < threshold);
        }
    }
    let sens = if pos == 0 { 0.0 } else { tp as f64 / pos as f64 };
    let spec = (neg > 0).then(|| tn as f64 / neg as f64);
    (sens, spec)
}

/// Very low risk iff strictly below τ.
pub fn classify_risk(prob: f64, threshold: f64) -> RiskClass {
    if prob < threshold {
        RiskClass::VeryLowRisk
    } else {
        RiskClass::NotVeryLowRisk
    }
}
