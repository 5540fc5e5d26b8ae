//! Multi-label classification metrics, always computed in f64.
//!
//! Labels with no positive (or for F1, also no predicted-positive)
//! examples cannot support the corresponding metric; they are skipped and
//! counted in the report rather than polluting the macro average.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LabelMetrics {
    pub f1: Option<f64>,
    pub auroc: Option<f64>,
    pub average_precision: Option<f64>,
    pub accuracy: f64,
    pub positives: usize,
    pub predicted_positives: usize,
    pub true_positives: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub samples: usize,
    pub labels: usize,
    pub threshold: f64,
    pub per_label: Vec<LabelMetrics>,
    /// Mean over labels that kept the metric; 0 when every label skipped.
    pub macro_f1: f64,
    pub macro_auroc: f64,
    pub macro_average_precision: f64,
    pub macro_accuracy: f64,
    pub f1_skipped: usize,
    pub auroc_skipped: usize,
    pub average_precision_skipped: usize,
}

fn validate_binary(targets: &[f64]) -> Result<()> {
    for (i, &t) in targets.iter().enumerate() {
        if t != 0.0 && t != 1.0 {
            return Err(Error::validation(format!(
                "target at {i} is {t}, expected 0 or 1"
            )));
        }
    }
    Ok(())
}

/// F1 for one label. `None` when there are neither actual nor predicted
/// positives (the score is undefined); all-negative predictions against
/// actual positives yield 0.
pub fn f1_binary(scores: &[f64], targets: &[f64], threshold: f64) -> Result<Option<f64>> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::dimension(format!(
            "f1: {} scores vs {} targets",
            scores.len(),
            targets.len()
        )));
    }
    validate_binary(targets)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fnc = 0usize;
    for (&s, &t) in scores.iter().zip(targets) {
        let pred = s > threshold;
        match (pred, t == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnc += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fnc;
    if denom == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * tp as f64 / denom as f64))
}

/// Area under the ROC curve by midranks; ties contribute one half.
/// `None` when either class is absent.
pub fn auroc(scores: &[f64], targets: &[f64]) -> Result<Option<f64>> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::dimension(format!(
            "auroc: {} scores vs {} targets",
            scores.len(),
            targets.len()
        )));
    }
    validate_binary(targets)?;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::numeric(format!("auroc: score at {i} is {s}")));
        }
    }
    let pos = targets.iter().filter(|&&t| t == 1.0).count();
    let neg = targets.len() - pos;
    if pos == 0 || neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    // Midranks: tied scores share the average of their 1-based positions.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if targets[k] == 1.0 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    let n = neg as f64;
    Ok(Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n)))
}

/// Step-wise average precision (no interpolation): mean over positives of
/// precision at their rank, under a descending stable sort (ties keep
/// input order). `None` when there are no positives.
pub fn average_precision(scores: &[f64], targets: &[f64]) -> Result<Option<f64>> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::dimension(format!(
            "average_precision: {} scores vs {} targets",
            scores.len(),
            targets.len()
        )));
    }
    validate_binary(targets)?;
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::numeric(format!(
                "average_precision: score at {i} is {s}"
            )));
        }
    }
    let pos = targets.iter().filter(|&&t| t == 1.0).count();
    if pos == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut cum_pos = 0usize;
    let mut sum = 0.0f64;
    for (k, &idx) in order.iter().enumerate() {
        if targets[idx] == 1.0 {
            cum_pos += 1;
            sum += cum_pos as f64 / (k + 1) as f64;
        }
    }
    Ok(Some(sum / pos as f64))
}

/// Fraction of correct thresholded predictions for one label.
pub fn accuracy_binary(scores: &[f64], targets: &[f64], threshold: f64) -> Result<f64> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::dimension(format!(
            "accuracy: {} scores vs {} targets",
            scores.len(),
            targets.len()
        )));
    }
    validate_binary(targets)?;
    let correct = scores
        .iter()
        .zip(targets)
        .filter(|(&s, &t)| (s > threshold) == (t == 1.0))
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Full multi-label report over row-major [samples x labels] buffers.
pub fn evaluate(
    probs: &[f64],
    targets: &[f64],
    samples: usize,
    labels: usize,
    threshold: f64,
) -> Result<MetricsReport> {
    if samples == 0 || labels == 0 {
        return Err(Error::validation(format!(
            "evaluate: empty input ({samples} samples, {labels} labels)"
        )));
    }
    if probs.len() != samples * labels || targets.len() != samples * labels {
        return Err(Error::dimension(format!(
            "evaluate: buffers {} / {} for {samples} x {labels}",
            probs.len(),
            targets.len()
        )));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::validation(format!(
            "evaluate: threshold {threshold} outside (0, 1)"
        )));
    }
    let mut per_label = Vec::with_capacity(labels);
    let column = |buf: &[f64], l: usize| -> Vec<f64> {
        (0..samples).map(|s| buf[s * labels + l]).collect()
    };
    for l in 0..labels {
        let s = column(probs, l);
        let t = column(targets, l);
        let positives = t.iter().filter(|&&v| v == 1.0).count();
        let predicted: Vec<bool> = s.iter().map(|&v| v > threshold).collect();
        let predicted_positives = predicted.iter().filter(|&&p| p).count();
        let true_positives = predicted
            .iter()
            .zip(&t)
            .filter(|(&p, &tv)| p && tv == 1.0)
            .count();
        per_label.push(LabelMetrics {
            f1: f1_binary(&s, &t, threshold)?,
            auroc: auroc(&s, &t)?,
            average_precision: average_precision(&s, &t)?,
            accuracy: accuracy_binary(&s, &t, threshold)?,
            positives,
            predicted_positives,
            true_positives,
        });
    }
    let macro_of = |get: &dyn Fn(&LabelMetrics) -> Option<f64>| -> (f64, usize) {
        let kept: Vec<f64> = per_label.iter().filter_map(get).collect();
        let skipped = labels - kept.len();
        if kept.is_empty() {
            (0.0, skipped)
        } else {
            (kept.iter().sum::<f64>() / kept.len() as f64, skipped)
        }
    };
    let (macro_f1, f1_skipped) = macro_of(&|m| m.f1);
    let (macro_auroc, auroc_skipped) = macro_of(&|m| m.auroc);
    let (macro_ap, ap_skipped) = macro_of(&|m| m.average_precision);
    let macro_accuracy =
        per_label.iter().map(|m| m.accuracy).sum::<f64>() / labels as f64;
    Ok(MetricsReport {
        samples,
        labels,
        threshold,
        per_label,
        macro_f1,
        macro_auroc,
        macro_average_precision: macro_ap,
        macro_accuracy,
        f1_skipped,
        auroc_skipped,
        average_precision_skipped: ap_skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_frozen_case() {
        // One discordant pair out of four.
        let got = auroc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0])
            .unwrap()
            .unwrap();
        assert_eq!(got, 0.75);
    }

    #[test]
    fn auroc_perfect_and_inverted() {
        let t = [0.0, 0.0, 1.0, 1.0];
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &t).unwrap().unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &t).unwrap().unwrap(), 0.0);
        // All scores tied: every pair contributes one half.
        assert_eq!(auroc(&[0.5, 0.5, 0.5, 0.5], &t).unwrap().unwrap(), 0.5);
    }

    #[test]
    fn auroc_degenerate_returns_none() {
        assert_eq!(auroc(&[0.1, 0.2], &[1.0, 1.0]).unwrap(), None);
        assert_eq!(auroc(&[0.1, 0.2], &[0.0, 0.0]).unwrap(), None);
    }

    #[test]
    fn f1_known_counts() {
        // tp=1 (0.9), fp=1 (0.8), fn=1 (0.2): F1 = 2/(2+1+1) = 0.5.
        let got = f1_binary(&[0.9, 0.8, 0.2, 0.1], &[1.0, 0.0, 1.0, 0.0], 0.5)
            .unwrap()
            .unwrap();
        assert_eq!(got, 0.5);
        // Nothing predicted, nothing actual: undefined.
        assert_eq!(
            f1_binary(&[0.1, 0.2], &[0.0, 0.0], 0.5).unwrap(),
            None
        );
        // Nothing predicted but positives exist: zero, not skipped.
        assert_eq!(
            f1_binary(&[0.1, 0.2], &[1.0, 1.0], 0.5).unwrap(),
            Some(0.0)
        );
    }

    #[test]
    fn average_precision_hand_case() {
        // Descending: 0.9(+) p=1, 0.8(-), 0.7(+) p=2/3 -> AP = (1 + 2/3)/2.
        let got = average_precision(&[0.7, 0.9, 0.8], &[1.0, 1.0, 0.0])
            .unwrap()
            .unwrap();
        assert!((got - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.1, 0.2], &[0.0, 0.0]).unwrap(), None);
    }

    #[test]
    fn accuracy_counts_both_classes() {
        let got = accuracy_binary(&[0.9, 0.1, 0.9, 0.1], &[1.0, 0.0, 0.0, 1.0], 0.5).unwrap();
        assert_eq!(got, 0.5);
    }

    #[test]
    fn evaluate_aggregates_and_skips() {
        // Two labels; second has no positives so AUROC/AP skip and F1
        // skips (nothing predicted positive either).
        let probs = [0.9, 0.1, 0.2, 0.2, 0.8, 0.3, 0.1, 0.1];
        let targets = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let r = evaluate(&probs, &targets, 4, 2, 0.5).unwrap();
        assert_eq!(r.per_label.len(), 2);
        assert_eq!(r.f1_skipped, 1);
        assert_eq!(r.auroc_skipped, 1);
        assert_eq!(r.average_precision_skipped, 1);
        assert_eq!(r.per_label[0].f1, Some(1.0));
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.macro_accuracy, 1.0);
        for m in &r.per_label {
            for v in [m.f1, m.auroc, m.average_precision, Some(m.accuracy)]
                .into_iter()
                .flatten()
            {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn non_binary_targets_rejected() {
        assert!(auroc(&[0.1], &[0.5]).is_err());
        assert!(f1_binary(&[0.1], &[2.0], 0.5).is_err());
        assert!(evaluate(&[0.1], &[0.5], 1, 1, 0.5).is_err());
    }

    #[test]
    fn bad_threshold_rejected() {
        let e = evaluate(&[0.1, 0.9], &[0.0, 1.0], 1, 2, 1.0);
        assert!(e.is_err());
    }
}
