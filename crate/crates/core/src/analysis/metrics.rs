use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical low-FPR operating point.
pub const LOW_FPR: f64 = 0.001;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub f1: f64,
    pub auc: f64,
    /// Keyed by the FPR target formatted with `{}`.
    pub tpr_at_fpr: BTreeMap<String, f64>,
    pub n_eval: usize,
}

impl MetricReport {
    /// Flat map with keys `accuracy`, `f1`, `auc`, `tpr_at_fpr_<target>`.
    pub fn to_map(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("accuracy".into(), self.accuracy);
        m.insert("f1".into(), self.f1);
        m.insert("auc".into(), self.auc);
        for (k, v) in &self.tpr_at_fpr {
            m.insert(format!("tpr_at_fpr_{k}"), *v);
        }
        m
    }
}

fn check_lengths(a: usize, b: usize, c: usize) -> Result<()> {
    if a != b || b != c {
        return Err(Error::ShapeMismatch(format!("metric inputs of lengths {a}, {b}, {c}")));
    }
    Ok(())
}

/// Binary metrics: accuracy and F1 from hard predictions, AUC and TPR at each
/// FPR target from scores (higher means more likely positive).
pub fn compute_metrics(
    scores: &[f64],
    predictions: &[usize],
    ground_truth: &[usize],
    fpr_targets: &[f64],
    positive_class: usize,
) -> Result<MetricReport> {
    check_lengths(scores.len(), predictions.len(), ground_truth.len())?;
    let truth: Vec<bool> = ground_truth.iter().map(|&g| g == positive_class).collect();
    let pred: Vec<bool> = predictions.iter().map(|&p| p == positive_class).collect();
    let auc = auc(scores, &truth)?;
    let mut tpr_at_fpr = BTreeMap::new();
    for &t in fpr_targets {
        tpr_at_fpr.insert(format!("{t}"), tpr_at_fpr_target(scores, &truth, t)?);
    }
    Ok(MetricReport {
        accuracy: accuracy(predictions, ground_truth),
        f1: binary_f1(&pred, &truth),
        auc,
        tpr_at_fpr,
        n_eval: scores.len(),
    })
}

pub fn accuracy(predictions: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predictions.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

/// F1 of the positive class; 0 when there are no true positives.
pub fn binary_f1(pred: &[bool], truth: &[bool]) -> f64 {
    let tp = pred.iter().zip(truth).filter(|(p, t)| **p && **t).count() as f64;
    let fp = pred.iter().zip(truth).filter(|(p, t)| **p && !**t).count() as f64;
    let fneg = pred.iter().zip(truth).filter(|(p, t)| !**p && **t).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fneg)
    }
}

/// Unweighted mean of per-class F1 over `0..num_classes`; classes absent from
/// both predictions and truth are skipped.
pub fn macro_f1(predictions: &[usize], truth: &[usize], num_classes: usize) -> f64 {
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..num_classes {
        let p: Vec<bool> = predictions.iter().map(|&x| x == c).collect();
        let t: Vec<bool> = truth.iter().map(|&x| x == c).collect();
        if !p.iter().any(|&b| b) && !t.iter().any(|&b| b) {
            continue;
        }
        total += binary_f1(&p, &t);
        present += 1;
    }
    if present == 0 {
        0.0
    } else {
        total / present as f64
    }
}

fn class_counts(truth: &[bool]) -> Result<(usize, usize)> {
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!("need both classes, got {pos} positive / {neg} negative")));
    }
    Ok((pos, neg))
}

/// Mann-Whitney rank statistic with tie-averaged ranks.
pub fn auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(truth)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps averaged ranks integral
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged: (i + j + 2) / 2
        let avg2 = (i + j + 2) as u64;
        for &k in &order[i..=j] {
            if truth[k] {
                rank_sum2 += avg2;
            }
        }
        i = j + 1;
    }
    let u2 = rank_sum2 as f64 - (pos * (pos + 1)) as f64;
    Ok(u2 / 2.0 / (pos as f64 * neg as f64))
}

/// Best TPR among thresholds whose FPR does not exceed `target`. Thresholds
/// sit at midpoints between distinct scores plus both infinities; a sample is
/// flagged positive when its score exceeds the threshold.
pub fn tpr_at_fpr_target(scores: &[f64], truth: &[bool], target: f64) -> Result<f64> {
    let (pos, neg) = class_counts(truth)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // threshold +inf flags nothing
    let mut best = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        if fp as f64 / neg as f64 <= target {
            best = f64::max(best, tp as f64 / pos as f64);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn brute_auc(scores: &[f64], truth: &[bool]) -> f64 {
        let mut count2 = 0u64;
        let (mut np, mut nn) = (0u64, 0u64);
        for (i, &ti) in truth.iter().enumerate() {
            if ti {
                np += 1;
            } else {
                nn += 1;
            }
            if !ti {
                continue;
            }
            for (j, &tj) in truth.iter().enumerate() {
                if tj {
                    continue;
                }
                if scores[i] > scores[j] {
                    count2 += 2;
                } else if scores[i] == scores[j] {
                    count2 += 1;
                }
            }
        }
        count2 as f64 / 2.0 / (np as f64 * nn as f64)
    }

    fn brute_tpr(scores: &[f64], truth: &[bool], target: f64) -> f64 {
        let mut distinct: Vec<f64> = scores.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let mut thresholds = vec![f64::NEG_INFINITY, f64::INFINITY];
        thresholds.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        let np = truth.iter().filter(|&&t| t).count() as f64;
        let nn = truth.len() as f64 - np;
        let mut best = 0.0;
        for t in thresholds {
            let tp = scores.iter().zip(truth).filter(|(s, y)| **s > t && **y).count() as f64;
            let fp = scores.iter().zip(truth).filter(|(s, y)| **s > t && !**y).count() as f64;
            if fp / nn <= target {
                best = f64::max(best, tp / np);
            }
        }
        best
    }

    #[test]
    fn perfect_separation() {
        let r = compute_metrics(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0], &[1, 1, 0, 0], &[LOW_FPR], 1).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.tpr_at_fpr["0.001"], 1.0);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn null_scores_give_half_auc() {
        let truth = [true, false, true, false, false];
        assert_eq!(auc(&[0.3; 5], &truth).unwrap(), 0.5);
    }

    #[test]
    fn four_negatives_need_zero_false_positives() {
        let scores = [0.9, 0.7, 0.8, 0.6, 0.5, 0.95];
        let truth = [true, true, false, false, false, false];
        // the top score is a negative, so no threshold flags a positive without it
        assert_eq!(tpr_at_fpr_target(&scores, &truth, LOW_FPR).unwrap(), 0.0);
        assert_eq!(tpr_at_fpr_target(&scores, &truth, LOW_FPR).unwrap(), brute_tpr(&scores, &truth, LOW_FPR));
    }

    #[test]
    fn degenerate_labels() {
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn matches_brute_force_oracles() {
        let mut rng = crate::seed::rng_for(17);
        for _ in 0..50 {
            let n = rng.random_range(2..=200);
            // coarse grid forces ties
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 / 19.0).collect();
            let mut truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            truth[0] = true;
            truth[1] = false;
            assert_eq!(auc(&scores, &truth).unwrap(), brute_auc(&scores, &truth));
            for t in [LOW_FPR, 0.01, 0.1, 0.5] {
                assert_eq!(tpr_at_fpr_target(&scores, &truth, t).unwrap(), brute_tpr(&scores, &truth, t));
            }
        }
    }

    #[test]
    fn macro_f1_averages_classes() {
        let f = macro_f1(&[0, 1, 2, 2], &[0, 1, 2, 1], 3);
        // class 0: 1.0, class 1: 2/3, class 2: 2/3
        assert!((f - (1.0 + 2.0 / 3.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
    }
}
