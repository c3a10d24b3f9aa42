//! Multi-label evaluation: macro/sample ROC-AUC, instance/sample accuracy,
//! macro/sample F1 at a fixed threshold.
//!
//! Conventions:
//! - Instance accuracy is exact-match (subset) accuracy of the thresholded
//!   label vector; sample accuracy is the per-sample mean per-label accuracy.
//! - Labels that are all-positive or all-negative in the evaluated set are
//!   skipped for AUC with a logged warning, and the macro average
//!   renormalizes over the scored labels.
//! - F1 with an empty confusion denominator (no positives anywhere, none
//!   predicted) counts as 1.0: the empty label set was predicted perfectly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_auc: f64,
    pub sample_auc: f64,
    pub instance_acc: f64,
    pub sample_acc: f64,
    pub macro_f1: f64,
    pub sample_f1: f64,
}

impl Metrics {
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.macro_auc,
            self.sample_auc,
            self.instance_acc,
            self.sample_acc,
            self.macro_f1,
            self.sample_f1,
        ]
    }

    pub const NAMES: [&'static str; 6] = [
        "macro_auc",
        "sample_auc",
        "instance_acc",
        "sample_acc",
        "macro_f1",
        "sample_f1",
    ];
}

/// ROC-AUC by average ranks (Mann-Whitney). Ties get the midrank, which is
/// arithmetically identical to counting tied pairs as one half. Returns None
/// when the targets are degenerate (no positives or no negatives).
pub fn roc_auc(scores: &[f64], targets: &[u8]) -> Option<f64> {
    debug_assert_eq!(scores.len(), targets.len());
    let n_pos = targets.iter().filter(|&&t| t == 1).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // midrank of the tie group [i, j], 1-based ranks
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &order[i..=j] {
            if targets[k] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// F1 from a confusion count; empty denominator means the (empty) positive
/// set was predicted exactly.
fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Evaluate scores in [0,1] against multi-hot targets, both samples x labels
/// row-major.
pub fn evaluate(
    scores: &[f64],
    targets: &[u8],
    samples: usize,
    labels: usize,
    threshold: f64,
) -> Result<Metrics> {
    if scores.len() != samples * labels || targets.len() != samples * labels {
        return Err(Error::Shape {
            op: "evaluate",
            left: vec![samples, labels],
            right: vec![scores.len(), targets.len()],
        });
    }
    if samples == 0 || labels == 0 {
        return Err(Error::Input("evaluate needs at least one sample and label".into()));
    }
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Input(format!("scores must lie in [0,1], got {s}")));
        }
    }
    for &t in targets {
        if t > 1 {
            return Err(Error::Input(format!("targets must be multi-hot 0/1, got {t}")));
        }
    }

    // macro AUC over labels, skipping degenerate ones
    let mut auc_sum = 0.0;
    let mut auc_count = 0usize;
    for l in 0..labels {
        let col_scores: Vec<f64> = (0..samples).map(|s| scores[s * labels + l]).collect();
        let col_targets: Vec<u8> = (0..samples).map(|s| targets[s * labels + l]).collect();
        match roc_auc(&col_scores, &col_targets) {
            Some(a) => {
                auc_sum += a;
                auc_count += 1;
            }
            None => log::warn!("label {l}: degenerate targets, skipped for macro AUC"),
        }
    }
    let macro_auc = if auc_count > 0 {
        auc_sum / auc_count as f64
    } else {
        f64::NAN
    };

    // sample AUC over rows, skipping degenerate ones
    let mut sauc_sum = 0.0;
    let mut sauc_count = 0usize;
    for s in 0..samples {
        let row_scores = &scores[s * labels..(s + 1) * labels];
        let row_targets = &targets[s * labels..(s + 1) * labels];
        if let Some(a) = roc_auc(row_scores, row_targets) {
            sauc_sum += a;
            sauc_count += 1;
        }
    }
    let sample_auc = if sauc_count > 0 {
        sauc_sum / sauc_count as f64
    } else {
        f64::NAN
    };

    // thresholded metrics
    let pred = |s: usize, l: usize| -> u8 {
        if scores[s * labels + l] >= threshold {
            1
        } else {
            0
        }
    };

    let mut exact = 0usize;
    let mut sample_acc_sum = 0.0;
    let mut sample_f1_sum = 0.0;
    let mut tp = vec![0usize; labels];
    let mut fp = vec![0usize; labels];
    let mut fn_ = vec![0usize; labels];
    for s in 0..samples {
        let mut all_match = true;
        let mut correct = 0usize;
        let (mut stp, mut sfp, mut sfn) = (0usize, 0usize, 0usize);
        for l in 0..labels {
            let p = pred(s, l);
            let t = targets[s * labels + l];
            if p == t {
                correct += 1;
            } else {
                all_match = false;
            }
            match (p, t) {
                (1, 1) => {
                    tp[l] += 1;
                    stp += 1;
                }
                (1, 0) => {
                    fp[l] += 1;
                    sfp += 1;
                }
                (0, 1) => {
                    fn_[l] += 1;
                    sfn += 1;
                }
                _ => {}
            }
        }
        if all_match {
            exact += 1;
        }
        sample_acc_sum += correct as f64 / labels as f64;
        sample_f1_sum += f1_from_counts(stp, sfp, sfn);
    }
    let instance_acc = exact as f64 / samples as f64;
    let sample_acc = sample_acc_sum / samples as f64;
    let sample_f1 = sample_f1_sum / samples as f64;
    let macro_f1 = (0..labels)
        .map(|l| f1_from_counts(tp[l], fp[l], fn_[l]))
        .sum::<f64>()
        / labels as f64;

    Ok(Metrics {
        macro_auc,
        sample_auc,
        instance_acc,
        sample_acc,
        macro_f1,
        sample_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::numcore::rng::{stream, StreamTag};

    #[test]
    fn perfect_predictions_give_all_ones() {
        let targets = vec![1u8, 0, 1, 0, 0, 1, 1, 1];
        let scores: Vec<f64> = targets.iter().map(|&t| t as f64).collect();
        let m = evaluate(&scores, &targets, 2, 4, 0.5).unwrap();
        for v in m.as_array() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn anti_perfect_predictions() {
        let targets = vec![1u8, 0, 0, 1, 0, 1, 1, 0];
        let scores: Vec<f64> = targets.iter().map(|&t| 1.0 - t as f64).collect();
        let m = evaluate(&scores, &targets, 2, 4, 0.5).unwrap();
        assert_eq!(m.macro_auc, 0.0);
        assert_eq!(m.instance_acc, 0.0);
    }

    #[test]
    fn rejects_out_of_range_scores_and_targets() {
        assert!(evaluate(&[1.5, 0.0], &[1, 0], 1, 2, 0.5).is_err());
        assert!(evaluate(&[0.5, 0.0], &[2, 0], 1, 2, 0.5).is_err());
    }

    /// Brute-force reference: pairwise AUC counting and explicit confusion
    /// matrices; the evaluator must match it exactly.
    pub fn brute_force(
        scores: &[f64],
        targets: &[u8],
        samples: usize,
        labels: usize,
        threshold: f64,
    ) -> Metrics {
        let pair_auc = |sc: &[f64], tg: &[u8]| -> Option<f64> {
            let pos: Vec<f64> = sc
                .iter()
                .zip(tg)
                .filter(|(_, &t)| t == 1)
                .map(|(&s, _)| s)
                .collect();
            let neg: Vec<f64> = sc
                .iter()
                .zip(tg)
                .filter(|(_, &t)| t == 0)
                .map(|(&s, _)| s)
                .collect();
            if pos.is_empty() || neg.is_empty() {
                return None;
            }
            let mut num = 0.0;
            for &p in &pos {
                for &n in &neg {
                    if p > n {
                        num += 1.0;
                    } else if p == n {
                        num += 0.5;
                    }
                }
            }
            Some(num / (pos.len() * neg.len()) as f64)
        };

        let mut aucs = Vec::new();
        for l in 0..labels {
            let sc: Vec<f64> = (0..samples).map(|s| scores[s * labels + l]).collect();
            let tg: Vec<u8> = (0..samples).map(|s| targets[s * labels + l]).collect();
            if let Some(a) = pair_auc(&sc, &tg) {
                aucs.push(a);
            }
        }
        let macro_auc = aucs.iter().sum::<f64>() / aucs.len() as f64;

        let mut saucs = Vec::new();
        for s in 0..samples {
            if let Some(a) = pair_auc(
                &scores[s * labels..(s + 1) * labels],
                &targets[s * labels..(s + 1) * labels],
            ) {
                saucs.push(a);
            }
        }
        let sample_auc = saucs.iter().sum::<f64>() / saucs.len() as f64;

        let f1 = |tp: usize, fp: usize, fn_: usize| -> f64 {
            if 2 * tp + fp + fn_ == 0 {
                1.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            }
        };

        let mut exact = 0;
        let mut sacc = 0.0;
        let mut sf1 = 0.0;
        let mut label_f1 = vec![(0usize, 0usize, 0usize); labels];
        for s in 0..samples {
            let mut ok = 0;
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for l in 0..labels {
                let p = (scores[s * labels + l] >= threshold) as u8;
                let t = targets[s * labels + l];
                if p == t {
                    ok += 1;
                }
                match (p, t) {
                    (1, 1) => {
                        tp += 1;
                        label_f1[l].0 += 1;
                    }
                    (1, 0) => {
                        fp += 1;
                        label_f1[l].1 += 1;
                    }
                    (0, 1) => {
                        fn_ += 1;
                        label_f1[l].2 += 1;
                    }
                    _ => {}
                }
            }
            if ok == labels {
                exact += 1;
            }
            sacc += ok as f64 / labels as f64;
            sf1 += f1(tp, fp, fn_);
        }
        Metrics {
            macro_auc,
            sample_auc,
            instance_acc: exact as f64 / samples as f64,
            sample_acc: sacc / samples as f64,
            macro_f1: label_f1.iter().map(|&(a, b, c)| f1(a, b, c)).sum::<f64>()
                / labels as f64,
            sample_f1: sf1 / samples as f64,
        }
    }

    #[test]
    fn matches_brute_force_reference_on_random_cases() {
        let mut rng = stream(13, StreamTag::Init, &[100]);
        for case in 0..50 {
            let samples = 50;
            let labels = 4;
            // quantized scores create plenty of ties to exercise midranks
            let scores: Vec<f64> = (0..samples * labels)
                .map(|_| (rng.gen::<f64>() * 8.0).round() / 8.0)
                .collect();
            let targets: Vec<u8> = (0..samples * labels)
                .map(|_| (rng.gen::<f64>() < 0.3) as u8)
                .collect();
            let fast = evaluate(&scores, &targets, samples, labels, 0.5).unwrap();
            let slow = brute_force(&scores, &targets, samples, labels, 0.5);
            assert_eq!(fast.as_array(), slow.as_array(), "case {case}");
        }
    }

    #[test]
    fn auc_invariant_under_strictly_monotone_transform() {
        let mut rng = stream(14, StreamTag::Init, &[101]);
        let samples = 30;
        let labels = 3;
        let scores: Vec<f64> = (0..samples * labels).map(|_| rng.gen()).collect();
        let cubed: Vec<f64> = scores.iter().map(|&s| s * s * s).collect();
        let targets: Vec<u8> = (0..samples * labels)
            .map(|_| (rng.gen::<f64>() < 0.4) as u8)
            .collect();
        let a = evaluate(&scores, &targets, samples, labels, 0.5).unwrap();
        let b = evaluate(&cubed, &targets, samples, labels, 0.5).unwrap();
        assert_eq!(a.macro_auc, b.macro_auc);
        assert_eq!(a.sample_auc, b.sample_auc);
    }

    #[test]
    fn degenerate_label_skipped_with_renormalized_macro() {
        // second label all-positive: skipped; macro AUC is the first label's
        let scores = vec![0.9, 0.8, 0.1, 0.9, 0.8, 0.7, 0.2, 0.6];
        let targets = vec![1u8, 1, 0, 1, 1, 1, 0, 1];
        let m = evaluate(&scores, &targets, 4, 2, 0.5).unwrap();
        assert_eq!(m.macro_auc, 1.0);
    }
}
