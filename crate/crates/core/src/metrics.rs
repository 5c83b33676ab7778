//! Classification metrics, stratified folds and the metrics CSV files.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{substream, FOLDS};
use crate::tensor::Real;

pub const THRESHOLD: Real = 0.5;

/// Predicted class: for two classes, 1 iff `p[1] ≥ threshold`; otherwise the
/// argmax with ties going to the lower class.
pub fn predict_class(probs: &[Real], threshold: Real) -> usize {
    if probs.len() == 2 {
        return usize::from(probs[1] >= threshold);
    }
    let mut best = 0;
    for (c, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = c;
        }
    }
    best
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape("metrics", &[a], &[b]));
    }
    Ok(())
}

pub fn accuracy(probs: &[Vec<Real>], labels: &[usize], threshold: Real) -> Result<Real> {
    check_lengths(probs.len(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::Empty("accuracy"));
    }
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(p, &y)| predict_class(p, threshold) == y)
        .count();
    Ok(correct as Real / labels.len() as Real)
}

/// Mann-Whitney AUC: `(concordant + ½·tied) / (P·N)` over positive/negative
/// pairs. `None` when either side is empty.
pub fn auc_binary(scores: &[Real], positive: &[bool]) -> Option<Real> {
    let p = positive.iter().filter(|&&b| b).count() as u64;
    let n = positive.len() as u64 - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut concordant, mut tied, mut neg_below) = (0u64, 0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_g, mut neg_g) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                pos_g += 1;
            } else {
                neg_g += 1;
            }
            j += 1;
        }
        concordant += pos_g * neg_below;
        tied += pos_g * neg_g;
        neg_below += neg_g;
        i = j;
    }
    Some((concordant as Real + 0.5 * tied as Real) / (p * n) as Real)
}

/// Binary: AUC of `p[1]`. Multi-class: mean of one-vs-rest AUCs over the classes
/// for which it is defined. `None` when no class has both positives and negatives.
pub fn auc(probs: &[Vec<Real>], labels: &[usize]) -> Result<Option<Real>> {
    check_lengths(probs.len(), labels.len())?;
    let c = probs.first().map_or(2, Vec::len);
    if c == 2 {
        let s: Vec<Real> = probs.iter().map(|p| p[1]).collect();
        let pos: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        return Ok(auc_binary(&s, &pos));
    }
    let per_class: Vec<Real> = (0..c)
        .filter_map(|k| {
            let s: Vec<Real> = probs.iter().map(|p| p[k]).collect();
            let pos: Vec<bool> = labels.iter().map(|&y| y == k).collect();
            auc_binary(&s, &pos)
        })
        .collect();
    if per_class.is_empty() {
        return Ok(None);
    }
    Ok(Some(per_class.iter().sum::<Real>() / per_class.len() as Real))
}

fn f1_for(preds: &[usize], labels: &[usize], class: usize) -> Real {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &y) in preds.iter().zip(labels) {
        match (p == class, y == class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as Real / (2 * tp + fp + fn_) as Real
}

/// Binary: F1 of class 1. Multi-class: macro F1 over the classes that occur in
/// either `labels` or `preds`. Zero divisions count as 0.
pub fn f1(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Real> {
    check_lengths(preds.len(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::Empty("f1"));
    }
    if n_classes == 2 {
        return Ok(f1_for(preds, labels, 1));
    }
    let present: Vec<usize> = (0..n_classes)
        .filter(|&k| preds.contains(&k) || labels.contains(&k))
        .collect();
    Ok(present.iter().map(|&k| f1_for(preds, labels, k)).sum::<Real>() / present.len() as Real)
}

/// Stratified fold id for every bag: each class is shuffled with the `folds`
/// substream of `seed` and dealt round-robin, continuing where the previous
/// class stopped so fold sizes stay balanced.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = vec![0; labels.len()];
    let mut next = 0;
    for c in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut substream(seed, FOLDS, c as u64));
        for i in members {
            out[i] = next;
            next = (next + 1) % folds;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagPrediction {
    pub bag_id: String,
    pub label: usize,
    pub probs: Vec<Real>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub accuracy: Real,
    pub auc: Option<Real>,
    pub f1: Real,
    pub predictions: Vec<BagPrediction>,
}

impl FoldReport {
    pub fn from_predictions(fold: usize, predictions: Vec<BagPrediction>, n_classes: usize) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::Empty("fold report"));
        }
        let probs: Vec<Vec<Real>> = predictions.iter().map(|p| p.probs.clone()).collect();
        let labels: Vec<usize> = predictions.iter().map(|p| p.label).collect();
        let preds: Vec<usize> = probs.iter().map(|p| predict_class(p, THRESHOLD)).collect();
        Ok(Self {
            fold,
            accuracy: accuracy(&probs, &labels, THRESHOLD)?,
            auc: auc(&probs, &labels)?,
            f1: f1(&preds, &labels, n_classes)?,
            predictions,
        })
    }
}

/// Mean and population standard deviation of one metric across folds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: Real,
    pub std: Real,
}

pub fn mean_std(values: &[Real]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as Real;
    let mean = values.iter().sum::<Real>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n;
    Some(MeanStd { mean, std: var.sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub accuracy: MeanStd,
    /// Over the folds where AUC was defined.
    pub auc: Option<MeanStd>,
    pub f1: MeanStd,
}

pub fn summarize(reports: &[FoldReport]) -> Result<Summary> {
    let acc: Vec<Real> = reports.iter().map(|r| r.accuracy).collect();
    let auc: Vec<Real> = reports.iter().filter_map(|r| r.auc).collect();
    let f1: Vec<Real> = reports.iter().map(|r| r.f1).collect();
    Ok(Summary {
        accuracy: mean_std(&acc).ok_or(Error::Empty("summarize"))?,
        auc: mean_std(&auc),
        f1: mean_std(&f1).ok_or(Error::Empty("summarize"))?,
    })
}

fn fmt_opt(v: Option<Real>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

/// `fold,accuracy,auc,f1` rows, then `mean` and `std` rows (population std).
/// Undefined AUCs are written as `NA`.
pub fn metrics_csv(reports: &[FoldReport]) -> Result<String> {
    let mut s = String::from("fold,accuracy,auc,f1\n");
    for r in reports {
        writeln!(s, "{},{:.6},{},{:.6}", r.fold, r.accuracy, fmt_opt(r.auc), r.f1).unwrap();
    }
    let sum = summarize(reports)?;
    writeln!(
        s,
        "mean,{:.6},{},{:.6}",
        sum.accuracy.mean,
        fmt_opt(sum.auc.map(|a| a.mean)),
        sum.f1.mean
    )
    .unwrap();
    writeln!(
        s,
        "std,{:.6},{},{:.6}",
        sum.accuracy.std,
        fmt_opt(sum.auc.map(|a| a.std)),
        sum.f1.std
    )
    .unwrap();
    Ok(s)
}

/// `bag_id,label,prob_0,…,prob_{C−1}`.
pub fn predictions_csv(predictions: &[BagPrediction], n_classes: usize) -> String {
    let mut s = String::from("bag_id,label");
    for c in 0..n_classes {
        write!(s, ",prob_{c}").unwrap();
    }
    s.push('\n');
    for p in predictions {
        write!(s, "{},{}", p.bag_id, p.label).unwrap();
        for v in &p.probs {
            write!(s, ",{v:.9}").unwrap();
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_boundary_predicts_positive() {
        assert_eq!(predict_class(&[0.5, 0.5], THRESHOLD), 1);
        assert_eq!(predict_class(&[0.6, 0.4], THRESHOLD), 0);
        assert_eq!(predict_class(&[0.4, 0.4, 0.2], THRESHOLD), 0);
        assert_eq!(predict_class(&[0.2, 0.4, 0.4], THRESHOLD), 1);
        let probs = vec![vec![0.5, 0.5], vec![0.9, 0.1]];
        assert_eq!(accuracy(&probs, &[1, 0], THRESHOLD).unwrap(), 1.0);
        assert_eq!(accuracy(&probs, &[0, 0], THRESHOLD).unwrap(), 0.5);
    }

    #[test]
    fn auc_closed_forms() {
        assert_eq!(auc_binary(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(auc_binary(&[0.3; 5], &[true, false, true, false, false]), Some(0.5));
        assert_eq!(auc_binary(&[0.3, 0.4], &[true, true]), None);
        let three = vec![vec![0.2, 0.3, 0.5]; 3];
        assert_eq!(auc(&three, &[0, 0, 0]).unwrap(), None);
    }

    #[test]
    fn f1_rules() {
        assert_eq!(f1(&[0, 1, 1], &[0, 1, 1], 2).unwrap(), 1.0);
        assert_eq!(f1(&[0, 0, 0], &[0, 1, 1], 2).unwrap(), 0.0);
        // confusion: tp=2 fp=1 fn=1 → 2·2/(4+1+1)
        let v = f1(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0], 2).unwrap();
        assert!((v - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn macro_f1_matches_hand_computation() {
        let preds = [0, 1, 2, 2, 1, 0, 2];
        let labels = [0, 1, 1, 2, 2, 0, 2];
        // class 0: tp2 fp0 fn0 → 1; class 1: tp1 fp1 fn1 → 0.5; class 2: tp2 fp1 fn1 → 4/6
        let want = (1.0 + 0.5 + 4.0 / 6.0) / 3.0;
        assert!((f1(&preds, &labels, 3).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn folds_balanced() {
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let f = stratified_folds(&labels, 5, 1).unwrap();
        for k in 0..5 {
            assert_eq!(f.iter().filter(|&&x| x == k).count(), 2);
        }
        assert_eq!(f, stratified_folds(&labels, 5, 1).unwrap());
        assert!(stratified_folds(&labels, 1, 1).is_err());
    }

    #[test]
    fn mean_std_closed_form() {
        let m = mean_std(&[0.8, 0.9]).unwrap();
        assert!((m.mean - 0.85).abs() < 1e-15);
        assert!((m.std - 0.05).abs() < 1e-15);
        assert!(mean_std(&[]).is_none());
    }

    #[test]
    fn csv_layout() {
        let preds = vec![
            BagPrediction {
                bag_id: "a".into(),
                label: 1,
                probs: vec![0.25, 0.75],
            },
            BagPrediction {
                bag_id: "b".into(),
                label: 0,
                probs: vec![0.5, 0.5],
            },
        ];
        let r = FoldReport::from_predictions(0, preds.clone(), 2).unwrap();
        assert_eq!(r.accuracy, 0.5);
        let csv = metrics_csv(&[r]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "fold,accuracy,auc,f1");
        assert_eq!(lines[1], "0,0.500000,1.000000,0.666667");
        assert!(lines[2].starts_with("mean,"));
        assert_eq!(lines[3], "std,0.000000,0.000000,0.000000");
        let p = predictions_csv(&preds, 2);
        assert_eq!(p.lines().next().unwrap(), "bag_id,label,prob_0,prob_1");
        assert_eq!(p.lines().nth(1).unwrap(), "a,1,0.250000000,0.750000000");
        assert!(FoldReport::from_predictions(0, vec![], 2).is_err());
    }
}
